"""Separable multilevel 2D discrete wavelet transform for feature planes.

Supports the Haar bank and four biorthogonal spline banks. Planes are
``(side, side, channels)`` arrays (a trailing channel axis is optional);
each channel transforms independently. One analysis step splits a plane
into four half-size bands:

- ``ll``: lowpass along both axes,
- ``lh``: highpass along axis 0 (responds to horizontal edges),
- ``hl``: highpass along axis 1 (responds to vertical edges),
- ``hh``: highpass along both axes.

Boundary rule: whole-sample symmetric (mirror) extension. The synthesis
side extends each band with the matching mirrored symmetry, which makes
analysis followed by synthesis an exact identity on even-length signals
(non-expansive perfect reconstruction). The Haar bank never reaches past
a boundary, so the rule is vacuous there.

Normalization: the single-step pair ``dwt2``/``idwt2`` uses the classical
filter convention (every lowpass sums to sqrt(2), so one analysis step
scales a constant plane by 2). The multilevel pyramid functions
(``decompose``/``reconstruct``/``reconstruct_adjoint``) rescale each step
by an exact power of two — analysis outputs by 0.5, synthesis outputs by
2.0 — so that a constant plane keeps its amplitude at *every* depth: the
root lowpass band approximates a local average of the plane, and a
partial-depth reconstruction is an amplitude-consistent, lower-resolution
version of the full one. This makes ``append_level`` (which must leave
existing coefficients untouched) also leave the *rendered signal* of the
previously covered band unchanged up to smooth upsampling, rather than
halving it, and lets renders at different depths share coefficients
meaningfully. Because the per-step factors are powers of two, they are
exact in binary floating point and do not loosen the perfect-
reconstruction identity.

All transforms compute in float64 regardless of input dtype.
"""
from dataclasses import dataclass, field

import numpy as np

from ._kernels import active as _k

__all__ = [
    "FilterBank", "WaveletPyramid", "DetailBands", "FILTER_BANKS",
    "get_filter_bank", "dwt2", "idwt2", "decompose", "reconstruct",
    "append_level", "idwt2_adjoint", "reconstruct_adjoint",
]


@dataclass(frozen=True)
class FilterBank:
    """A perfect-reconstruction analysis/synthesis filter quadruple.

    Coefficient sequences are stored zero-padded to even length; for the
    symmetric odd-length banks the pad is a single leading zero and the
    symmetry center sits at index ``len // 2``.
    """
    name: str
    analysis_lo: tuple
    analysis_hi: tuple
    synthesis_lo: tuple
    synthesis_hi: tuple
    # True for the odd-length symmetric banks (center-aligned phases);
    # False for causal even-length banks (Haar).
    odd_symmetric: bool = True


def _pad_even(seq):
    """Prepend one zero when the sequence length is odd."""
    return tuple(seq) if len(seq) % 2 == 0 else (0.0,) + tuple(seq)


# Spline-family banks: the synthesis lowpass is a binomial (B-spline)
# filter; the analysis lowpass is its dual completing the perfect-
# reconstruction identity; highpass filters follow by modulation
# g[n] = (-1)^n h[n] of the opposite lowpass. Tests re-derive every
# sequence from that construction.
_HAAR_LO = (0.7071067811865475, 0.7071067811865475)
_HAAR_HI = (0.7071067811865475, -0.7071067811865475)

_B22_A_LO = (-0.1767766952966369, 0.3535533905932738, 1.0606601717798214,
             0.3535533905932738, -0.1767766952966369)
_B22_S_LO = (0.3535533905932738, 0.7071067811865476, 0.3535533905932738)

_B26_A_LO = (-0.006905339660024878, 0.013810679320049757, 0.046956309688169176,
             -0.10772329869638811, -0.16987135563661201, 0.4474660099696121,
             0.966747552403483, 0.4474660099696121, -0.16987135563661201,
             -0.10772329869638811, 0.046956309688169176, 0.013810679320049757,
             -0.006905339660024878)
_B26_S_LO = _B22_S_LO

_B44_A_LO = (0.037828455506995394, -0.023849465019380005, -0.11062440441842308,
             0.3774028556126539, 0.8526986790094032, 0.3774028556126539,
             -0.11062440441842308, -0.023849465019380005, 0.037828455506995394)
_B44_S_LO = (-0.06453888262893849, -0.04068941760955851, 0.41809227322221243,
             0.7884856164056647, 0.41809227322221243, -0.04068941760955851,
             -0.06453888262893849)

_B68_A_LO = (0.001908831736485026, -0.001914286129080888, -0.016990639867607113,
             0.011934565279726672, 0.04973290349093757, -0.07726317316721125,
             -0.0940592034957612, 0.42079628460984037, 0.8259229974584427,
             0.4207962846098409, -0.09405920349576087, -0.07726317316721099,
             0.04973290349093761, 0.011934565279726646, -0.01699063986760712,
             -0.001914286129080888, 0.001908831736485026)
_B68_S_LO = (0.014426282505622279, 0.014467504896774125, -0.07872200106266897,
             -0.04036797903038232, 0.41784910915032053, 0.7589077294537637,
             0.41784910915032053, -0.04036797903038237, -0.07872200106266894,
             0.01446750489677412, 0.014426282505622279)


def _modulate(lo):
    """Highpass by alternating signs around the symmetry center."""
    alpha = (len(lo) - 1) // 2
    return tuple(((-1.0) ** (i - alpha)) * v for i, v in enumerate(lo))


def _bior(name, a_lo, s_lo):
    return FilterBank(
        name=name,
        analysis_lo=_pad_even(a_lo),
        analysis_hi=_pad_even(_modulate(s_lo)),
        synthesis_lo=_pad_even(s_lo),
        synthesis_hi=_pad_even(_modulate(a_lo)),
        odd_symmetric=True,
    )


FILTER_BANKS = {
    "haar": FilterBank("haar", _HAAR_LO, _HAAR_HI, _HAAR_LO, _HAAR_HI,
                       odd_symmetric=False),
    "bior2.2": _bior("bior2.2", _B22_A_LO, _B22_S_LO),
    "bior2.6": _bior("bior2.6", _B26_A_LO, _B26_S_LO),
    "bior4.4": _bior("bior4.4", _B44_A_LO, _B44_S_LO),
    "bior6.8": _bior("bior6.8", _B68_A_LO, _B68_S_LO),
}


def get_filter_bank(name):
    """Look up a bank by name ('haar', 'bior2.2', 'bior2.6', 'bior4.4',
    'bior6.8'); accepts a FilterBank and returns it unchanged."""
    if isinstance(name, FilterBank):
        return name
    key = str(name).lower()
    if key not in FILTER_BANKS:
        raise ValueError(
            f"unknown filter bank {name!r}; choose from {sorted(FILTER_BANKS)}")
    return FILTER_BANKS[key]


def _strip(seq):
    """Effective (odd-length) support of a stored even-length sequence."""
    arr = np.asarray(seq, dtype=np.float64)
    if len(arr) % 2 == 0 and arr[0] == 0.0:
        return arr[1:]
    return arr


@dataclass(frozen=True)
class _Geometry:
    """Extension pads, phase starts and crop offsets for one bank."""
    h_a: np.ndarray
    g_a: np.ndarray
    h_s: np.ndarray
    g_s: np.ndarray
    pad_a: int
    start_c: int
    start_d: int
    pad_s: int
    off_c: int
    off_d: int


_GEOMETRY_CACHE = {}


def _geometry(bank):
    geo = _GEOMETRY_CACHE.get(bank.name)
    if geo is not None:
        return geo
    if bank.odd_symmetric:
        h_a, g_a = _strip(bank.analysis_lo), _strip(bank.analysis_hi)
        h_s, g_s = _strip(bank.synthesis_lo), _strip(bank.synthesis_hi)
        ah = (len(h_a) - 1) // 2
        ag = (len(g_a) - 1) // 2
        bh = (len(h_s) - 1) // 2
        bg = (len(g_s) - 1) // 2
        pad_a = max(ah, ag)
        pad_s = max(bh, bg) // 2 + 2
        geo = _Geometry(h_a, g_a, h_s, g_s, pad_a,
                        start_c=pad_a - ah, start_d=pad_a - ag + 1,
                        pad_s=pad_s, off_c=2 * pad_s + bh,
                        off_d=2 * pad_s + bg - 1)
    else:
        h_a = np.asarray(bank.analysis_lo, dtype=np.float64)
        g_a = np.asarray(bank.analysis_hi, dtype=np.float64)
        h_s = np.asarray(bank.synthesis_lo, dtype=np.float64)
        g_s = np.asarray(bank.synthesis_hi, dtype=np.float64)
        geo = _Geometry(h_a, g_a, h_s, g_s, pad_a=0, start_c=0, start_d=0,
                        pad_s=0, off_c=0, off_d=0)
    _GEOMETRY_CACHE[bank.name] = geo
    return geo


def _ext_indices(m, p, left, right):
    """Index map realizing symmetric extension by ``p`` samples per side.
    'reflect' mirrors about the edge sample (not repeated); 'symmetric'
    mirrors about the edge (edge repeated)."""
    mid = np.arange(m)
    if p == 0:
        return mid
    if p >= m:
        raise ValueError(f"side {m} too small for extension pad {p}")
    lft = np.arange(p, 0, -1) if left == "reflect" else np.arange(p - 1, -1, -1)
    rgt = (np.arange(m - 2, m - 2 - p, -1) if right == "reflect"
           else np.arange(m - 1, m - 1 - p, -1))
    return np.concatenate([lft, mid, rgt])


def _as3d(plane):
    arr = np.asarray(plane, dtype=np.float64)
    if arr.ndim == 2:
        return arr[:, :, None], True
    if arr.ndim == 3:
        return arr, False
    raise ValueError(f"expected a 2D or 3D plane, got shape {arr.shape}")


def _flat2d(arr):
    """(m, ...) -> contiguous (m, K)."""
    return np.ascontiguousarray(arr.reshape(arr.shape[0], -1))


def _analyze_axis0(x, geo):
    m = x.shape[0]
    if m % 2 != 0:
        raise ValueError(f"side {m} is odd; analysis needs even sides")
    if m < geo.pad_a + 2:
        raise ValueError(f"side {m} shorter than the filter support needs")
    idx = _ext_indices(m, geo.pad_a, "reflect", "reflect")
    xe = _flat2d(x[idx])
    lo = _k.corr_down(xe, geo.h_a, geo.start_c, m // 2)
    hi = _k.corr_down(xe, geo.g_a, geo.start_d, m // 2)
    shape = (m // 2,) + x.shape[1:]
    return lo.reshape(shape), hi.reshape(shape)


def _synth_axis0(lo, hi, geo):
    m = lo.shape[0]
    n = 2 * m
    if geo.pad_s > 0 and m < geo.pad_s + 1:
        raise ValueError(f"band side {m} too small for synthesis extension")
    idx_c = _ext_indices(m, geo.pad_s, "reflect", "symmetric")
    idx_d = _ext_indices(m, geo.pad_s, "symmetric", "reflect")
    ce = _flat2d(lo[idx_c])
    de = _flat2d(hi[idx_d])
    xc = _k.up_conv(ce, geo.h_s, geo.off_c, n)
    xd = _k.up_conv(de, geo.g_s, geo.off_d, n)
    return (xc + xd).reshape((n,) + lo.shape[1:])


def _synth_axis0_adjoint(g, geo):
    n = g.shape[0]
    m = n // 2
    me = m + 2 * geo.pad_s
    g2 = _flat2d(g)
    ce = _k.up_conv_adj(g2, geo.h_s, geo.off_c, me)
    de = _k.up_conv_adj(g2, geo.g_s, geo.off_d, me)
    idx_c = _ext_indices(m, geo.pad_s, "reflect", "symmetric")
    idx_d = _ext_indices(m, geo.pad_s, "symmetric", "reflect")
    tail = g.shape[1:]
    g_lo = np.zeros((m,) + tail)
    g_hi = np.zeros((m,) + tail)
    np.add.at(g_lo, idx_c, ce.reshape((me,) + tail))
    np.add.at(g_hi, idx_d, de.reshape((me,) + tail))
    return g_lo, g_hi


def _swap(arr):
    """Exchange the two spatial axes of a (h, w, c) array."""
    return np.ascontiguousarray(np.swapaxes(arr, 0, 1))


def dwt2(plane, filter_bank):
    """One analysis step: plane -> (ll, lh, hl, hh) half-size bands."""
    bank = get_filter_bank(filter_bank)
    geo = _geometry(bank)
    arr, was2d = _as3d(plane)
    h, w = arr.shape[:2]
    if h != w:
        raise ValueError(f"plane must be square, got {h}x{w}")
    # axis 1 first: lo/hi with respect to the horizontal direction
    lo1, hi1 = _analyze_axis0(_swap(arr), geo)
    lo1, hi1 = _swap(lo1), _swap(hi1)
    ll, lh = _analyze_axis0(lo1, geo)
    hl, hh = _analyze_axis0(hi1, geo)
    if was2d:
        return ll[:, :, 0], lh[:, :, 0], hl[:, :, 0], hh[:, :, 0]
    return ll, lh, hl, hh


def _check_bands(ll, lh, hl, hh):
    shapes = {b.shape for b in (ll, lh, hl, hh)}
    if len(shapes) != 1:
        raise ValueError(f"band shapes differ: {sorted(shapes)}")


def idwt2(ll, lh, hl, hh, filter_bank):
    """One synthesis step: four bands -> double-size plane."""
    bank = get_filter_bank(filter_bank)
    geo = _geometry(bank)
    bands = [_as3d(b) for b in (ll, lh, hl, hh)]
    was2d = bands[0][1]
    ll, lh, hl, hh = (b[0] for b in bands)
    _check_bands(ll, lh, hl, hh)
    lo1 = _synth_axis0(ll, lh, geo)
    hi1 = _synth_axis0(hl, hh, geo)
    out = _swap(_synth_axis0(_swap(lo1), _swap(hi1), geo))
    return out[:, :, 0] if was2d else out


def idwt2_adjoint(grad_plane, filter_bank):
    """Exact adjoint of ``idwt2``: plane-shaped gradient -> band gradients."""
    bank = get_filter_bank(filter_bank)
    geo = _geometry(bank)
    arr, was2d = _as3d(grad_plane)
    g_lo1, g_hi1 = _synth_axis0_adjoint(_swap(arr), geo)
    g_lo1, g_hi1 = _swap(g_lo1), _swap(g_hi1)
    g_ll, g_lh = _synth_axis0_adjoint(g_lo1, geo)
    g_hl, g_hh = _synth_axis0_adjoint(g_hi1, geo)
    if was2d:
        return g_ll[:, :, 0], g_lh[:, :, 0], g_hl[:, :, 0], g_hh[:, :, 0]
    return g_ll, g_lh, g_hl, g_hh


@dataclass
class DetailBands:
    """The three highpass bands of one pyramid level."""
    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray

    def __iter__(self):
        return iter((self.lh, self.hl, self.hh))


@dataclass
class WaveletPyramid:
    """Multilevel wavelet coefficients of one feature plane.

    ``ll`` is the root lowpass band of side ``n_ll``; ``levels[i]`` holds
    the detail bands of side ``n_ll * 2**i``. Reconstruction of all
    ``depth`` levels yields a plane of side ``n_ll * 2**depth``.

    Coefficients are stored amplitude-normalized (see the module
    docstring): the root band carries plane-scale values, and the same
    stored numbers describe the same signal regardless of how many finer
    levels exist above them.
    """
    ll: np.ndarray
    levels: list = field(default_factory=list)
    filter: FilterBank = FILTER_BANKS["bior6.8"]

    @property
    def n_ll(self):
        return self.ll.shape[0]

    @property
    def depth(self):
        return len(self.levels)

    @property
    def side(self):
        return self.n_ll * (2 ** self.depth)

    @property
    def channels(self):
        return 1 if self.ll.ndim == 2 else self.ll.shape[2]

    def validate(self):
        if self.ll.shape[0] != self.ll.shape[1]:
            raise ValueError(f"ll must be square, got {self.ll.shape}")
        for i, bands in enumerate(self.levels):
            want = (self.n_ll * (2 ** i),) * 2 + self.ll.shape[2:]
            for name, band in zip(("lh", "hl", "hh"), bands):
                if band.shape != want:
                    raise ValueError(
                        f"level {i} band {name} has shape {band.shape}, "
                        f"expected {want}")
        return self

    def band_arrays(self):
        """(path, array) pairs in serialization order: ll, then per level
        lh, hl, hh."""
        yield "ll", self.ll
        for i, bands in enumerate(self.levels):
            yield f"level{i}.lh", bands.lh
            yield f"level{i}.hl", bands.hl
            yield f"level{i}.hh", bands.hh

    def copy(self):
        return WaveletPyramid(
            ll=self.ll.copy(),
            levels=[DetailBands(b.lh.copy(), b.hl.copy(), b.hh.copy())
                    for b in self.levels],
            filter=self.filter,
        )


def decompose(plane, levels, filter_bank):
    """Analyze ``plane`` into a pyramid with ``levels`` detail levels."""
    bank = get_filter_bank(filter_bank)
    arr = np.asarray(plane, dtype=np.float64)
    side = arr.shape[0]
    if levels < 0:
        raise ValueError("levels must be >= 0")
    if side % (2 ** levels) != 0:
        raise ValueError(f"side {side} not divisible by 2^{levels}")
    detail = []
    cur = arr
    for _ in range(levels):
        ll, lh, hl, hh = dwt2(cur, bank)
        # amplitude normalization: exact power-of-two step scale
        detail.append(DetailBands(0.5 * lh, 0.5 * hl, 0.5 * hh))
        cur = 0.5 * ll
    return WaveletPyramid(ll=cur, levels=detail[::-1], filter=bank).validate()


def reconstruct(pyramid, depth=None):
    """Synthesize the plane from the first ``depth`` levels (all by default).

    Always returns float64 regardless of the stored coefficient dtype.
    """
    if depth is None:
        depth = pyramid.depth
    if not 0 <= depth <= pyramid.depth:
        raise ValueError(f"depth {depth} outside [0, {pyramid.depth}]")
    plane = np.asarray(pyramid.ll, dtype=np.float64)
    for bands in pyramid.levels[:depth]:
        # inverse of the analysis-side 0.5 (exact power-of-two scale)
        plane = 2.0 * idwt2(plane, bands.lh, bands.hl, bands.hh,
                            pyramid.filter)
    return plane


def reconstruct_adjoint(grad_plane, n_ll, filter_bank):
    """Exact adjoint of ``reconstruct``: maps a plane-shaped gradient to a
    pyramid-shaped gradient (returned as a WaveletPyramid of gradients).

    The level count is inferred from ``grad_plane``'s side and ``n_ll``.
    """
    bank = get_filter_bank(filter_bank)
    arr = np.asarray(grad_plane, dtype=np.float64)
    side = arr.shape[0]
    if side < n_ll or side % n_ll != 0:
        raise ValueError(f"gradient side {side} incompatible with n_ll {n_ll}")
    ratio = side // n_ll
    if ratio & (ratio - 1):
        raise ValueError(f"side {side} is not n_ll * 2^L for n_ll {n_ll}")
    grads = []
    cur = arr
    while cur.shape[0] > n_ll:
        # adjoint of the synthesis-side 2.0 step scale
        g_ll, g_lh, g_hl, g_hh = idwt2_adjoint(2.0 * cur, bank)
        grads.append(DetailBands(g_lh, g_hl, g_hh))
        cur = g_ll
    return WaveletPyramid(ll=cur, levels=grads[::-1], filter=bank)


def append_level(pyramid):
    """Add one zero detail level on top; reconstruction side doubles while
    existing coefficients are carried over bit-identically."""
    new = pyramid.copy()
    shape = (new.side,) * 2 + new.ll.shape[2:]
    dtype = new.ll.dtype
    new.levels.append(DetailBands(np.zeros(shape, dtype), np.zeros(shape, dtype),
                                  np.zeros(shape, dtype)))
    return new.validate()

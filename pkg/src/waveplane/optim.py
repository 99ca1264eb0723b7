"""Adam with exponential learning-rate decay, the L1 subgradient on detail
coefficients, and the photometric + sparsity training loss."""
from dataclasses import dataclass, field

import numpy as np

from .triplane import high_freq_l1


@dataclass
class AdamState:
    """Per-parameter first/second moments plus the shared step counter."""
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-15


def init_adam(params, beta1=0.9, beta2=0.99, eps=1e-15):
    """Fresh AdamState with zero moments matching ``params`` (name -> array)."""
    state = AdamState(beta1=beta1, beta2=beta2, eps=eps)
    for name, p in params.items():
        state.m[name] = np.zeros(p.shape)
        state.v[name] = np.zeros(p.shape)
    return state


def lr_schedule(step, total_steps, lr0=0.01, decay=0.1):
    """Exponential decay from lr0 to lr0*decay over the run."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    return lr0 * decay ** (step / total_steps)


def _grad_diagnostics(name, g):
    bad = ~np.isfinite(g)
    finite = g[~bad]
    peak = np.abs(finite).max() if finite.size else float("nan")
    return (f"non-finite gradient for '{name}': {bad.sum()} of {g.size} "
            f"entries, max finite magnitude {peak:.3e}")


def adam_step(params, grads, state, lr):
    """One in-place Adam update over ``params`` (name -> array).

    Moments are created lazily for names unseen so far, so parameters may be
    added mid-run. Raises FloatingPointError on any non-finite gradient.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match "
                             f"parameter '{name}' {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(_grad_diagnostics(name, g))
        if name not in state.m:
            state.m[name] = np.zeros(p.shape)
            state.v[name] = np.zeros(p.shape)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p[...] = (p.astype(np.float64) - update).astype(p.dtype)


def l1_subgrad(model, scale=1.0):
    """Subgradient of ``scale * high_freq_l1``: sign of every detail
    coefficient (0 at 0), keyed by parameter name; lowpass and MLP entries
    are absent."""
    grads = {}
    for plane_name in ("xy", "xz", "yz"):
        pyr = model.planes[plane_name]
        for i, bands in enumerate(pyr.levels):
            for band_name, band in zip(("lh", "hl", "hh"), bands):
                key = f"{plane_name}.level{i}.{band_name}"
                grads[key] = scale * np.sign(band.astype(np.float64))
    return grads


@dataclass(frozen=True)
class LossReport:
    """Loss bookkeeping for one batch: photometric mean-squared error,
    weighted detail-sparsity term, and their sum."""
    data: float
    reg: float

    @property
    def total(self):
        return self.data + self.reg


def reconstruction_loss(pred, target, model=None, reg_weight=0.0,
                        reg_scale=1.0):
    """Mean squared color error plus the weighted detail L1.

    Returns (LossReport, d_pred). The regularizer is
    ``reg_weight * reg_scale * high_freq_l1(model)``; pass ``reg_scale``
    as 1/(3*batch) to reproduce a summed (unnormalized) data term.
    """
    p = np.asarray(pred, dtype=np.float64)
    q = np.asarray(target, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"pred {p.shape} and target {q.shape} disagree")
    diff = p - q
    data = float(np.mean(diff * diff))
    d_pred = (2.0 / diff.size) * diff
    reg = 0.0
    if reg_weight != 0.0:
        if model is None:
            raise ValueError("reg_weight set but no model given")
        reg = float(reg_weight * reg_scale * high_freq_l1(model))
    return LossReport(data=data, reg=reg), d_pred

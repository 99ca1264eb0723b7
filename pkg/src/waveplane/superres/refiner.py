"""Refinement backends that turn a blurry high-resolution render plus its
ground-truth low-resolution frame into a sharpened high-resolution target.

The ``Refiner`` interface is ``refine(x_est_hr, x_gt_lr, t)`` where ``t``
in [0, 1] is the corruption level handed to the backend (how far the
estimate may be from a clean image). Two optional keywords extend it:
``frame_id`` names the source frame and ``region`` carries the pad/crop
placement, so backends that look up per-frame data (the oracle, remote
services) can position themselves; both are always supplied by the
training loop.

``DiffusionRefiner`` speaks a byte protocol to an external process or
HTTP endpoint. Every message is a 4-byte little-endian header length,
a UTF-8 JSON header, then a raw float32 little-endian body:

* request header: ``{"version": 1, "frame_id", "t", "hr_shape",
  "lr_shape", "region"}``; body = HR estimate floats then LR floats.
* response header: ``{"status": "ok", "shape": [h, w, c]}`` with the
  refined image as body, or ``{"status": "error", "message": ...}``.

Running this module as a script with ``--serve-identity`` answers that
protocol on stdin/stdout, which doubles as a conformance harness for
external implementations.
"""
import json
import shlex
import struct
import subprocess
import sys
import urllib.request

import numpy as np

PROTOCOL_VERSION = 1


class RefinerError(RuntimeError):
    """Transport or protocol failure while asking a refiner for a target."""


def _check_pair(x_est_hr, x_gt_lr, t):
    hr = np.asarray(x_est_hr, dtype=np.float64)
    lr = np.asarray(x_gt_lr, dtype=np.float64)
    if hr.ndim != 3 or lr.ndim != 3 or hr.shape[2] != lr.shape[2]:
        raise ValueError(f"expected (h, w, c) image pair, got {hr.shape} "
                         f"and {lr.shape}")
    if hr.shape[0] != 4 * lr.shape[0] or hr.shape[1] != 4 * lr.shape[1]:
        raise ValueError(f"HR {hr.shape[:2]} is not 4x the LR "
                         f"{lr.shape[:2]}")
    if not 0.0 <= float(t) <= 1.0:
        raise ValueError(f"corruption level t={t} outside [0, 1]")
    return hr, lr


class Refiner:
    """Interface: produce a refined HR target for one frame."""

    def refine(self, x_est_hr, x_gt_lr, t, frame_id=None, region=None):
        raise NotImplementedError

    def close(self):
        pass


class IdentityRefiner(Refiner):
    """Returns the HR estimate unchanged; turns the HR phase into a
    self-consistency term."""

    def refine(self, x_est_hr, x_gt_lr, t, frame_id=None, region=None):
        hr, _ = _check_pair(x_est_hr, x_gt_lr, t)
        return hr.copy()


class OracleRefiner(Refiner):
    """Answers with stored ground-truth HR frames, honoring the pad/crop
    placement of the request; ideal for tests where the true scene is
    known analytically."""

    def __init__(self, frames):
        self._frames = {int(k): np.asarray(v, np.float64)
                        for k, v in dict(frames).items()}

    def refine(self, x_est_hr, x_gt_lr, t, frame_id=None, region=None):
        _check_pair(x_est_hr, x_gt_lr, t)
        if frame_id is None or frame_id not in self._frames:
            raise ValueError(f"oracle has no ground truth for frame "
                             f"{frame_id!r}")
        gt = self._frames[frame_id]
        if region is None or region.mode == "identity":
            return gt.copy()
        y0, x0, h, w = region.hr_box
        content = gt[y0:y0 + h, x0:x0 + w]
        if region.mode == "crop":
            return content.copy()
        if region.mode == "pad":
            canvas = np.zeros(region.hr_canvas + (gt.shape[2],))
            canvas[:h, :w] = content
            return canvas
        raise ValueError(f"unknown placement mode {region.mode!r}")


def encode_message(header, arrays=()):
    """Frame a JSON header plus float32 bodies into protocol bytes."""
    blob = json.dumps(header).encode("utf-8")
    body = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes()
                    for a in arrays)
    return struct.pack("<I", len(blob)) + blob + body


def decode_message(read):
    """Read one framed JSON header via a ``read(n)`` callable; the body
    (if any) stays in the stream for the caller to consume."""
    raw = read(4)
    if len(raw) != 4:
        raise RefinerError("refiner stream closed while reading header")
    (n,) = struct.unpack("<I", raw)
    blob = read(n)
    if len(blob) != n:
        raise RefinerError("refiner stream truncated inside header")
    try:
        header = json.loads(blob.decode("utf-8"))
    except ValueError as e:
        raise RefinerError(f"malformed refiner header: {e}") from e
    return header


def _read_image(read, shape):
    count = int(np.prod(shape))
    raw = read(4 * count)
    if len(raw) != 4 * count:
        raise RefinerError("refiner stream truncated inside image body")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)


def _request_bytes(x_est_hr, x_gt_lr, t, frame_id, region):
    header = {
        "version": PROTOCOL_VERSION,
        "frame_id": None if frame_id is None else int(frame_id),
        "t": float(t),
        "hr_shape": list(x_est_hr.shape),
        "lr_shape": list(x_gt_lr.shape),
        "region": None if region is None else {
            "mode": region.mode,
            "lr_box": list(region.lr_box),
            "hr_box": list(region.hr_box),
        },
    }
    return encode_message(header, (x_est_hr, x_gt_lr))


def _parse_response(read):
    header = decode_message(read)
    if header.get("status") != "ok":
        raise RefinerError(f"refiner reported failure: "
                           f"{header.get('message', 'no message')}")
    shape = tuple(int(s) for s in header["shape"])
    return _read_image(read, shape)


class DiffusionRefiner(Refiner):
    """Client for an external refinement service.

    ``endpoint`` starting with http:// or https:// sends one POST per
    request; anything else is treated as a command line and spawned once,
    with requests streamed over its stdin/stdout.
    """

    def __init__(self, endpoint, timeout=120.0):
        self.endpoint = endpoint
        self.timeout = timeout
        self._proc = None
        if not endpoint.startswith(("http://", "https://")):
            self._proc = subprocess.Popen(
                shlex.split(endpoint), stdin=subprocess.PIPE,
                stdout=subprocess.PIPE)

    def refine(self, x_est_hr, x_gt_lr, t, frame_id=None, region=None):
        hr, lr = _check_pair(x_est_hr, x_gt_lr, t)
        payload = _request_bytes(hr, lr, t, frame_id, region)
        if self._proc is not None:
            return self._pipe_roundtrip(payload)
        return self._http_roundtrip(payload)

    def _pipe_roundtrip(self, payload):
        proc = self._proc
        if proc.poll() is not None:
            raise RefinerError("refiner subprocess has exited")
        try:
            proc.stdin.write(payload)
            proc.stdin.flush()
            return _parse_response(proc.stdout.read)
        except (BrokenPipeError, OSError) as e:
            raise RefinerError(f"refiner pipe failed: {e}") from e

    def _http_roundtrip(self, payload):
        req = urllib.request.Request(
            self.endpoint, data=payload,
            headers={"Content-Type": "application/octet-stream"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                body = resp.read()
        except OSError as e:
            raise RefinerError(f"refiner endpoint failed: {e}") from e
        view = memoryview(body)
        pos = [0]

        def read(n):
            chunk = view[pos[0]:pos[0] + n]
            pos[0] += n
            return bytes(chunk)

        return _parse_response(read)

    def close(self):
        if self._proc is not None:
            if self._proc.stdin:
                self._proc.stdin.close()
            self._proc.wait(timeout=10)
            self._proc = None


def serve_stdio(handler, stdin=None, stdout=None):
    """Answer protocol requests in a loop: ``handler(header, hr, lr)``
    returns the refined image. Used by ``--serve-identity`` and reusable
    by external refiner implementations written in Python."""
    fin = stdin if stdin is not None else sys.stdin.buffer
    fout = stdout if stdout is not None else sys.stdout.buffer
    while True:
        probe = fin.read(4)
        if len(probe) < 4:
            return
        (n,) = struct.unpack("<I", probe)
        header = json.loads(fin.read(n).decode("utf-8"))
        hr = _read_image(fin.read, header["hr_shape"])
        lr = _read_image(fin.read, header["lr_shape"])
        try:
            out = np.asarray(handler(header, hr, lr), dtype=np.float64)
            reply = encode_message({"status": "ok",
                                    "shape": list(out.shape)}, (out,))
        except Exception as e:  # surface the failure to the client
            reply = encode_message({"status": "error", "message": str(e)})
        fout.write(reply)
        fout.flush()


if __name__ == "__main__":
    if "--serve-identity" in sys.argv:
        serve_stdio(lambda header, hr, lr: hr)
    else:
        sys.exit("usage: python3 -m waveplane.superres.refiner "
                 "--serve-identity")

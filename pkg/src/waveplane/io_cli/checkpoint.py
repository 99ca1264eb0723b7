"""Checkpoint container: a magic string, a JSON header describing the model
and every parameter blob, then the blobs themselves as little-endian
float32 in a fixed serialization order.

Save -> load -> render is bit-identical because parameters are stored in
float32, the model's own storage dtype.
"""
import json
import struct

import numpy as np

from ..field import MlpWeights
from ..triplane import WaveletTriplane
from ..wavelet import DetailBands, WaveletPyramid, get_filter_bank

MAGIC = b"WPCK"
VERSION = 1


def _param_blobs(model):
    for name, arr in model.parameters():
        yield name, np.ascontiguousarray(arr, dtype="<f4")


def save_checkpoint(path, model, extra=None):
    """Write ``model`` (and an optional JSON-serializable ``extra`` dict)."""
    blobs = list(_param_blobs(model))
    params = []
    offset = 0
    for name, arr in blobs:
        params.append({"name": name, "shape": list(arr.shape),
                       "offset": offset})
        offset += arr.nbytes
    header = {
        "version": VERSION,
        "model": {
            "n_ll": model.n_ll,
            "levels": model.depth,
            "channels": model.channels,
            "filter": get_filter_bank(model.filter).name,
            "bbox": np.asarray(model.bbox).tolist(),
        },
        "mlp": None if model.mlp is None else {
            "geo_features": model.mlp.geo_features,
            "dir_bands": model.mlp.dir_bands,
        },
        "params": params,
        "extra": extra or {},
    }
    head = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(head)))
        f.write(head)
        for _, arr in blobs:
            f.write(arr.tobytes())


def _take(buf, entry):
    shape = tuple(entry["shape"])
    n = int(np.prod(shape)) if shape else 1
    start = entry["offset"]
    arr = np.frombuffer(buf, dtype="<f4", count=n, offset=start)
    return arr.reshape(shape).astype(np.float32)


def load_checkpoint(path):
    """Read a checkpoint; returns (model, extra)."""
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (head_len,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(head_len).decode("utf-8"))
        if header["version"] != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version "
                             f"{header['version']}")
        buf = f.read()

    by_name = {e["name"]: e for e in header["params"]}

    def grab(name):
        if name not in by_name:
            raise ValueError(f"{path}: checkpoint missing parameter {name}")
        return _take(buf, by_name[name])

    info = header["model"]
    bank = get_filter_bank(info["filter"])
    planes = {}
    for plane in ("xy", "xz", "yz"):
        ll = grab(f"{plane}.ll")
        levels = []
        for i in range(info["levels"]):
            levels.append(DetailBands(lh=grab(f"{plane}.level{i}.lh"),
                                      hl=grab(f"{plane}.level{i}.hl"),
                                      hh=grab(f"{plane}.level{i}.hh")))
        planes[plane] = WaveletPyramid(ll=ll, levels=levels, filter=bank)

    mlp = None
    if header["mlp"] is not None:
        density = []
        color = []
        for i in range(len(by_name)):
            if f"mlp.density.{i}" in by_name:
                density.append(grab(f"mlp.density.{i}"))
            if f"mlp.color.{i}" in by_name:
                color.append(grab(f"mlp.color.{i}"))
        mlp = MlpWeights(density=density, color=color,
                         geo_features=header["mlp"]["geo_features"],
                         dir_bands=header["mlp"]["dir_bands"])

    model = WaveletTriplane(planes=planes,
                            bbox=np.asarray(info["bbox"], dtype=np.float64),
                            mlp=mlp)
    return model, header["extra"]

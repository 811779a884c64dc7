"""Versioned binary checkpoint container.

Layout::

    b"BENSCKPT"                 8-byte magic
    uint32 LE                   format version
    uint64 LE                   header length in bytes
    header                      UTF-8 JSON, sorted keys
    payload                     every parameter as float64 LE, in header order

The header records layer kinds, activations, dropout rates, ensemble size, parameter
names and shapes, plus free-form metadata (variant, config fingerprint, snapshot
accuracies). Writing is byte-deterministic and reading restores parameters bit-exactly.
"""
import json
import struct

import numpy as np

from .errors import FormatError
from .layers import BatchEnsembleLayer, DenseLayer, DropoutLayer
from .model import Model

MAGIC = b"BENSCKPT"
VERSION = 1


def _layer_header(layer):
    if isinstance(layer, DropoutLayer):
        return {"kind": "dropout", "rate": layer.rate, "params": []}
    entry = {"kind": layer.kind, "activation": layer.activation,
             "params": [{"name": k, "shape": list(v.shape)} for k, v in layer.params.items()]}
    if isinstance(layer, BatchEnsembleLayer):
        entry["ensemble_size"] = layer.ensemble_size
    return entry


def save_checkpoint(path, models, meta=None):
    if isinstance(models, Model):
        models = [models]
    header = {"format_version": VERSION, "meta": meta or {}, "models": []}
    chunks = []
    for model in models:
        mh = {"layers": [], "heads": []}
        for layer in model.layers:
            mh["layers"].append(_layer_header(layer))
            chunks.extend(layer.params.values())
        for hid in sorted(model.heads):
            entry = _layer_header(model.heads[hid])
            entry["id"] = hid
            mh["heads"].append(entry)
            chunks.extend(model.heads[hid].params.values())
        header["models"].append(mh)
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(hbytes)))
        fh.write(hbytes)
        for arr in chunks:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _build_layer(entry, take):
    kind = entry["kind"]
    if kind == "dropout":
        return DropoutLayer(entry["rate"])
    params = {p["name"]: take(p["shape"]) for p in entry["params"]}
    if kind == "batch_ensemble":
        return BatchEnsembleLayer(params["W"], params["r"], params["s"], params["bias"], entry["activation"])
    if kind == "dense":
        return DenseLayer(params["W"], params["b"], entry["activation"])
    raise FormatError(f"unknown layer kind {kind!r} in checkpoint")


def load_checkpoint(path):
    """Returns ``(models, meta)``."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    if len(buf) < 20:
        raise FormatError(f"{path}: truncated header")
    version, hlen = struct.unpack("<IQ", buf[8:20])
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(buf[20:20 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from None
    offset = 20 + hlen

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(buf):
            raise FormatError(f"{path}: truncated payload")
        arr = np.frombuffer(buf, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(shape)
        offset = end
        return arr

    models = []
    for mh in header["models"]:
        layers = [_build_layer(e, take) for e in mh["layers"]]
        heads = {e["id"]: _build_layer(e, take) for e in mh["heads"]}
        models.append(Model(layers, heads))
    if offset != len(buf):
        raise FormatError(f"{path}: {len(buf) - offset} trailing bytes")
    return models, header["meta"]

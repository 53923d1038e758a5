"""Versioned binary container for named float64 arrays, plus checkpoints.

Byte layout (all integers little-endian):

    bytes 0..7    magic ``ADPTNS01``
    bytes 8..11   uint32 header length L
    bytes 12..12+L-1  UTF-8 JSON header:
                  {"version": 1, "meta": {...},
                   "tensors": [{"name": str, "shape": [int, ...],
                                "offset": int}, ...]}
    remainder     tensor payloads, float64 little-endian, C order,
                  at the stated offsets relative to the payload start

The JSON header is serialised with sorted keys and no whitespace, so a file
written twice from the same content is byte-identical.  Checkpoints are the
same container with a structured ``meta`` (kind, architecture config, epoch,
fold, RNG state, optimizer step count).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import SchemaError

MAGIC = b"ADPTNS01"
VERSION = 1


def write_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    index = []
    offset = 0
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype=np.float64)
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blob = arr.tobytes()
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {"version": VERSION, "meta": meta or {}, "tensors": index},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def read_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise SchemaError(f"{path}: not a tensor container (bad magic {magic!r})")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header.get("version") != VERSION:
            raise SchemaError(f"{path}: unsupported container version"
                              f" {header.get('version')}")
        payload = fh.read()
    arrays = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=start)
        arrays[entry["name"]] = arr.reshape(shape).copy()
    return arrays, header["meta"]


def rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def restore_rng(state: dict) -> np.random.Generator:
    gen = np.random.Generator(np.random.PCG64())
    gen.bit_generator.state = state
    return gen


def save_checkpoint(path, *, kind: str, arch: dict, params: dict[str, "object"],
                    epoch: int, fold: int | None, rng: np.random.Generator,
                    adam_state: dict | None = None, extra: dict | None = None,
                    extra_arrays: dict[str, np.ndarray] | None = None) -> None:
    """Persist named parameter tensors plus optimizer moments and RNG state."""
    arrays: dict[str, np.ndarray] = {}
    trainable = []
    for name, tensor in params.items():
        arrays[f"param/{name}"] = tensor.data
        if tensor.requires_grad:
            trainable.append(name)
    step = 0
    if adam_state is not None:
        step = adam_state["step"]
        for name, (m, v) in adam_state["moments"].items():
            arrays[f"adam_m/{name}"] = m
            arrays[f"adam_v/{name}"] = v
    for name, arr in (extra_arrays or {}).items():
        arrays[f"extra/{name}"] = arr
    meta = {
        "kind": kind,
        "arch": arch,
        "epoch": epoch,
        "fold": fold,
        "rng": rng_state(rng),
        "adam_step": step,
        "trainable": sorted(trainable),
    }
    if extra:
        meta["extra"] = extra
    write_arrays(path, arrays, meta)


def load_checkpoint(path) -> dict:
    """Inverse of save_checkpoint; returns a dict of the stored pieces."""
    arrays, meta = read_arrays(path)
    params = {name[len("param/"):]: arr for name, arr in arrays.items()
              if name.startswith("param/")}
    moments = {}
    for name, arr in arrays.items():
        if name.startswith("adam_m/"):
            key = name[len("adam_m/"):]
            moments.setdefault(key, [None, None])[0] = arr
        elif name.startswith("adam_v/"):
            key = name[len("adam_v/"):]
            moments.setdefault(key, [None, None])[1] = arr
    return {
        "kind": meta["kind"],
        "arch": meta["arch"],
        "epoch": meta["epoch"],
        "fold": meta["fold"],
        "rng": restore_rng(meta["rng"]),
        "params": params,
        "adam": {"step": meta.get("adam_step", 0),
                 "moments": {k: (m, v) for k, (m, v) in moments.items()}},
        "trainable": set(meta.get("trainable", [])),
        "extra": meta.get("extra", {}),
        "extra_arrays": {name[len("extra/"):]: arr for name, arr in arrays.items()
                         if name.startswith("extra/")},
    }

"""Versioned binary checkpoint container.

Layout: 8-byte magic, u32 format version, u64 JSON header length, UTF-8 JSON
header, then raw little-endian float32 array payloads in header order. The
header carries the network config, the training-step counter, and the name,
shape, and byte offset of every array. Write-then-read is bitwise stable.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from clearwave.net.model import NetConfig

MAGIC = b"CWNETCK1"
VERSION = 1


def _cfg_to_dict(cfg: NetConfig) -> dict:
    return {
        "levels": cfg.levels,
        "filters_per_level": list(cfg.filters_per_level),
        "dense_layers_per_block": cfg.dense_layers_per_block,
        "n_output_masks": cfg.n_output_masks,
        "attention_levels": sorted(cfg.attention_levels),
        "embedding_k": cfg.embedding_k,
    }


def _cfg_from_dict(d: dict) -> NetConfig:
    return NetConfig(
        levels=d["levels"],
        filters_per_level=tuple(d["filters_per_level"]),
        dense_layers_per_block=d["dense_layers_per_block"],
        n_output_masks=d["n_output_masks"],
        attention_levels=frozenset(d["attention_levels"]),
        embedding_k=d["embedding_k"],
    )


def save_checkpoint(path, cfg: NetConfig, params: dict, step: int, opt_arrays: dict | None = None):
    """Write params (and optionally optimizer moment arrays) as float32."""
    arrays = dict(params)
    if opt_arrays:
        arrays.update({f"opt.{k}": v for k, v in opt_arrays.items()})
    index = []
    offset = 0
    payloads = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f4")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payloads.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps(
        {"config": _cfg_to_dict(cfg), "step": int(step), "arrays": index},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for chunk in payloads:
            fh.write(chunk)


def load_checkpoint(path):
    """Returns (cfg, params, step, opt_arrays)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"not a checkpoint file: {path}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        blob = fh.read()
    params = {}
    opt_arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(
            blob, dtype="<f4", count=count, offset=entry["offset"]
        ).reshape(shape).copy()
        name = entry["name"]
        if name.startswith("opt."):
            opt_arrays[name[4:]] = arr
        else:
            params[name] = arr
    return _cfg_from_dict(header["config"]), params, header["step"], opt_arrays

"""Versioned binary checkpoints and CSV training history.

Layout: ``b"MILC" | u32 version | u32 header_len | JSON header | tensor bytes``.
The header lists tensor names, shapes and dtype in storage order along with
the hyperparameters and seed.
"""
from __future__ import annotations

import csv
import io
import json
import struct
from pathlib import Path

import numpy as np

from .._io import atomic_write
from ..errors import FormatError
from .model import AttentionModel, MilHyper

MAGIC = b"MILC"
VERSION = 1


def checkpoint_bytes(model: AttentionModel, hyper: MilHyper | None = None) -> bytes:
    dtype = np.dtype(model.dtype).newbyteorder("<")
    names = list(model.params)
    header = {
        "dims": list(model.dims),
        "seed": model.seed,
        "dtype": dtype.str,
        "tensors": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
        "hyper": hyper.to_dict() if hyper else None,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(model.params[n].astype(dtype).tobytes() for n in names)
    return MAGIC + struct.pack("<II", VERSION, len(head)) + head + body


def write_checkpoint(model: AttentionModel, path, hyper: MilHyper | None = None) -> None:
    atomic_write(path, checkpoint_bytes(model, hyper))


def read_checkpoint(path) -> tuple[AttentionModel, MilHyper | None]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC or len(buf) < 12:
        raise FormatError(f"{path}: not a MIL checkpoint")
    version, hlen = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(buf[12 : 12 + hlen].decode("utf-8"))
    except ValueError as exc:
        raise FormatError(f"{path}: corrupt header") from exc
    dtype = np.dtype(header["dtype"])
    off = 12 + hlen
    params = {}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"], dtype=np.int64))
        if off + count * dtype.itemsize > len(buf):
            raise FormatError(f"{path}: truncated at tensor {t['name']}")
        arr = np.frombuffer(buf, dtype=dtype, count=count, offset=off).reshape(t["shape"])
        params[t["name"]] = arr.astype(dtype.newbyteorder("="))
        off += count * dtype.itemsize
    hyper = MilHyper(**header["hyper"]) if header.get("hyper") else None
    return AttentionModel(params, tuple(header["dims"]), header["seed"]), hyper


def write_history(history, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "val_auc"])
    for row in history:
        w.writerow([row["epoch"], f"{row['train_loss']:.8f}", f"{row['val_auc']:.6f}"])
    atomic_write(path, buf.getvalue())

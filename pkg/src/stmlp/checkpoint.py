"""Single-file checkpoint format.

Layout::

    8 bytes   magic  b"STMLPCK\\x01"
    8 bytes   header length N, unsigned little-endian
    N bytes   header, UTF-8 JSON
    ...       parameter data, little-endian float64, in header order

The header holds ``format_version``, ``config`` (a ``ModelConfig`` dict),
``seed``, ``created`` (UTC ISO-8601), free-form ``metadata`` and
``parameters``: a list of ``{"name", "shape", "offset"}`` where ``offset``
is the byte offset of the array inside the data section. Shared SE weights
are stored once under ``blocks.<i>.se.*``.
"""

from __future__ import annotations

import datetime as _dt
import json
import struct
from pathlib import Path

import numpy as np

from .model import ModelConfig, ModelParams, init_params

MAGIC = b"STMLPCK\x01"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(path, params: ModelParams, cfg: ModelConfig, seed=None, metadata=None) -> None:
    arrays = params.named_arrays()
    entries = []
    offset = 0
    for name, a in arrays.items():
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size * 8
    header = {
        "format_version": FORMAT_VERSION,
        "config": cfg.to_dict(),
        "seed": seed,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "metadata": metadata or {},
        "parameters": entries,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_header(path) -> dict:
    return _read(path)[0]


def _read(path):
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (n,) = struct.unpack("<Q", data[8:16])
    try:
        header = json.loads(data[16 : 16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header: {e}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    return header, memoryview(data)[16 + n :]


def load_checkpoint(path):
    """Returns ``(params, cfg, header)``."""
    header, body = _read(path)
    cfg = ModelConfig.from_dict(header["config"])
    # build the structure (and SE aliasing) from the config, then fill it
    params = init_params(cfg, seed=0)
    arrays = params.named_arrays()
    stored = {e["name"]: e for e in header["parameters"]}
    if set(stored) != set(arrays):
        missing = sorted(set(arrays) - set(stored))
        extra = sorted(set(stored) - set(arrays))
        raise CheckpointError(f"{path}: parameter names disagree with config (missing {missing}, unexpected {extra})")
    for name, target in arrays.items():
        e = stored[name]
        if tuple(e["shape"]) != target.shape:
            raise CheckpointError(f"{path}: {name} has shape {tuple(e['shape'])}, config implies {target.shape}")
        start, stop = e["offset"], e["offset"] + target.size * 8
        if stop > len(body):
            raise CheckpointError(f"{path}: truncated data for {name}")
        target[...] = np.frombuffer(body[start:stop], dtype="<f8").reshape(target.shape)
    return params, cfg, header

"""Versioned checkpoint format and the JSONL metrics writer.

Checkpoint layout:

    bytes 0..4    magic "ADF1"
    bytes 4..8    little-endian uint32 header length H
    bytes 8..8+H  UTF-8 JSON header:
                    params: name -> {dtype, shape, offset, nbytes, trainable}
                    run_config: the RunConfig snapshot (or null)
                    seed: int (or null)
    remainder     payload: concatenated little-endian float32 blocks,
                  offsets relative to the payload start

Offsets are strictly increasing and non-overlapping, and the payload
length equals the sum of the block sizes, so a loader can validate the
file before touching any weights. Save-then-load reproduces every
parameter bit-exactly.
"""

from __future__ import annotations

import dataclasses
import json
import math
import struct

import numpy as np

__all__ = ["CheckpointError", "MetricsError", "save_checkpoint", "read_header", "load_checkpoint", "MetricsWriter", "read_metrics"]

MAGIC = b"ADF1"

_RECORD_KEYS = ("step", "epoch", "task", "split", "metric", "value", "ffn_kind")


class CheckpointError(ValueError):
    """Corrupt or mismatched checkpoint file."""


class MetricsError(ValueError):
    """Invalid metric record."""


def save_checkpoint(model, path: str, run_config=None, seed: int | None = None) -> None:
    """Write all model parameters plus the run-config snapshot."""
    params = model.named_parameters()
    header_params = {}
    blobs = []
    offset = 0
    for name, p in params.items():
        if p.data.dtype != np.float32:
            raise CheckpointError(f"checkpoint payload is float32; parameter {name!r} is {p.data.dtype}")
        blob = np.ascontiguousarray(p.data, dtype="<f4").tobytes()
        header_params[name] = {
            "dtype": "float32",
            "shape": list(p.data.shape),
            "offset": offset,
            "nbytes": len(blob),
            "trainable": bool(p.trainable),
        }
        blobs.append(blob)
        offset += len(blob)
    cfg_snapshot = None if run_config is None else dataclasses.asdict(run_config)
    header = {"params": header_params, "run_config": cfg_snapshot, "seed": seed}
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def _read_raw(path: str) -> tuple[dict, bytes]:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    (header_len,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header: {exc}") from exc
    payload = raw[8 + header_len :]

    expected = 0
    for name, meta in sorted(header["params"].items(), key=lambda kv: kv[1]["offset"]):
        if meta["offset"] != expected:
            kind = "overlapping" if meta["offset"] < expected else "gapped"
            raise CheckpointError(f"{path}: {kind} offsets at parameter {name!r}")
        size = int(np.prod(meta["shape"], dtype=np.int64)) if meta["shape"] else 1
        if meta["nbytes"] != 4 * size:
            raise CheckpointError(f"{path}: parameter {name!r} declares {meta['nbytes']} bytes for shape {meta['shape']}")
        expected += meta["nbytes"]
    if expected != len(payload):
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, header declares {expected}")
    return header, payload


def read_header(path: str) -> dict:
    """Parse and validate the header without touching model state."""
    header, _ = _read_raw(path)
    return header


def load_checkpoint(path: str, model) -> dict:
    """Restore parameters and trainable flags into an existing model.

    The header must describe exactly the model's parameter set; any name
    or shape mismatch is an error naming the parameter.
    """
    header, payload = _read_raw(path)
    stored = header["params"]
    params = model.named_parameters()
    missing = sorted(set(params) - set(stored))
    if missing:
        raise CheckpointError(f"{path}: checkpoint lacks parameter {missing[0]!r}")
    extra = sorted(set(stored) - set(params))
    if extra:
        raise CheckpointError(f"{path}: checkpoint has unexpected parameter {extra[0]!r}")
    for name, p in params.items():
        meta = stored[name]
        if tuple(meta["shape"]) != p.data.shape:
            raise CheckpointError(
                f"{path}: parameter {name!r} has shape {tuple(meta['shape'])} but the model expects {p.data.shape}"
            )
        block = payload[meta["offset"] : meta["offset"] + meta["nbytes"]]
        p.data[...] = np.frombuffer(block, dtype="<f4").reshape(p.data.shape)
        if meta["trainable"]:
            p.trainable = True
            p.tensor.requires_grad = True
        else:
            p.freeze()
    return header


class MetricsWriter:
    """Append-only JSONL writer for metric records.

    Each record must carry exactly the harness keys, a finite value, and a
    step no smaller than the previous record's.
    """

    def __init__(self, path: str):
        self._fh = open(path, "a", encoding="utf-8")
        self._last_step = -1

    def write(self, record: dict) -> None:
        missing = [k for k in _RECORD_KEYS if k not in record]
        if missing:
            raise MetricsError(f"metric record missing keys {missing}")
        value = record["value"]
        if not isinstance(value, (int, float)) or not math.isfinite(value):
            raise MetricsError(f"metric value must be finite, got {value!r}")
        step = int(record["step"])
        if step < self._last_step:
            raise MetricsError(f"step {step} is smaller than previous step {self._last_step}")
        self._last_step = step
        self._fh.write(json.dumps({k: record[k] for k in _RECORD_KEYS}, sort_keys=True) + "\n")

    def flush(self) -> None:
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path: str) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]

"""Checkpoint persistence: plain-text manifest + contiguous binary payload.

Layout: a UTF-8 header (format version, payload checksum, step counter,
config echo, tensor index) terminated by a sentinel line, followed by the
tensor payload (little-endian, raw section first, then EMA). Offsets are
relative to the payload start and must tile it exactly. Loading verifies a
whole-payload SHA-256 recorded in the manifest.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .config import RunConfig, config_to_text, parse_config_text
from .errors import (CheckpointChecksumError, CheckpointError,
                     CheckpointTruncatedError, CheckpointVersionError)

MAGIC = "dualdiff-checkpoint"
VERSION = 1
_HEADER_END = "header_end"

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_DTYPE_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}


@dataclass
class Checkpoint:
    version: int
    step: int
    config: RunConfig
    raw: dict
    ema: dict


def save_checkpoint(path, config, step, raw, ema):
    """Write raw + EMA named-tensor sections with a manifest and checksum."""
    entries = []
    payload = bytearray()
    for section, tensors in (("raw", raw), ("ema", ema)):
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr)
            if arr.dtype not in _DTYPE_NAMES:
                arr = arr.astype(np.float32)
            data = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
            entries.append((f"{section}/{name}", _DTYPE_NAMES[np.dtype(arr.dtype)],
                            arr.shape, len(payload), len(data)))
            payload += data
    digest = hashlib.sha256(bytes(payload)).hexdigest()

    lines = [f"{MAGIC} v{VERSION}",
             f"payload_sha256 = {digest}",
             f"step = {int(step)}",
             "config_begin"]
    lines += config_to_text(config).rstrip("\n").splitlines()
    lines += ["config_end", f"tensors = {len(entries)}"]
    for name, dt, shape, off, nbytes in entries:
        shape_s = "x".join(str(d) for d in shape) if shape else "scalar"
        lines.append(f"{name} {dt} {shape_s} {off} {nbytes}")
    lines.append(_HEADER_END)
    header = ("\n".join(lines) + "\n").encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(bytes(payload))


def load_checkpoint(path, sections=("raw", "ema")):
    """Load the requested sections; raises distinct errors for version,
    checksum, and truncation failures."""
    with open(path, "rb") as fh:
        blob = fh.read()
    end = blob.find((_HEADER_END + "\n").encode())
    if end < 0:
        raise CheckpointError(f"{path}: missing header sentinel")
    header = blob[:end].decode("utf-8").splitlines()
    payload = blob[end + len(_HEADER_END) + 1:]

    first = header[0].split()
    if first[0] != MAGIC or first[1] != f"v{VERSION}":
        raise CheckpointVersionError(
            f"{path}: expected '{MAGIC} v{VERSION}', found {header[0]!r}")
    digest = header[1].split("=", 1)[1].strip()
    step = int(header[2].split("=", 1)[1])

    cfg_start = header.index("config_begin") + 1
    cfg_end = header.index("config_end")
    config = parse_config_text("\n".join(header[cfg_start:cfg_end]))

    n_tensors = int(header[cfg_end + 1].split("=", 1)[1])
    index_lines = header[cfg_end + 2:cfg_end + 2 + n_tensors]

    expected_end = 0
    entries = []
    for line in index_lines:
        name, dt, shape_s, off, nbytes = line.split()
        off, nbytes = int(off), int(nbytes)
        if off != expected_end:
            raise CheckpointError(f"{path}: payload gap before tensor {name!r}")
        expected_end = off + nbytes
        shape = () if shape_s == "scalar" else tuple(int(d) for d in shape_s.split("x"))
        entries.append((name, dt, shape, off, nbytes))
    if len(payload) < expected_end:
        raise CheckpointTruncatedError(
            f"{path}: payload holds {len(payload)} bytes, manifest needs {expected_end}")
    if hashlib.sha256(payload[:expected_end]).hexdigest() != digest:
        raise CheckpointChecksumError(f"{path}: payload checksum mismatch")

    out = Checkpoint(VERSION, step, config, {}, {})
    for name, dt, shape, off, nbytes in entries:
        section, tensor_name = name.split("/", 1)
        if section not in sections:
            continue
        arr = np.frombuffer(payload, dtype=_DTYPES[dt], count=nbytes // _DTYPES[dt].itemsize,
                            offset=off).reshape(shape)
        target = out.raw if section == "raw" else out.ema
        target[tensor_name] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    return out

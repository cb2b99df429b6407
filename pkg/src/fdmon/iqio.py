"""Two-port IQ capture files.

A capture is a raw ``.iq`` file of little-endian float32 interleaved I/Q,
port 0 samples followed by port 1 samples, plus a JSON sidecar
``<name>.iq.json`` describing it.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import ParameterError
from .sigmodel import IQBlock

FORMAT_VERSION = 1


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def atomic_write_bytes(path, data: bytes):
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode())


def write_iq(path, block: IQBlock):
    s = block.samples
    raw = np.empty((2, s.shape[1], 2), dtype="<f4")
    raw[..., 0] = s.real
    raw[..., 1] = s.imag
    atomic_write_bytes(path, raw.tobytes())
    meta = {"version": FORMAT_VERSION, "sample_rate_hz": block.sample_rate_hz,
            "center_freq_hz": block.center_freq_hz, "num_samples": int(s.shape[1]), "num_ports": 2}
    atomic_write_text(sidecar_path(path), json.dumps(meta, indent=2) + "\n")


def read_iq(path) -> IQBlock:
    """Load a capture; raises ``FileNotFoundError`` or ``ParameterError`` on bad input."""
    path = Path(path)
    try:
        meta = json.loads(sidecar_path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParameterError(f"{sidecar_path(path)}: malformed sidecar ({exc})") from None
    for key in ("sample_rate_hz", "num_samples"):
        if key not in meta:
            raise ParameterError(f"{sidecar_path(path)}: missing {key!r}")
    if meta.get("num_ports", 2) != 2:
        raise ParameterError(f"{path}: only 2-port captures are supported")
    n = int(meta["num_samples"])
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != 4 * n:
        raise ParameterError(f"{path}: expected {4 * n} float32 values, found {raw.size}")
    raw = raw.reshape(2, n, 2).astype(np.float64)
    return IQBlock(raw[..., 0] + 1j * raw[..., 1], float(meta["sample_rate_hz"]),
                   float(meta.get("center_freq_hz", 0.0)))

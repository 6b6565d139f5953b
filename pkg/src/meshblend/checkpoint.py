"""Binary checkpoint container shared by both networks.

Layout: a 7-byte magic string, one line of JSON key/values, then the
weight matrices as row-major little-endian float64 in declaration order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

__all__ = ["CheckpointError", "write_checkpoint", "read_checkpoint"]


class CheckpointError(ValueError):
    """Unreadable or incompatible checkpoint file."""


def write_checkpoint(path, magic: bytes, header: dict, matrices) -> None:
    path = Path(path)
    blob = bytearray()
    blob += magic
    blob += (json.dumps(header, sort_keys=True) + "\n").encode("ascii")
    for m in matrices:
        blob += np.ascontiguousarray(m, dtype="<f8").tobytes()
    path.write_bytes(bytes(blob))


def read_checkpoint(path, magic: bytes, shapes_from_header) -> tuple[dict, list[np.ndarray]]:
    """Read a container written by :func:`write_checkpoint`.

    ``shapes_from_header`` maps the parsed header to the ordered list of
    expected matrix shapes; a size mismatch fails fast.
    """
    path = Path(path)
    data = path.read_bytes()
    if not data.startswith(magic):
        raise CheckpointError(f"{path.name}: bad magic, expected {magic.decode()!r}")
    nl = data.find(b"\n", len(magic))
    if nl < 0:
        raise CheckpointError(f"{path.name}: missing header line")
    try:
        header = json.loads(data[len(magic):nl].decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path.name}: malformed header") from exc
    shapes = shapes_from_header(header)
    expected = sum(r * c for r, c in shapes) * 8
    payload = data[nl + 1:]
    if len(payload) != expected:
        raise CheckpointError(
            f"{path.name}: payload is {len(payload)} bytes, header implies {expected}"
        )
    out = []
    offset = 0
    for r, c in shapes:
        count = r * c
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(r, c)
        out.append(arr.astype(np.float64))
        offset += count * 8
    return header, out

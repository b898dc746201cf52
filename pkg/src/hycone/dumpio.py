"""Embedding dump files: binary vectors plus a text label sidecar.

Layout (all little-endian):

    magic   4 bytes  b"HYPB"
    version u32      1
    space   u8       0 = lorentz, 1 = sphere
    dim     u32
    count   u64
    curv    f64      ignored for sphere
    payload count * dim float32 space components

The sidecar shares the dump's basename with a ".labels" extension; one
"class<TAB>text" line per row, class in {text, image, root}.  Dumps are
interchange artifacts: storage is 32-bit, all math promotes to 64-bit on
load.  Writes are atomic (temp file + rename).
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .analysis import LABEL_CLASSES, EmbeddingIndex

MAGIC = b"HYPB"
VERSION = 1
_HEADER = struct.Struct("<4sIBIQd")
SPACE_CODES = {"lorentz": 0, "sphere": 1}
SPACE_NAMES = {v: k for k, v in SPACE_CODES.items()}


class DumpFormatError(ValueError):
    """Malformed dump or label sidecar."""


def labels_path(path) -> Path:
    return Path(path).with_suffix(".labels")


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_dump(index: EmbeddingIndex, path) -> tuple[Path, Path]:
    """Write an index as a dump/labels file pair; returns both paths."""
    path = Path(path)
    curv = float(index.curvature) if index.space == "lorentz" else 0.0
    header = _HEADER.pack(
        MAGIC, VERSION, SPACE_CODES[index.space], index.dim, index.count, curv
    )
    payload = np.ascontiguousarray(index.vectors, dtype="<f4").tobytes()
    _atomic_write(path, header + payload)

    lpath = labels_path(path)
    lines = "".join(f"{cls}\t{text}\n" for cls, text in index.labels)
    _atomic_write(lpath, lines.encode("utf-8"))
    return path, lpath


def read_dump(path) -> EmbeddingIndex:
    """Load a dump/labels pair, validating format and invariants."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DumpFormatError(
            f"truncated header: got {len(raw)} bytes, need {_HEADER.size}"
        )
    magic, version, space_code, dim, count, curv = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise DumpFormatError(f"bad magic at offset 0: {magic!r}")
    if version != VERSION:
        raise DumpFormatError(f"unsupported version {version} at offset 4")
    if space_code not in SPACE_NAMES:
        raise DumpFormatError(f"unknown space code {space_code} at offset 8")
    expected = count * dim * 4
    got = len(raw) - _HEADER.size
    if got != expected:
        raise DumpFormatError(
            f"payload length mismatch at offset {_HEADER.size}: "
            f"expected {expected} bytes, found {got}"
        )
    vectors = (
        np.frombuffer(raw, dtype="<f4", count=count * dim, offset=_HEADER.size)
        .astype(np.float64)
        .reshape(count, dim)
    )

    lpath = labels_path(path)
    try:
        text = lpath.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise DumpFormatError(f"missing label sidecar {lpath}") from exc
    labels: list[tuple[str, str]] = []
    lines = text.splitlines()
    for i, line in enumerate(lines):
        cls, sep, lbl = line.partition("\t")
        if not sep or cls not in LABEL_CLASSES:
            raise DumpFormatError(f"bad label line {i}: {line!r}")
        labels.append((cls, lbl))
    if len(labels) != count:
        raise DumpFormatError(
            f"label count mismatch: dump has {count} rows, sidecar has {len(labels)}"
        )

    root_rows = [i for i, (cls, _) in enumerate(labels) if cls == "root"]
    root_id = root_rows[0] if root_rows else None
    return EmbeddingIndex(
        space=SPACE_NAMES[space_code],
        curvature=curv if space_code == 0 else None,
        vectors=vectors,
        labels=tuple(labels),
        root_id=root_id,
    )

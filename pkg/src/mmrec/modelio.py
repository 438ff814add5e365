"""Versioned binary model files.

Layout::

    MAGIC (8 bytes)
    header length (uint32, little endian)
    header (UTF-8 JSON: format_version, d, variant, seeds, config, sections)
    for each section: byte length (uint64, little endian) + raw float64 data

Sections are written in sorted name order and stored little endian, so a
round trip is bit exact and identical inputs give identical files.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .model import Model, ModelConfig

MAGIC = b"MMRECMDL"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


def dumps(model: Model, seeds: dict | None = None) -> bytes:
    names = sorted(model.params)
    arrays = [np.ascontiguousarray(model.params[k], dtype="<f8") for k in names]
    sections, offset = [], 0
    for name, a in zip(names, arrays):
        sections.append({"name": name, "shape": list(a.shape), "offset": offset, "nbytes": a.nbytes})
        offset += 8 + a.nbytes
    header = {
        "format_version": FORMAT_VERSION,
        "d": model.config.d,
        "variant": model.variant.value,
        "seeds": dict(seeds or {}),
        "config": model.config.to_json(),
        "sections": sections,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<I", len(head)), head]
    for a in arrays:
        parts.append(struct.pack("<Q", a.nbytes))
        parts.append(a.tobytes())
    return b"".join(parts)


def loads(data: bytes) -> tuple[Model, dict]:
    """Parse a model file; returns the model and its header."""
    if data[:len(MAGIC)] != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    pos = len(MAGIC)
    try:
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        header = json.loads(data[pos:pos + n].decode())
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as err:
        raise ModelFormatError(f"corrupt header: {err}") from None
    pos += n
    if header.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {header.get('format_version')!r}")
    base = pos
    params = {}
    for sec in header["sections"]:
        at = base + sec["offset"]
        if at + 8 > len(data):
            raise ModelFormatError(f"section {sec['name']!r} is truncated")
        (nbytes,) = struct.unpack_from("<Q", data, at)
        if nbytes != sec["nbytes"] or at + 8 + nbytes > len(data):
            raise ModelFormatError(f"section {sec['name']!r} length mismatch")
        arr = np.frombuffer(data, dtype="<f8", count=nbytes // 8, offset=at + 8)
        params[sec["name"]] = arr.astype(np.float64).reshape(sec["shape"])
    config = ModelConfig.from_json(header["config"])
    if config.d != header["d"] or config.variant.value != header["variant"]:
        raise ModelFormatError("header fields disagree with the stored config")
    return Model(config, params), header


def save(path, model: Model, seeds: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(model, seeds))


def load(path) -> tuple[Model, dict]:
    with open(path, "rb") as fh:
        return loads(fh.read())

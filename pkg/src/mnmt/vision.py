"""Spatial image-feature files (SPFT) and synthetic stand-ins.

One SPFT file holds, for many images, the (rows, dim) grid of spatial
feature vectors a convolutional encoder produced for each image. The
container is a flat little-endian binary:

  header   magic b"SPFT" | u16 version (=1) | u32 rows | u32 dim
           | u64 record count
  record   u16 byte length of the UTF-8 image id | id bytes
           | rows*dim float32, row-major

All records in a file share one (rows, dim). Loading is strict: bad
magic, truncation, duplicate ids, and non-finite values are errors
that name the offending image id where one is known.

An index file is plain UTF-8 text, one image id per line; line i of a
parallel corpus takes its features from line i of the index.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"SPFT"
VERSION = 1
_HEADER = struct.Struct("<4sHIIQ")
_IDLEN = struct.Struct("<H")


def validate_features(block, rows, dim, image_id="<features>"):
    """Check one (rows, dim) float block; returns it as float32 C-order."""
    a = np.asarray(block)
    if a.ndim != 2 or a.shape != (rows, dim):
        raise ValueError(f"feature block for {image_id!r} has shape {a.shape}, expected ({rows}, {dim})")
    if not np.isfinite(a).all():
        raise ValueError(f"feature block for {image_id!r} contains non-finite values")
    return np.ascontiguousarray(a, dtype=np.float32)


def save_features(path, features, rows=None, dim=None):
    """Write an SPFT file from {image_id: (rows, dim) array}.

    rows/dim default to the first block's shape; every block must match.
    """
    items = list(features.items())
    if not items:
        raise ValueError("refusing to write an SPFT file with no records")
    if rows is None or dim is None:
        first = np.asarray(items[0][1])
        if first.ndim != 2:
            raise ValueError(f"feature block for {items[0][0]!r} is not 2-dimensional")
        rows, dim = first.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, rows, dim, len(items)))
        for image_id, block in items:
            if not image_id:
                raise ValueError("empty image id")
            a = validate_features(block, rows, dim, image_id)
            encoded = image_id.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise ValueError(f"image id too long: {image_id[:40]!r}...")
            fh.write(_IDLEN.pack(len(encoded)))
            fh.write(encoded)
            fh.write(a.astype("<f4").tobytes(order="C"))


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise ValueError(f"truncated SPFT file: expected {n} bytes for {what}, got {len(buf)}")
    return buf


def load_features(path):
    """Read an SPFT file into an ordered {image_id: (rows, dim) float32}."""
    with open(path, "rb") as fh:
        header = _read_exact(fh, _HEADER.size, "header")
        magic, version, rows, dim, count = _HEADER.unpack(header)
        if magic != MAGIC:
            raise ValueError(f"not an SPFT file: magic {magic!r}")
        if version != VERSION:
            raise ValueError(f"unsupported SPFT version {version}")
        if rows == 0 or dim == 0:
            raise ValueError(f"degenerate SPFT geometry rows={rows} dim={dim}")
        payload = rows * dim * 4
        out = {}
        last = None
        for k in range(count):
            where = f"record {k}" + (f" (after {last!r})" if last else "")
            idlen, = _IDLEN.unpack(_read_exact(fh, _IDLEN.size, f"id length of {where}"))
            image_id = _read_exact(fh, idlen, f"id of {where}").decode("utf-8")
            raw = _read_exact(fh, payload, f"features of image_id {image_id!r}")
            block = np.frombuffer(raw, dtype="<f4").reshape(rows, dim).copy()
            if not np.isfinite(block).all():
                raise ValueError(f"feature block for {image_id!r} contains non-finite values")
            if image_id in out:
                raise ValueError(f"duplicate image_id {image_id!r}")
            out[image_id] = block
            last = image_id
        if fh.read(1):
            raise ValueError(f"trailing bytes after {count} records")
    return out


def load_index(path):
    """Read an image-id index file: one id per line, in corpus order."""
    ids = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            image_id = line.strip()
            if not image_id:
                raise ValueError(f"empty image id at line {lineno} of index {path}")
            ids.append(image_id)
    return ids


def synth_features(count, rows, dim, seed=0, scale=1.0, prefix="synthetic"):
    """Deterministic stand-in features: entrywise |N(0, scale^2)|.

    ReLU-activated convnet grids are nonnegative with a heavy mass near
    zero; a half-normal matches that first-order shape. Ids are
    "{prefix}-0000" style, or pass an iterable of ids as count.
    """
    if isinstance(count, int):
        ids = [f"{prefix}-{i:04d}" for i in range(count)]
    else:
        ids = list(count)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    out = {}
    for image_id in ids:
        out[image_id] = np.abs(rng.normal(0.0, scale, size=(rows, dim))).astype(np.float32)
    return out

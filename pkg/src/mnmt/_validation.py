"""Input checks for the estimator API: fail early, name the offender."""

from __future__ import annotations

import numpy as np


def check_sentence_list(X, name="X"):
    """X must be a sequence of strings; returns it as a list."""
    if isinstance(X, (str, bytes)):
        raise TypeError(f"{name} must be a sequence of sentences, not a single string")
    try:
        items = list(X)
    except TypeError:
        raise TypeError(f"{name} must be a sequence of sentences, got {type(X).__name__}")
    for i, s in enumerate(items):
        if not isinstance(s, str):
            raise TypeError(f"{name}[{i}] is {type(s).__name__}, expected str")
    return items


def check_parallel(X, y):
    X = check_sentence_list(X, "X")
    y = check_sentence_list(y, "y")
    if len(X) != len(y):
        raise ValueError(f"X and y are misaligned: {len(X)} vs {len(y)} sentences")
    if not X:
        raise ValueError("cannot fit on an empty corpus")
    return X, y


def check_feature_blocks(features, n, rows=None, dim=None, name="features"):
    """Features for n sentences: an (n, rows, dim) array or a list of
    (rows, dim) arrays. Returns (list of float blocks, rows, dim)."""
    if features is None:
        raise ValueError(f"{name} is required for a multimodal model")
    if isinstance(features, np.ndarray):
        if features.ndim != 3:
            raise ValueError(f"{name} array must be (n_sentences, rows, dim), got shape {features.shape}")
        blocks = list(features)
    else:
        blocks = [np.asarray(b) for b in features]
    if len(blocks) != n:
        raise ValueError(f"{name} has {len(blocks)} blocks for {n} sentences")
    for i, b in enumerate(blocks):
        if b.ndim != 2:
            raise ValueError(f"{name}[{i}] must be 2-dimensional, got shape {b.shape}")
        if rows is None:
            rows, dim = b.shape
        elif b.shape != (rows, dim):
            raise ValueError(f"{name}[{i}] has shape {b.shape}, expected ({rows}, {dim})")
        if not np.isfinite(b).all():
            raise ValueError(f"{name}[{i}] contains non-finite values")
    return blocks, rows, dim

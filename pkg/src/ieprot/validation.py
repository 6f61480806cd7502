"""Input validation for the estimator and other public entry points."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ShapeError
from .pooling import GraphHierarchy, deserialize_hierarchy


def as_hierarchy(obj) -> GraphHierarchy:
    """Coerce a hierarchy, a serialized blob, or a file path."""
    if isinstance(obj, GraphHierarchy):
        if len(obj.levels) != 5:
            raise ShapeError(f"expected a 5-level hierarchy, got {len(obj.levels)} levels")
        return obj
    if isinstance(obj, (bytes, bytearray)):
        return as_hierarchy(deserialize_hierarchy(bytes(obj)))
    if isinstance(obj, (str, Path)):
        return as_hierarchy(deserialize_hierarchy(Path(obj).read_bytes()))
    raise TypeError(f"cannot interpret {type(obj).__name__} as a protein hierarchy")


def check_hierarchies(X) -> list[GraphHierarchy]:
    if isinstance(X, (GraphHierarchy, str, Path, bytes)):
        raise TypeError("X must be a sequence of proteins, not a single protein")
    items = list(X)
    if not items:
        raise ValueError("X is empty")
    return [as_hierarchy(obj) for obj in items]


def check_labels(y, num_samples: int) -> tuple[np.ndarray, np.ndarray]:
    """(classes in sorted order, per-sample class indices)."""
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != num_samples:
        raise ShapeError(f"y must be 1-d with {num_samples} entries, got shape {y.shape}")
    classes, indices = np.unique(y, return_inverse=True)
    if len(classes) < 2:
        raise ValueError("y must contain at least 2 classes")
    return classes, indices.astype(np.int64)

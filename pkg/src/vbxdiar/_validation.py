"""Input validation helpers shared by the estimators and functional API."""

import numpy as np
from sklearn.utils import check_array

from .exceptions import DegenerateInputError, InputError


def check_matrix(X, name="X", n_cols=None, min_rows=1):
    """Return ``X`` as a finite 2-D float64 array, raising :class:`InputError`."""
    try:
        X = check_array(
            X, dtype=np.float64, ensure_2d=True, ensure_min_samples=min_rows,
            ensure_all_finite=True, input_name=name,
        )
    except ValueError as exc:
        raise InputError(f"{name}: {exc}") from exc
    if n_cols is not None and X.shape[1] != n_cols:
        raise InputError(f"{name} has {X.shape[1]} columns, expected {n_cols}")
    return X


def check_vector(v, name, size=None):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise InputError(f"{name} must be 1-D, got shape {v.shape}")
    if size is not None and v.shape[0] != size:
        raise InputError(f"{name} has length {v.shape[0]}, expected {size}")
    if not np.all(np.isfinite(v)):
        raise InputError(f"{name} contains non-finite values")
    return v


def check_labels(labels, n_classes=None, n_samples=None):
    """Validate integer labels in ``[0, n_classes)``; returns an int array."""
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise InputError("labels must be 1-D")
    if labels.size and not np.issubdtype(labels.dtype, np.integer):
        if not np.all(np.equal(np.mod(labels, 1), 0)):
            raise InputError("labels must be integers")
    labels = labels.astype(np.int64)
    if n_samples is not None and labels.shape[0] != n_samples:
        raise InputError(f"got {labels.shape[0]} labels for {n_samples} samples")
    if labels.size and labels.min() < 0:
        raise InputError("labels must be non-negative")
    if n_classes is not None and labels.size and labels.max() >= n_classes:
        raise InputError(f"label {labels.max()} out of range for {n_classes} speakers")
    return labels


def check_nonzero_rows(X, name="X"):
    norms = np.linalg.norm(X, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise DegenerateInputError(f"{name} row {zero[0]} is all zeros")
    return norms


def relabel_by_first_occurrence(labels):
    """Map arbitrary labels to 0..K-1 numbered in order of first appearance."""
    _, first, inverse = np.unique(np.asarray(labels), return_index=True, return_inverse=True)
    rank = np.empty_like(first)
    rank[np.argsort(first, kind="stable")] = np.arange(first.size)
    return rank[inverse]

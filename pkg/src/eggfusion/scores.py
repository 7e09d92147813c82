"""Class-score vectors: validation helpers shared by the detector, SVM and fusion."""

from __future__ import annotations

import numpy as np

from .errors import ContractError

SIMPLEX_TOL = 1e-6


def as_simplex(scores, num_classes: int | None = None) -> np.ndarray:
    """Return ``scores`` as a float64 probability vector or raise ContractError."""
    p = np.asarray(scores, dtype=np.float64).reshape(-1)
    if num_classes is not None and p.size != num_classes:
        raise ContractError(f"expected {num_classes} class scores, got {p.size}")
    if (
        p.size == 0
        or not np.isfinite(p).all()
        or (p < 0).any()
        or (p > 1).any()
        or abs(p.sum() - 1.0) > SIMPLEX_TOL
    ):
        raise ContractError(f"not a probability vector: {p.tolist()}")
    return p


def argmax_lowest(p: np.ndarray) -> int:
    """Index of the largest entry; ties go to the lowest index."""
    return int(np.argmax(p))

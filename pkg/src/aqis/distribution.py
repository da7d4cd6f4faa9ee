from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Distribution"]


def _group(values, merge_tol):
    """Sort ``values`` and label runs whose consecutive gaps are <= merge_tol."""
    order = np.argsort(values, kind="stable")
    v = values[order]
    new = np.ones(v.size, dtype=bool)
    new[1:] = np.diff(v) > merge_tol
    return order, np.cumsum(new) - 1


@dataclass(frozen=True, eq=False)
class Distribution:
    """Discrete probability distribution over a strictly increasing support.

    ``edges`` is set for histograms (length ``len(support) + 1``).
    """

    support: np.ndarray
    probabilities: np.ndarray
    edges: np.ndarray | None = None

    def __post_init__(self):
        s = np.asarray(self.support, dtype=float)
        p = np.asarray(self.probabilities, dtype=float)
        if s.shape != p.shape or s.ndim != 1:
            raise ValueError("support and probabilities must be 1-d arrays of equal length")
        if s.size > 1 and not np.all(np.diff(s) > 0):
            raise ValueError("support must be strictly increasing")
        if np.any(p < 0):
            raise ValueError("negative probability")
        object.__setattr__(self, "support", s)
        object.__setattr__(self, "probabilities", p)

    @classmethod
    def from_samples(cls, values, weights, merge_tol=0.0) -> "Distribution":
        """Aggregate weighted values; values within ``merge_tol`` of a neighbour are merged."""
        values = np.asarray(values, dtype=float)
        weights = np.asarray(weights, dtype=float)
        if values.size == 0:
            return cls(values, weights)
        order, gid = _group(values, merge_tol)
        probs = np.bincount(gid, weights=weights[order])
        centers = np.bincount(gid, weights=values[order]) / np.bincount(gid)
        return cls(centers, probs)

    @property
    def total(self) -> float:
        return float(self.probabilities.sum())

    def mean(self) -> float:
        return float(np.dot(self.support, self.probabilities) / self.total)

    def mass_where(self, mask_fn) -> float:
        return float(self.probabilities[mask_fn(self.support)].sum())

    def total_variation(self, other: "Distribution", tol=1e-9) -> float:
        """Total-variation distance; support points within ``tol`` are identified."""
        vals = np.concatenate([self.support, other.support])
        w = np.concatenate([self.probabilities, -other.probabilities])
        order, gid = _group(vals, tol)
        return 0.5 * float(np.abs(np.bincount(gid, weights=w[order])).sum())

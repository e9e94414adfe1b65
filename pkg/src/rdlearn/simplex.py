"""Simplex vertex encoding of treatment arms.

k arms are represented by the k vertices of a regular (k-1)-dimensional
simplex centered at the origin: unit vectors with pairwise inner product
-1/(k-1). A (k-1)-dimensional decision function f encodes the per-arm
effects through the inner products <W_j, f>, which automatically sum to
zero over arms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

CONSTRUCTION_TOL = 1e-12
ROUNDTRIP_TOL = 1e-9


@dataclass(frozen=True)
class SimplexVertices:
    k: int
    w: np.ndarray  # (k, k-1), row j-1 = W_j

    def __post_init__(self):
        self.w.setflags(write=False)


def build_vertices(k: int) -> SimplexVertices:
    """Vertices W_1..W_k of the regular simplex in R^(k-1).

    W_1 = (k-1)^(-1/2) * ones; for j >= 2,
    W_j = -(1 + sqrt(k)) (k-1)^(-3/2) * ones + sqrt(k/(k-1)) * e_{j-1}.
    """
    if k < 2:
        raise DomainError("need at least 2 arms, got k=%d" % k)
    km1 = k - 1
    w = np.empty((k, km1))
    w[0] = km1 ** -0.5
    base = -(1.0 + np.sqrt(k)) * km1 ** -1.5
    bump = np.sqrt(k / km1)
    for j in range(1, k):
        w[j] = base
        w[j, j - 1] += bump
    return SimplexVertices(k=k, w=w)


def effects_from_f(v: SimplexVertices, f: np.ndarray) -> np.ndarray:
    """Per-arm effects (<W_1, f>, ..., <W_k, f>); sums to zero."""
    f = np.asarray(f, dtype=float)
    if f.shape[-1] != v.k - 1:
        raise DomainError("f has length %d, expected %d" % (f.shape[-1], v.k - 1))
    if not np.all(np.isfinite(f)):
        raise DomainError("non-finite decision function values")
    return f @ v.w.T


def f_from_effects(v: SimplexVertices, d: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Unique f with <W_j, f> = d_j, for zero-sum d.

    The vertex matrix has orthogonal columns of squared norm k/(k-1), so
    the pseudoinverse is ((k-1)/k) W^T and no general solver is needed.
    """
    d = np.asarray(d, dtype=float)
    if d.shape[-1] != v.k:
        raise DomainError("d has length %d, expected %d" % (d.shape[-1], v.k))
    scale = max(1.0, float(np.max(np.abs(d))))
    total = np.abs(d.sum(axis=-1))
    if np.any(total > tol * scale):
        raise DomainError("effects must sum to zero (got residual %g)"
                          % float(np.max(total)))
    return ((v.k - 1) / v.k) * (d @ v.w)

"""Regression engines: weighted least squares, weighted LASSO via cyclic
coordinate descent, and weighted Gaussian kernel ridge regression.

All solvers are pure and deterministic. Intercepts are never penalized.
The LASSO objective follows the 1/(2n) loss convention

    (2n)^-1 sum_i w_i (y_i - b0 - z_i' b)^2 + lam * sum_j pf_j |b_j|,

so the null-model threshold is lam_max = max_j |Z' W (y - ybar_w)| / n
and on an orthonormal weighted design the solution is the soft threshold
of the least-squares coefficients at lam.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial.distance import cdist, pdist

from .core import RngSpec
from .errors import DomainError, SingularMatrixError

# Diagonal jitter escalation for near-singular SPD systems.
JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


def solve_spd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a x = b for symmetric positive-definite a, with jitter escalation."""
    a = np.asarray(a, dtype=float)
    scale = float(np.mean(np.diag(a)))
    if scale <= 0 or not np.isfinite(scale):
        scale = 1.0
    for jitter in JITTERS:
        try:
            factor = cho_factor(a + jitter * scale * np.eye(a.shape[0]), lower=True)
            return cho_solve(factor, b)
        except np.linalg.LinAlgError:
            continue
    cond = float(np.linalg.cond(a))
    raise SingularMatrixError(
        "system stayed singular after jitter escalation (cond ~ %.3g)" % cond,
        cond=cond,
    )


@dataclass(frozen=True)
class WlsFit:
    beta: np.ndarray
    weights: np.ndarray
    residuals: np.ndarray

    def predict(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=float) @ self.beta


def weighted_ls(z: np.ndarray, y: np.ndarray, w: np.ndarray) -> WlsFit:
    """beta = (Z' diag(w) Z)^-1 Z' diag(w) y."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise DomainError("weights must be strictly positive")
    zw = z * w[:, None]
    beta = solve_spd(z.T @ zw, zw.T @ y)
    return WlsFit(beta=beta, weights=w, residuals=y - z @ beta)


def soft_threshold(z: float, t: float) -> float:
    """sign(z) * max(|z| - t, 0)."""
    if t < 0:
        raise DomainError("threshold must be nonnegative")
    return np.sign(z) * max(abs(z) - t, 0.0)


@dataclass(frozen=True)
class LassoFit:
    beta: np.ndarray
    intercept: float
    lam: float
    iterations: int
    converged: bool
    kkt_gap: float
    objective_path: tuple = field(repr=False, default=())

    def predict(self, z: np.ndarray) -> np.ndarray:
        return self.intercept + np.asarray(z, dtype=float) @ self.beta


def weighted_lasso(
    z: np.ndarray,
    y: np.ndarray,
    w: np.ndarray,
    lam: float,
    *,
    fit_intercept: bool = True,
    penalty_factor: np.ndarray | None = None,
    tol: float = 1e-7,
    max_sweeps: int = 10000,
    warm_start: np.ndarray | None = None,
) -> LassoFit:
    """Cyclic coordinate descent on columns standardized to unit weighted
    scale; coefficients are returned on the original scale.

    penalty_factor scales the penalty per column; zero entries mark
    unpenalized columns (used for intercept blocks in stacked designs).
    warm_start takes a raw-scale coefficient vector (e.g. the solution at
    a nearby lambda) as the starting point; it changes only the sweep
    count, not the solution tolerance.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    n, p = z.shape
    if lam < 0:
        raise DomainError("lambda must be nonnegative")
    if np.any(w <= 0):
        raise DomainError("weights must be strictly positive")
    pf = np.ones(p) if penalty_factor is None else np.asarray(penalty_factor, float)

    wsum = w.sum()
    if fit_intercept:
        mu = (w @ z) / wsum
        ybar = float(w @ y) / wsum
    else:
        mu = np.zeros(p)
        ybar = 0.0
    zc = z - mu
    scale = np.sqrt((w @ zc**2) / n)
    active_cols = scale > 0
    scale_safe = np.where(active_cols, scale, 1.0)
    zs = zc / scale_safe
    yc = y - ybar

    if warm_start is not None:
        b = np.asarray(warm_start, dtype=float) * scale_safe
        b[~active_cols] = 0.0
        r = yc - zs @ b
    else:
        b = np.zeros(p)
        r = yc.copy()
    wz = w[:, None] * zs  # precomputed for the rho updates
    objective = []
    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        max_delta = 0.0
        for j in range(p):
            if not active_cols[j]:
                continue
            old = b[j]
            rho = old + (wz[:, j] @ r) / n
            new = soft_threshold(rho, lam * pf[j]) if pf[j] > 0 else rho
            if new != old:
                r += zs[:, j] * (old - new)
                b[j] = new
            max_delta = max(max_delta, abs(new - old) / scale_safe[j])
        objective.append(
            float((w @ r**2) / (2 * n) + lam * float(pf @ np.abs(b)))
        )
        if max_delta < tol:
            converged = True
            break

    beta = b / scale_safe
    beta[~active_cols] = 0.0
    intercept = ybar - float(mu @ beta) if fit_intercept else 0.0

    # KKT gap of the standardized problem (the one actually minimized;
    # standardization rescales the per-column penalty on the raw scale).
    g = (wz.T @ r) / n
    gaps = np.where(
        b != 0,
        np.abs(g - lam * pf * np.sign(b)),
        np.maximum(np.abs(g) - lam * pf, 0.0),
    )
    gaps[~active_cols] = 0.0
    return LassoFit(
        beta=beta,
        intercept=intercept,
        lam=lam,
        iterations=sweeps,
        converged=converged,
        kkt_gap=float(np.max(gaps)) if p else 0.0,
        objective_path=tuple(objective),
    )


def lasso_lambda_max(
    z: np.ndarray,
    y: np.ndarray,
    w: np.ndarray,
    *,
    fit_intercept: bool = True,
    penalty_factor: np.ndarray | None = None,
) -> float:
    """Smallest lam at which all penalized coefficients are zero
    (computed on the internally standardized design)."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    n, p = z.shape
    pf = np.ones(p) if penalty_factor is None else np.asarray(penalty_factor, float)
    wsum = w.sum()
    if fit_intercept:
        mu = (w @ z) / wsum
        ybar = float(w @ y) / wsum
    else:
        mu, ybar = np.zeros(p), 0.0
    zc = z - mu
    scale = np.sqrt((w @ zc**2) / n)
    yc = y - ybar
    if np.any(pf == 0):
        # Residualize against the unpenalized block first.
        free = pf == 0
        fit = weighted_ls(zc[:, free], yc, w)
        yc = yc - zc[:, free] @ fit.beta
    grads = np.zeros(p)
    mask = (scale > 0) & (pf > 0)
    grads[mask] = np.abs((w * yc) @ zc[:, mask]) / (n * scale[mask] * pf[mask])
    return float(np.max(grads)) if np.any(mask) else 0.0


def lambda_grid(lam_max: float, n_lambdas: int = 50, decades: float = 4.0) -> np.ndarray:
    lam_max = max(lam_max, 1e-12)
    return np.geomspace(lam_max, lam_max * 10.0 ** (-decades), n_lambdas)


def cv_weighted_lasso(
    z: np.ndarray,
    y: np.ndarray,
    w: np.ndarray,
    rng: RngSpec | np.random.Generator,
    *,
    fit_intercept: bool = True,
    penalty_factor: np.ndarray | None = None,
    n_folds: int = 5,
    n_lambdas: int = 50,
    decades: float = 4.0,
) -> LassoFit:
    """5-fold CV over a log grid from lam_max down `decades` decades,
    then a refit on the full data at the selected lam."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    n = len(y)
    grid = lambda_grid(
        lasso_lambda_max(z, y, w, fit_intercept=fit_intercept,
                         penalty_factor=penalty_factor),
        n_lambdas,
        decades,
    )
    folds = _fold_assignment(n, n_folds, rng)
    errors = np.zeros(len(grid))
    for fold in range(n_folds):
        test = folds == fold
        if not np.any(test) or np.all(test):
            continue
        train = ~test
        prev = None   # warm start down the descending lambda path
        for g, lam in enumerate(grid):
            fit = weighted_lasso(
                z[train], y[train], w[train], lam,
                fit_intercept=fit_intercept, penalty_factor=penalty_factor,
                warm_start=prev,
            )
            prev = fit.beta
            resid = y[test] - fit.predict(z[test])
            errors[g] += float(w[test] @ resid**2)
    best_idx = int(np.argmin(errors))
    prev = None
    for lam in grid[: best_idx + 1]:
        fit = weighted_lasso(z, y, w, lam, fit_intercept=fit_intercept,
                             penalty_factor=penalty_factor, warm_start=prev)
        prev = fit.beta
    return fit


def _fold_assignment(n: int, n_folds: int, rng) -> np.ndarray:
    gen = rng.generator() if isinstance(rng, RngSpec) else rng
    folds = np.arange(n) % n_folds
    return folds[gen.permutation(n)]


def gaussian_gram(x: np.ndarray, x2: np.ndarray, bandwidth: float) -> np.ndarray:
    """Entry (i, j) = exp(-||x2_i - x_j||^2 / (2 bandwidth^2))."""
    if bandwidth <= 0:
        raise DomainError("bandwidth must be positive")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    x2 = np.atleast_2d(np.asarray(x2, dtype=float))
    d2 = cdist(x2, x, metric="sqeuclidean")
    return np.exp(-d2 / (2.0 * bandwidth**2))


def median_bandwidth(x: np.ndarray, max_points: int = 500,
                     rng: RngSpec | None = None) -> float:
    """Median pairwise distance over a subsample of min(n, max_points) points."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[0]
    if n > max_points:
        gen = (rng or RngSpec(0, 0)).generator(max_points)
        x = x[gen.choice(n, size=max_points, replace=False)]
    if x.shape[0] < 2:
        return 1.0
    med = float(np.median(pdist(x)))
    return med if med > 0 else 1.0


@dataclass(frozen=True)
class KernelFit:
    alpha: np.ndarray
    intercept: float
    bandwidth: float
    ridge: float
    x_train: np.ndarray

    def predict(self, x: np.ndarray) -> np.ndarray:
        gram = gaussian_gram(self.x_train, x, self.bandwidth)
        return self.intercept + gram @ self.alpha


def weighted_kernel_ridge(
    x: np.ndarray,
    r: np.ndarray,
    w: np.ndarray,
    lam: float,
    bandwidth: float | None = None,
) -> KernelFit:
    """Minimize n^-1 sum_i w_i (r_i - b0 - K_i' a)^2 + lam a' K a.

    Stationarity reduces to (K + n lam diag(w)^-1) a = r - b0 * 1 with the
    unpenalized intercept b0 solving the weighted normal equation; both are
    solved jointly through two SPD solves against the same factorization.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    r = np.asarray(r, dtype=float)
    w = np.asarray(w, dtype=float)
    n = len(r)
    if lam <= 0:
        raise DomainError("ridge penalty must be positive")
    if np.any(w <= 0):
        raise DomainError("weights must be strictly positive")
    if bandwidth is None:
        bandwidth = median_bandwidth(x)
    gram = gaussian_gram(x, x, bandwidth)
    m = gram + n * lam * np.diag(1.0 / w)
    solved = solve_spd(m, np.column_stack([r, np.ones(n)]))
    u, v = solved[:, 0], solved[:, 1]
    ku, kv = gram @ u, gram @ v
    denom = w.sum() - float(w @ kv)
    intercept = float(w @ (r - ku)) / denom
    alpha = u - intercept * v
    return KernelFit(alpha=alpha, intercept=intercept, bandwidth=bandwidth,
                     ridge=lam, x_train=x)


def cv_weighted_kernel_ridge(
    x: np.ndarray,
    r: np.ndarray,
    w: np.ndarray,
    rng: RngSpec | np.random.Generator,
    *,
    bandwidth: float | None = None,
    lambdas: np.ndarray | None = None,
    n_folds: int = 5,
) -> KernelFit:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    r = np.asarray(r, dtype=float)
    w = np.asarray(w, dtype=float)
    n = len(r)
    if bandwidth is None:
        bandwidth = median_bandwidth(x)
    if lambdas is None:
        lambdas = np.geomspace(1e-4, 10.0, 10)
    folds = _fold_assignment(n, n_folds, rng)
    errors = np.zeros(len(lambdas))
    for fold in range(n_folds):
        test = folds == fold
        if not np.any(test) or np.all(test):
            continue
        train = ~test
        for g, lam in enumerate(lambdas):
            fit = weighted_kernel_ridge(x[train], r[train], w[train], lam,
                                        bandwidth=bandwidth)
            resid = r[test] - fit.predict(x[test])
            errors[g] += float(w[test] @ resid**2)
    best = float(lambdas[int(np.argmin(errors))])
    return weighted_kernel_ridge(x, r, w, best, bandwidth=bandwidth)

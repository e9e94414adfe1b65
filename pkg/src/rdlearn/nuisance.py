"""Step-one estimators: propensity scores and the main effect.

Propensities come in three flavors: known constants, known functions of
the covariates, or a multinomial logistic model fit by Newton iterations
(IRLS). Predicted probabilities are renormalized to the simplex and
clipped at a configurable floor before inversion into weights.

The main effect is fit directly on the whole sample by inverse-propensity
weighted regression (LASSO or Gaussian kernel ridge), with a per-arm
Q-Learning average available as the baseline comparator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import Dataset, RngSpec, augment
from .errors import DomainError
from . import solvers

DEFAULT_CLIP = 0.05


@dataclass(frozen=True)
class PropensityModel:
    kind: str                      # known-constant | known-function | multinomial-logistic
    k: int
    clip: float = DEFAULT_CLIP
    probs: np.ndarray | None = None          # known-constant: (k,)
    func: Callable | None = field(default=None, repr=False)  # known-function: x -> (n, k)
    func_name: str | None = None
    coef: np.ndarray | None = None           # mlogit: (p+1, k-1), reference arm k
    separation_warning: bool = False

    def __post_init__(self):
        if not 0.0 < self.clip < 0.5:
            raise DomainError("clip floor must lie in (0, 0.5)")

    @property
    def known(self) -> bool:
        return self.kind in ("known-constant", "known-function")

    def predict_probs(self, x: np.ndarray) -> np.ndarray:
        """(n, k) probabilities, renormalized to sum to one."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = x.shape[0]
        if self.kind == "known-constant":
            raw = np.tile(self.probs, (n, 1))
        elif self.kind == "known-function":
            raw = np.atleast_2d(np.asarray(self.func(x), dtype=float))
            if raw.shape != (n, self.k):
                raise DomainError("propensity function returned shape %s, "
                                  "expected (%d, %d)" % (raw.shape, n, self.k))
        elif self.kind == "multinomial-logistic":
            eta = augment(x) @ self.coef
            eta = np.column_stack([eta, np.zeros(n)])
            eta -= eta.max(axis=1, keepdims=True)
            raw = np.exp(eta)
        else:
            raise DomainError("unknown propensity kind %r" % self.kind)
        return raw / raw.sum(axis=1, keepdims=True)


def known_constant_propensity(probs, clip: float = DEFAULT_CLIP) -> PropensityModel:
    probs = np.asarray(probs, dtype=float)
    if np.any(probs <= 0) or abs(probs.sum() - 1.0) > 1e-8:
        raise DomainError("constant propensities must be positive and sum to 1")
    return PropensityModel(kind="known-constant", k=len(probs), clip=clip, probs=probs)


def known_function_propensity(func: Callable, k: int, name: str | None = None,
                              clip: float = DEFAULT_CLIP) -> PropensityModel:
    return PropensityModel(kind="known-function", k=k, clip=clip, func=func,
                           func_name=name)


def fit_propensity_mlogit(
    data: Dataset,
    clip: float = DEFAULT_CLIP,
    ridge: float = 1e-8,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> PropensityModel:
    """Multinomial logistic regression by Newton iterations, arm k as reference."""
    data.require_all_arms(min_count=2)
    k = data.k
    if k < 2:
        raise DomainError("propensity fitting needs k >= 2")
    x = augment(data.x)
    n, q = x.shape
    onehot = np.zeros((n, k - 1))
    for j in range(k - 1):
        onehot[:, j] = data.a == j + 1

    coef = np.zeros((q, k - 1))
    pi_full = np.full((n, k), 1.0 / k)
    for _ in range(max_iter):
        eta = np.column_stack([x @ coef, np.zeros(n)])
        eta -= eta.max(axis=1, keepdims=True)
        pi_full = np.exp(eta)
        pi_full /= pi_full.sum(axis=1, keepdims=True)
        pi = pi_full[:, : k - 1]

        grad = x.T @ (onehot - pi) - ridge * coef
        hess = np.empty((q * (k - 1), q * (k - 1)))
        for j in range(k - 1):
            for l in range(k - 1):
                wjl = pi[:, j] * ((j == l) - pi[:, l])
                hess[j * q:(j + 1) * q, l * q:(l + 1) * q] = x.T @ (wjl[:, None] * x)
        hess += ridge * np.eye(q * (k - 1))
        step = solvers.solve_spd(hess, grad.T.ravel()).reshape(k - 1, q).T
        coef = coef + step
        if np.max(np.abs(step)) < tol:
            break

    # Quasi-separation: some observation's own arm is fit with probability
    # numerically equal to one (or the coefficients have blown up).
    own = pi_full[np.arange(n), data.a - 1]
    separated = bool(np.max(own) > 1.0 - 1e-6 or np.max(np.abs(coef)) > 1e3)
    return PropensityModel(
        kind="multinomial-logistic",
        k=k,
        clip=clip,
        coef=coef,
        separation_warning=separated,
    )


def clip_and_invert(model: PropensityModel, x: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Inverse-propensity weights w_i = 1 / max(p_hat_{a_i}(x_i), clip)."""
    probs = model.predict_probs(x)
    a = np.asarray(a, dtype=int)
    selected = probs[np.arange(len(a)), a - 1]
    return 1.0 / np.maximum(selected, model.clip)


@dataclass(frozen=True)
class MainEffectModel:
    kind: str                      # zero | linear-lasso | kernel-ridge | qlearning-average
    fits: tuple = ()
    training_summary: dict = field(default_factory=dict)

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == "zero":
            return np.zeros(x.shape[0])
        if self.kind in ("linear-lasso", "kernel-ridge"):
            return self.fits[0].predict(x)
        if self.kind == "qlearning-average":
            preds = np.column_stack([fit.predict(x) for fit in self.fits])
            return preds.mean(axis=1)
        raise DomainError("unknown main effect kind %r" % self.kind)


def zero_main_effect() -> MainEffectModel:
    return MainEffectModel(kind="zero")


def fit_main_effect(
    data: Dataset,
    model: PropensityModel,
    space: str = "linear-lasso",
    *,
    lam: float | None = None,
    bandwidth: float | None = None,
    rng: RngSpec | None = None,
) -> MainEffectModel:
    """Direct main-effect fit: weighted regression of y on x with
    inverse-propensity weights, using all observations at once."""
    rng = rng or RngSpec(0, 0)
    w = clip_and_invert(model, data.x, data.a)
    if space == "linear-lasso":
        if lam is None:
            fit = solvers.cv_weighted_lasso(data.x, data.y, w, rng.generator(11))
        else:
            fit = solvers.weighted_lasso(data.x, data.y, w, lam)
        summary = {"lambda": fit.lam, "converged": fit.converged}
    elif space == "kernel-ridge":
        if lam is None:
            fit = solvers.cv_weighted_kernel_ridge(
                data.x, data.y, w, rng.generator(12), bandwidth=bandwidth)
        else:
            fit = solvers.weighted_kernel_ridge(data.x, data.y, w, lam,
                                                bandwidth=bandwidth)
        summary = {"lambda": fit.ridge, "bandwidth": fit.bandwidth}
    else:
        raise DomainError("unknown main effect space %r" % space)
    return MainEffectModel(kind=space, fits=(fit,), training_summary=summary)


def qlearning_main_effect(
    data: Dataset,
    space: str = "linear-lasso",
    *,
    lam: float | None = None,
    bandwidth: float | None = None,
    rng: RngSpec | None = None,
) -> MainEffectModel:
    """Baseline: fit each arm's conditional mean separately, average them."""
    rng = rng or RngSpec(0, 0)
    data.require_all_arms(min_count=2)
    fits = []
    for j in range(1, data.k + 1):
        mask = data.a == j
        xj, yj = data.x[mask], data.y[mask]
        wj = np.ones(mask.sum())
        if space == "linear-lasso":
            if lam is None:
                fit = solvers.cv_weighted_lasso(xj, yj, wj, rng.generator(21, j))
            else:
                fit = solvers.weighted_lasso(xj, yj, wj, lam)
        elif space == "kernel-ridge":
            if lam is None:
                fit = solvers.cv_weighted_kernel_ridge(
                    xj, yj, wj, rng.generator(22, j), bandwidth=bandwidth)
            else:
                fit = solvers.weighted_kernel_ridge(xj, yj, wj, lam,
                                                    bandwidth=bandwidth)
        else:
            raise DomainError("unknown main effect space %r" % space)
        fits.append(fit)
    return MainEffectModel(kind="qlearning-average", fits=tuple(fits))

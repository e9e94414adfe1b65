"""CATE estimators: RD-Learning (residualized, doubly robust), plus the
D-Learning and Q-Learning baselines.

Multi-arm fits use the simplex encoding: observation i with arm a_i
contributes the stacked design row W_{a_i} (x) x_i, so the whole
(k-1)-dimensional decision function is estimated in one weighted
regression. For k = 2 this collapses exactly to the sign-based binary
objective, and a dedicated binary closed-form path is provided as a
consistency oracle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import Dataset, RngSpec, augment
from .errors import DomainError
from .nuisance import MainEffectModel, PropensityModel, clip_and_invert, zero_main_effect
from .simplex import SimplexVertices, build_vertices
from . import solvers

FORMAT_VERSION = 1


@dataclass(frozen=True)
class _LinearModel:
    beta: np.ndarray  # (p+1,), intercept first

    def predict(self, x: np.ndarray) -> np.ndarray:
        return augment(x) @ self.beta


@dataclass(frozen=True)
class TreatmentEffectFit:
    method: str                  # rd | d | q
    space: str                   # linear | linear-lasso | kernel
    k: int
    p: int
    vertices: SimplexVertices
    coef: np.ndarray | None = None       # (p+1, k-1) for linear spaces
    intercepts: np.ndarray | None = None  # kernel: (k-1,)
    alpha: np.ndarray | None = None       # kernel: (n, k-1)
    x_train: np.ndarray | None = field(default=None, repr=False)
    bandwidth: float | None = None
    lam: float | None = None
    arm_models: tuple = ()               # q: one predictor per arm
    nuisance_summary: dict = field(default_factory=dict)

    def predict_f(self, x: np.ndarray) -> np.ndarray:
        """(m, k-1) decision function values (rd/d methods only)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.p:
            raise DomainError("x has %d columns, expected %d" % (x.shape[1], self.p))
        if self.method == "q":
            raise DomainError("Q-Learning fits have no decision function")
        if self.space in ("linear", "linear-lasso"):
            return augment(x) @ self.coef
        gram = solvers.gaussian_gram(self.x_train, x, self.bandwidth)
        return self.intercepts + gram @ self.alpha


def predict_effects(fit: TreatmentEffectFit, x: np.ndarray) -> np.ndarray:
    """(m, k) matrix of per-arm effects; rows sum to zero."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != fit.p:
        raise DomainError("x has %d columns, expected %d" % (x.shape[1], fit.p))
    if fit.method == "q":
        mu = np.column_stack([m.predict(x) for m in fit.arm_models])
        return mu - mu.mean(axis=1, keepdims=True)
    return fit.predict_f(x) @ fit.vertices.w.T


@dataclass(frozen=True)
class ItrRule:
    fit: TreatmentEffectFit

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Arm labels in {1..k}; ties resolve to the lowest index."""
        effects = predict_effects(self.fit, x)
        return np.argmax(effects, axis=1) + 1


def itr(fit: TreatmentEffectFit) -> ItrRule:
    return ItrRule(fit=fit)


def apply_itr(rule: ItrRule, x: np.ndarray) -> np.ndarray:
    return rule.apply(x)


def _stacked_design(x_aug: np.ndarray, w_obs: np.ndarray) -> np.ndarray:
    # Row i is the Kronecker block (W_{a_i,1} x_i, ..., W_{a_i,k-1} x_i).
    n = x_aug.shape[0]
    return (w_obs[:, :, None] * x_aug[:, None, :]).reshape(n, -1)


def fit_rd(
    data: Dataset,
    prop: PropensityModel,
    main: MainEffectModel,
    space: str = "linear",
    *,
    lam: float | None = None,
    bandwidth: float | None = None,
    rng: RngSpec | None = None,
) -> TreatmentEffectFit:
    """Residualized treatment-effect fit on r_i = y_i - mhat(x_i) with
    inverse-propensity weights."""
    if data.k < 2:
        raise DomainError("treatment effect estimation needs k >= 2")
    data.require_all_arms()
    rng = rng or RngSpec(0, 0)
    vertices = build_vertices(data.k)
    w = clip_and_invert(prop, data.x, data.a)
    resid = data.y - main.predict(data.x)
    w_obs = vertices.w[data.a - 1]  # (n, k-1)
    method = "d" if main.kind == "zero" else "rd"
    summary = {"propensity": prop.kind, "main_effect": main.kind}

    if space == "linear":
        design = _stacked_design(augment(data.x), w_obs)
        beta = solvers.weighted_ls(design, resid, w).beta
        coef = beta.reshape(data.k - 1, data.p + 1).T
        return TreatmentEffectFit(method=method, space=space, k=data.k, p=data.p,
                                  vertices=vertices, coef=coef,
                                  nuisance_summary=summary)
    if space == "linear-lasso":
        design = _stacked_design(augment(data.x), w_obs)
        pf = np.tile(np.r_[0.0, np.ones(data.p)], data.k - 1)
        if lam is None:
            fit = solvers.cv_weighted_lasso(design, resid, w, rng.generator(31),
                                            fit_intercept=False, penalty_factor=pf)
        else:
            fit = solvers.weighted_lasso(design, resid, w, lam,
                                         fit_intercept=False, penalty_factor=pf)
        coef = fit.beta.reshape(data.k - 1, data.p + 1).T
        return TreatmentEffectFit(method=method, space=space, k=data.k, p=data.p,
                                  vertices=vertices, coef=coef, lam=fit.lam,
                                  nuisance_summary=summary)
    if space == "kernel":
        intercepts, alpha, used_lam, used_bw = _fit_kernel_stacked(
            data, resid, w, w_obs, lam, bandwidth, rng)
        return TreatmentEffectFit(method=method, space=space, k=data.k, p=data.p,
                                  vertices=vertices, intercepts=intercepts,
                                  alpha=alpha, x_train=data.x,
                                  bandwidth=used_bw, lam=used_lam,
                                  nuisance_summary=summary)
    raise DomainError("unknown function space %r" % space)


def _fit_kernel_stacked(data, resid, w, w_obs, lam, bandwidth, rng):
    n, km1 = w_obs.shape
    bw = bandwidth if bandwidth is not None else solvers.median_bandwidth(data.x)
    if lam is None:
        lambdas = np.geomspace(1e-4, 10.0, 10)
        folds = solvers._fold_assignment(n, 5, rng.generator(32))
        errors = np.zeros(len(lambdas))
        for fold in range(5):
            test = folds == fold
            if not np.any(test) or np.all(test):
                continue
            train = ~test
            for g, lam_g in enumerate(lambdas):
                b0, al = _solve_kernel_stacked(
                    data.x[train], resid[train], w[train], w_obs[train], lam_g, bw)
                gram = solvers.gaussian_gram(data.x[train], data.x[test], bw)
                f_test = b0 + gram @ al
                pred = np.sum(w_obs[test] * f_test, axis=1)
                errors[g] += float(w[test] @ (resid[test] - pred) ** 2)
        lam = float(lambdas[int(np.argmin(errors))])
    intercepts, alpha = _solve_kernel_stacked(data.x, resid, w, w_obs, lam, bw)
    return intercepts, alpha, lam, bw


def _solve_kernel_stacked(x, resid, w, w_obs, lam, bandwidth):
    """Minimize n^-1 sum_i w_i (r_i - <W_{a_i}, b0 + K_i' B>)^2
    + lam * sum_d b_d' K b_d over intercepts b0 and columns of B."""
    n, km1 = w_obs.shape
    gram = solvers.gaussian_gram(x, x, bandwidth)
    # Stacked parameter theta = (b0_1..b0_{k-1}, vec(B) by dimension).
    design = np.hstack([w_obs, _stacked_design(gram, w_obs)])
    dim = km1 * (n + 1)
    a = (design * w[:, None]).T @ design / n
    penalty = np.zeros((dim, dim))
    for d in range(km1):
        lo = km1 + d * n
        penalty[lo:lo + n, lo:lo + n] = gram
    rhs = (design * w[:, None]).T @ resid / n
    theta = solvers.solve_spd(a + lam * penalty, rhs)
    intercepts = theta[:km1]
    alpha = theta[km1:].reshape(km1, n).T
    return intercepts, alpha


def fit_rd_binary(
    data: Dataset,
    prop: PropensityModel,
    main: MainEffectModel,
    *,
    lam: float | None = None,
    rng: RngSpec | None = None,
    space: str = "linear",
) -> TreatmentEffectFit:
    """Dedicated k=2 path: regress the residual on the sign-modified
    covariates (arm 1 -> +1, arm 2 -> -1). Agrees with the stacked
    simplex fit, which is verified in tests."""
    if data.k != 2:
        raise DomainError("binary path requires k = 2")
    rng = rng or RngSpec(0, 0)
    vertices = build_vertices(2)
    w = clip_and_invert(prop, data.x, data.a)
    resid = data.y - main.predict(data.x)
    signs = np.where(data.a == 1, 1.0, -1.0)
    method = "d" if main.kind == "zero" else "rd"
    if space == "linear":
        design = signs[:, None] * augment(data.x)
        beta = solvers.weighted_ls(design, resid, w).beta
        coef = beta[:, None]
        return TreatmentEffectFit(method=method, space="linear", k=2, p=data.p,
                                  vertices=vertices, coef=coef)
    if space == "linear-lasso":
        design = signs[:, None] * augment(data.x)
        pf = np.r_[0.0, np.ones(data.p)]
        if lam is None:
            fit = solvers.cv_weighted_lasso(design, resid, w, rng.generator(31),
                                            fit_intercept=False, penalty_factor=pf)
        else:
            fit = solvers.weighted_lasso(design, resid, w, lam,
                                         fit_intercept=False, penalty_factor=pf)
        return TreatmentEffectFit(method=method, space="linear-lasso", k=2, p=data.p,
                                  vertices=vertices, coef=fit.beta[:, None],
                                  lam=fit.lam)
    raise DomainError("binary path supports linear spaces only")


def fit_d(
    data: Dataset,
    prop: PropensityModel,
    space: str = "linear",
    *,
    lam: float | None = None,
    bandwidth: float | None = None,
    rng: RngSpec | None = None,
) -> TreatmentEffectFit:
    """Direct learning: the residualized fit with mhat = 0."""
    return fit_rd(data, prop, zero_main_effect(), space,
                  lam=lam, bandwidth=bandwidth, rng=rng)


def fit_q(
    data: Dataset,
    space: str = "linear",
    *,
    lam: float | None = None,
    bandwidth: float | None = None,
    rng: RngSpec | None = None,
) -> TreatmentEffectFit:
    """Per-arm outcome regression; effects are the centered fitted means."""
    if data.k < 2:
        raise DomainError("treatment effect estimation needs k >= 2")
    data.require_all_arms()
    rng = rng or RngSpec(0, 0)
    models = []
    for j in range(1, data.k + 1):
        mask = data.a == j
        xj, yj = data.x[mask], data.y[mask]
        wj = np.ones(int(mask.sum()))
        if space == "linear":
            beta = solvers.weighted_ls(augment(xj), yj, wj).beta
            models.append(_LinearModel(beta=beta))
        elif space == "linear-lasso":
            if lam is None:
                models.append(solvers.cv_weighted_lasso(xj, yj, wj,
                                                        rng.generator(41, j)))
            else:
                models.append(solvers.weighted_lasso(xj, yj, wj, lam))
        elif space == "kernel":
            bw = bandwidth if bandwidth is not None else solvers.median_bandwidth(data.x)
            if lam is None:
                models.append(solvers.cv_weighted_kernel_ridge(
                    xj, yj, wj, rng.generator(42, j), bandwidth=bw))
            else:
                models.append(solvers.weighted_kernel_ridge(xj, yj, wj, lam,
                                                            bandwidth=bw))
        else:
            raise DomainError("unknown function space %r" % space)
    return TreatmentEffectFit(method="q", space=space, k=data.k, p=data.p,
                              vertices=build_vertices(data.k),
                              arm_models=tuple(models))


def fit_to_dict(fit: TreatmentEffectFit) -> dict:
    doc = {
        "format_version": FORMAT_VERSION,
        "method": fit.method,
        "space": fit.space,
        "k": fit.k,
        "p": fit.p,
        "lambda": fit.lam,
        "nuisance": fit.nuisance_summary,
    }
    if fit.method == "q":
        arms = []
        for m in fit.arm_models:
            if isinstance(m, _LinearModel):
                arms.append({"kind": "linear", "beta": m.beta.tolist()})
            elif isinstance(m, solvers.LassoFit):
                arms.append({"kind": "lasso", "beta": m.beta.tolist(),
                             "intercept": m.intercept, "lambda": m.lam})
            else:
                arms.append({"kind": "kernel", "alpha": m.alpha.tolist(),
                             "intercept": m.intercept, "bandwidth": m.bandwidth,
                             "lambda": m.ridge, "x_train": m.x_train.tolist()})
        doc["arm_models"] = arms
    elif fit.space in ("linear", "linear-lasso"):
        doc["coef"] = fit.coef.tolist()
    else:
        doc.update({
            "intercepts": fit.intercepts.tolist(),
            "alpha": fit.alpha.tolist(),
            "x_train": fit.x_train.tolist(),
            "bandwidth": fit.bandwidth,
        })
    return doc


def fit_from_dict(doc: dict) -> TreatmentEffectFit:
    if doc.get("format_version") != FORMAT_VERSION:
        raise DomainError("unsupported model format version %r"
                          % doc.get("format_version"))
    k, p = doc["k"], doc["p"]
    vertices = build_vertices(k)
    common = dict(method=doc["method"], space=doc["space"], k=k, p=p,
                  vertices=vertices, lam=doc.get("lambda"),
                  nuisance_summary=doc.get("nuisance", {}))
    if doc["method"] == "q":
        models = []
        for arm in doc["arm_models"]:
            if arm["kind"] == "linear":
                models.append(_LinearModel(beta=np.array(arm["beta"])))
            elif arm["kind"] == "lasso":
                models.append(solvers.LassoFit(
                    beta=np.array(arm["beta"]), intercept=arm["intercept"],
                    lam=arm["lambda"], iterations=0, converged=True, kkt_gap=0.0))
            else:
                models.append(solvers.KernelFit(
                    alpha=np.array(arm["alpha"]), intercept=arm["intercept"],
                    bandwidth=arm["bandwidth"], ridge=arm["lambda"],
                    x_train=np.array(arm["x_train"])))
        return TreatmentEffectFit(arm_models=tuple(models), **common)
    if doc["space"] in ("linear", "linear-lasso"):
        return TreatmentEffectFit(coef=np.array(doc["coef"]), **common)
    return TreatmentEffectFit(
        intercepts=np.array(doc["intercepts"]), alpha=np.array(doc["alpha"]),
        x_train=np.array(doc["x_train"]), bandwidth=doc["bandwidth"], **common)


def fit_to_json(fit: TreatmentEffectFit) -> str:
    return json.dumps(fit_to_dict(fit), indent=2, sort_keys=True)


def fit_from_json(text: str) -> TreatmentEffectFit:
    return fit_from_dict(json.loads(text))

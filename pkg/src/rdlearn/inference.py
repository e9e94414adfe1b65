"""Known-propensity inference for linear treatment effects.

With known propensities, each arm's coefficient vector is estimated by
the modified unbiased estimator

    gamma_j = (X'X)^-1 X' diag(1{a_i = j} - 1/k) P_a^-1 (y - mhat(X)),

whose rows sum to zero over arms. The asymptotic covariance is the
sandwich Outer * Mid * Outer, where Mid plugs in
(y_i - mhat_i - dhat_{a_i} + dhat_j)^2 for the joint (r + delta_j)^2 +
sigma^2 term and dhat dhat' for delta delta'. The outer factor is either
J (x) V^-1 (all-ones J, as stated with the asymptotic normality result)
or the conventional I_k (x) V^-1, selected by `form`.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import product

import numpy as np
from scipy.stats import norm

from .core import Dataset, augment
from .errors import ContractError, DomainError
from .nuisance import MainEffectModel, PropensityModel
from . import solvers

COVARIANCE_FORMS = ("identity-block", "as-written-J")


@dataclass(frozen=True)
class GammaEstimate:
    gamma: np.ndarray   # (k, p+1), row j-1 = gamma_j

    @property
    def stacked(self) -> np.ndarray:
        return self.gamma.ravel()

    def effects(self, x: np.ndarray) -> np.ndarray:
        return augment(x) @ self.gamma.T


@dataclass(frozen=True)
class InferenceReport:
    estimate: GammaEstimate
    covariance: np.ndarray          # k(p+1) x k(p+1), covariance of sqrt(n)(ghat - g)
    se: np.ndarray                  # (k, p+1) standard errors of ghat entries
    z: np.ndarray
    p_values: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    level: float
    form: str
    n: int


def _require_known(prop: PropensityModel) -> None:
    if not prop.known:
        raise ContractError(
            "unbiased inference requires a known propensity model, got %r"
            % prop.kind)


def estimate_gamma(
    data: Dataset,
    prop: PropensityModel,
    main: MainEffectModel,
) -> GammaEstimate:
    """All k coefficient rows from the same residual vector; the binary
    sign-based form (half the sign-weighted regression) equals row 1."""
    _require_known(prop)
    x = augment(data.x)
    n, q = x.shape
    k = data.k
    resid = data.y - main.predict(data.x)
    probs = prop.predict_probs(data.x)
    p_sel = probs[np.arange(n), data.a - 1]
    if np.any(p_sel <= 0):
        raise DomainError("known propensities must be positive on the sample")
    xtx = x.T @ x
    gamma = np.empty((k, q))
    for j in range(1, k + 1):
        d = ((data.a == j) - 1.0 / k) / p_sel
        gamma[j - 1] = solvers.solve_spd(xtx, x.T @ (d * resid))
    return GammaEstimate(gamma=gamma)


def binary_unbiased_beta(
    data: Dataset,
    prop: PropensityModel,
    main: MainEffectModel,
) -> np.ndarray:
    """Half the sign-weighted unbiased regression; equals gamma_1 for k=2."""
    _require_known(prop)
    if data.k != 2:
        raise DomainError("binary estimator requires k = 2")
    x = augment(data.x)
    n = data.n
    resid = data.y - main.predict(data.x)
    probs = prop.predict_probs(data.x)
    p_sel = probs[np.arange(n), data.a - 1]
    signs = np.where(data.a == 1, 1.0, -1.0)
    return 0.5 * solvers.solve_spd(x.T @ x, x.T @ (signs / p_sel * resid))


def bias_of_naive_beta(
    p1: Fraction = Fraction(2, 3),
    r: Fraction = Fraction(1),
    n: int = 3,
) -> Fraction:
    """Exact bias of the plain inverse-propensity-weighted regression on
    an intercept-only design with constant residual r, by enumerating all
    2^n treatment assignments in rational arithmetic.

    Defaults reproduce the 17/135 toy value; p1 = 1/2 or r = 0 give 0.
    """
    p = {1: Fraction(p1), -1: Fraction(1) - Fraction(p1)}
    bias = Fraction(0)
    for arms in product((1, -1), repeat=n):
        prob = Fraction(1)
        for a in arms:
            prob *= p[a]
        denom = sum(1 / p[a] for a in arms)
        numer = sum(Fraction(a) / p[a] for a in arms)
        bias += prob * numer / denom
    return Fraction(r) * bias


def sandwich_covariance(
    data: Dataset,
    prop: PropensityModel,
    main: MainEffectModel,
    gamma: GammaEstimate | None = None,
    form: str = "identity-block",
    level: float = 0.95,
) -> InferenceReport:
    """Plug-in sandwich covariance of sqrt(n)(gamma_hat - gamma)."""
    _require_known(prop)
    if form not in COVARIANCE_FORMS:
        raise DomainError("covariance form must be one of %s" % (COVARIANCE_FORMS,))
    if gamma is None:
        gamma = estimate_gamma(data, prop, main)
    x = augment(data.x)
    n, q = x.shape
    k = data.k
    resid = data.y - main.predict(data.x)
    probs = prop.predict_probs(data.x)
    delta_hat = x @ gamma.gamma.T                      # (n, k)
    delta_own = delta_hat[np.arange(n), data.a - 1]

    c = np.eye(k) - np.full((k, k), 1.0 / k)
    mid = np.zeros((k * q, k * q))
    for i in range(n):
        plug = (resid[i] - delta_own[i] + delta_hat[i]) ** 2 / probs[i]
        inner = (c * plug) @ c - np.outer(delta_hat[i], delta_hat[i])
        mid += np.kron(inner, np.outer(x[i], x[i]))
    mid /= n

    v = x.T @ x / n
    v_inv = solvers.solve_spd(v, np.eye(q))
    outer_k = np.ones((k, k)) if form == "as-written-J" else np.eye(k)
    outer = np.kron(outer_k, v_inv)
    cov = outer @ mid @ outer
    cov = 0.5 * (cov + cov.T)

    variances = np.maximum(np.diag(cov), 0.0)
    se = np.sqrt(variances / n).reshape(k, q)
    zcrit = norm.ppf(0.5 + level / 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, gamma.gamma / se, 0.0)
    p_values = 2.0 * norm.sf(np.abs(z))
    return InferenceReport(
        estimate=gamma, covariance=cov, se=se, z=z, p_values=p_values,
        ci_low=gamma.gamma - zcrit * se, ci_high=gamma.gamma + zcrit * se,
        level=level, form=form, n=n,
    )


STAR_LEVELS = ((0.001, "***"), (0.01, "**"), (0.05, "*"), (0.1, "."))


def significance_stars(p_value: float) -> str:
    for cutoff, stars in STAR_LEVELS:
        if p_value < cutoff:
            return stars
    return ""


def wald_tests(report: InferenceReport, names: list[str] | None = None) -> list[dict]:
    """Per (arm, coefficient) rows: estimate, SE, z, p, CI, stars."""
    k, q = report.estimate.gamma.shape
    if names is None:
        names = ["intercept"] + ["x%d" % i for i in range(1, q)]
    rows = []
    for j in range(k):
        for c in range(q):
            rows.append({
                "arm": j + 1,
                "coefficient": names[c],
                "estimate": float(report.estimate.gamma[j, c]),
                "se": float(report.se[j, c]),
                "z": float(report.z[j, c]),
                "p": float(report.p_values[j, c]),
                "ci_low": float(report.ci_low[j, c]),
                "ci_high": float(report.ci_high[j, c]),
                "stars": significance_stars(float(report.p_values[j, c])),
            })
    return rows


def wald_table(report: InferenceReport, names: list[str] | None = None) -> str:
    """Aligned-text rendering of wald_tests."""
    rows = wald_tests(report, names)
    header = ["arm", "coefficient", "estimate", "se", "z", "p", "ci_low",
              "ci_high", ""]
    lines = [header]
    for r in rows:
        lines.append([
            str(r["arm"]), r["coefficient"],
            "%10.4f" % r["estimate"], "%9.4f" % r["se"], "%8.3f" % r["z"],
            "%8.4f" % r["p"], "%9.4f" % r["ci_low"], "%9.4f" % r["ci_high"],
            r["stars"],
        ])
    widths = [max(len(row[c]) for row in lines) for c in range(len(header))]
    return "\n".join(
        "  ".join(cell.rjust(width) for cell, width in zip(row, widths)).rstrip()
        for row in lines
    )

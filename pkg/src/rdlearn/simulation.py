"""Data-generating processes, the replication harness, and metrics.

The four built-in cases share the covariate law: the first three
coordinates are i.i.d. normal with variance 3 (configurable to sd = 3)
and the rest are i.i.d. Uniform(0, 1). Outcomes are mu_a(x) plus
N(0, sigma^2) noise. Each case exposes oracle evaluators for the true
per-arm effects and propensities so that prediction error can be
computed against the truth.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from joblib import Parallel, delayed

from .core import Dataset, RngSpec
from .errors import DomainError
from .nuisance import (PropensityModel, known_constant_propensity,
                       known_function_propensity, fit_main_effect)
from .estimators import TreatmentEffectFit, fit_d, fit_q, fit_rd, itr, predict_effects

CASES = ("I", "II", "III", "IV")


@dataclass(frozen=True)
class DgpSpec:
    case: str
    n: int
    p: int = 100
    sigma: float = 1.0
    rng: RngSpec = RngSpec(0, 0)
    normal_scale: str = "var"   # "var": N(0, var=3); "sd": N(0, sd=3)

    def __post_init__(self):
        if self.case not in CASES:
            raise DomainError("unknown case %r; choose from %s" % (self.case, CASES))
        if self.p < 3:
            raise DomainError("built-in cases use x1..x3; need p >= 3")
        if self.normal_scale not in ("var", "sd"):
            raise DomainError("normal_scale must be 'var' or 'sd'")


@dataclass(frozen=True)
class Oracle:
    k: int
    mu: Callable          # x -> (n, k)
    propensity: Callable  # x -> (n, k)

    def main_effect(self, x: np.ndarray) -> np.ndarray:
        return self.mu(x).mean(axis=1)

    def delta(self, x: np.ndarray) -> np.ndarray:
        mu = self.mu(x)
        return mu - mu.mean(axis=1, keepdims=True)


def _case_mu(case: str) -> tuple[int, Callable]:
    if case == "I":
        def mu(x):
            base = 2 * np.cos(x[:, 0] + np.pi / 4) - np.tanh(x[:, 1])
            return np.column_stack([base + x[:, 0], base + 2 * x[:, 0]])
        return 2, mu
    if case == "II":
        def mu(x):
            base = np.tanh(x[:, 0])
            logistic = 4.0 / (1.0 + np.exp(x[:, 1] - x[:, 0]))
            return np.column_stack([base - logistic + 3.0, base + logistic])
        return 2, mu
    if case == "III":
        def mu(x):
            return np.column_stack([x[:, 0] - x[:, 1] + x[:, 2],
                                    2 * x[:, 0] - x[:, 1]])
        return 2, mu
    if case == "IV":
        def mu(x):
            quad = (x[:, 0] ** 2 + x[:, 1] ** 2 + x[:, 2] ** 2) / 3.0
            return np.column_stack([quad + x[:, 0] - x[:, 1],
                                    quad + x[:, 1] - x[:, 2],
                                    quad + x[:, 2] - x[:, 0]])
        return 3, mu
    raise DomainError("unknown case %r" % case)


def _case_propensity(case: str) -> Callable:
    if case == "I":
        def prop(x):
            p1 = 0.2 + 0.6 * (x[:, 0] < 0)
            return np.column_stack([p1, 1.0 - p1])
    elif case == "II":
        def prop(x):
            p1 = np.full(x.shape[0], 0.2)
            return np.column_stack([p1, 1.0 - p1])
    elif case == "III":
        def prop(x):
            p1 = 2.0 / (2.0 + np.exp(x[:, 0]))
            return np.column_stack([p1, 1.0 - p1])
    elif case == "IV":
        def prop(x):
            out = np.full((x.shape[0], 3), 0.25)
            x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
            first = (x1 >= x2) & (x1 >= x3)
            second = ~first & (x2 >= x3)
            third = ~first & ~second
            out[first, 0] = 0.5
            out[second, 1] = 0.5
            out[third, 2] = 0.5
            return out
    else:
        raise DomainError("unknown case %r" % case)
    return prop


def case_oracle(case: str) -> Oracle:
    k, mu = _case_mu(case)
    return Oracle(k=k, mu=mu, propensity=_case_propensity(case))


def true_propensity_model(case: str, clip: float = 0.01) -> PropensityModel:
    oracle = case_oracle(case)
    return known_function_propensity(oracle.propensity, oracle.k,
                                     name="case-%s" % case, clip=clip)


def draw_covariates(spec: DgpSpec, n: int, gen: np.random.Generator) -> np.ndarray:
    sd = np.sqrt(3.0) if spec.normal_scale == "var" else 3.0
    x = np.empty((n, spec.p))
    x[:, :3] = gen.normal(0.0, sd, size=(n, 3))
    if spec.p > 3:
        x[:, 3:] = gen.uniform(0.0, 1.0, size=(n, spec.p - 3))
    return x


def generate(spec: DgpSpec) -> tuple[Dataset, Oracle]:
    """Draw a training sample: covariates, case propensity arm, noisy outcome."""
    oracle = case_oracle(spec.case)
    gen = spec.rng.generator()
    x = draw_covariates(spec, spec.n, gen)
    probs = oracle.propensity(x)
    cum = np.cumsum(probs, axis=1)
    u = gen.uniform(size=spec.n)
    a = 1 + (u[:, None] > cum).sum(axis=1)
    mu = oracle.mu(x)
    y = mu[np.arange(spec.n), a - 1] + gen.normal(0.0, spec.sigma, size=spec.n)
    data = Dataset(x=x, a=a, y=y, k=oracle.k)
    return data, oracle


def prediction_error(effects_fn: Callable, oracle: Oracle, x_test: np.ndarray) -> float:
    """Mean over test points of the summed squared per-arm effect error."""
    x_test = np.atleast_2d(np.asarray(x_test, dtype=float))
    if x_test.shape[0] < 1:
        raise DomainError("need at least one test point")
    err = np.asarray(effects_fn(x_test), dtype=float) - oracle.delta(x_test)
    return float(np.mean(np.sum(err**2, axis=1)))


def empirical_value(rule, data: Dataset, prop: PropensityModel) -> float:
    """Inverse-propensity-weighted mean outcome among rule-followers."""
    labels = rule.apply(data.x) if hasattr(rule, "apply") else np.asarray(rule)
    probs = prop.predict_probs(data.x)
    p_sel = probs[np.arange(data.n), data.a - 1]
    follow = labels == data.a
    weights = follow / p_sel
    denom = weights.sum()
    if denom <= 0:
        raise DomainError("no observation follows the rule; value undefined")
    return float((weights @ data.y) / denom)


# Per-case function spaces from the simulation protocol: non-linear main
# effects get a kernel first step, linear effects a LASSO second step.
CASE_PROTOCOL = {
    "I": {"main_space": "kernel-ridge", "effect_space": "linear-lasso",
          "wrong_propensity": False},
    "II": {"main_space": "linear-lasso", "effect_space": "kernel",
           "wrong_propensity": False},
    "III": {"main_space": "linear-lasso", "effect_space": "linear-lasso",
            "wrong_propensity": True},
    "IV": {"main_space": "kernel-ridge", "effect_space": "linear-lasso",
           "wrong_propensity": False},
}


def working_propensity_model(case: str, clip: float = 0.01) -> PropensityModel:
    """The propensity handed to the estimators: the truth, except in the
    deliberately misspecified case where a flat 1/2 is used."""
    oracle = case_oracle(case)
    if CASE_PROTOCOL[case]["wrong_propensity"]:
        return known_constant_propensity(np.full(oracle.k, 1.0 / oracle.k),
                                         clip=clip)
    return true_propensity_model(case, clip=clip)


@dataclass(frozen=True)
class MetricsRow:
    case: str
    method: str
    n: int
    replication: int
    pe: float | None
    value: float | None
    seconds: float = 0.0
    error: str | None = None


@dataclass(frozen=True)
class SimOptions:
    p: int = 100
    sigma: float = 1.0
    test_size: int = 400
    lam: float | None = None        # None -> cross-validated
    main_lam: float | None = None
    bandwidth: float | None = None
    clip: float = 0.01
    normal_scale: str = "var"


def _fit_method(method: str, case: str, data: Dataset, opts: SimOptions,
                rng: RngSpec) -> TreatmentEffectFit:
    protocol = CASE_PROTOCOL[case]
    prop = working_propensity_model(case, clip=opts.clip)
    if method == "rd":
        main = fit_main_effect(data, prop, protocol["main_space"],
                               lam=opts.main_lam, bandwidth=opts.bandwidth, rng=rng)
        return fit_rd(data, prop, main, protocol["effect_space"],
                      lam=opts.lam, bandwidth=opts.bandwidth, rng=rng)
    if method == "d":
        return fit_d(data, prop, protocol["effect_space"],
                     lam=opts.lam, bandwidth=opts.bandwidth, rng=rng)
    if method == "q":
        space = ("kernel" if protocol["main_space"] == "kernel-ridge"
                 else "linear-lasso")
        return fit_q(data, space, lam=opts.lam, bandwidth=opts.bandwidth, rng=rng)
    raise DomainError("unknown method %r; choose rd, d, or q" % method)


def _one_replication(case: str, methods: Sequence[str], n: int, rep: int,
                     base: RngSpec, opts: SimOptions) -> list[MetricsRow]:
    case_idx = CASES.index(case)
    spec = DgpSpec(case=case, n=n, p=opts.p, sigma=opts.sigma,
                   rng=DATA_STREAM(base, case_idx, n, rep),
                   normal_scale=opts.normal_scale)
    data, oracle = generate(spec)
    x_test = draw_covariates(spec, opts.test_size,
                             TEST_STREAM(base, case_idx, n, rep).generator())
    prop_true = true_propensity_model(case, clip=opts.clip)
    rows = []
    for method in methods:
        start = time.perf_counter()
        try:
            fit = _fit_method(method, case, data, opts,
                              FIT_STREAM(base, case_idx, n, rep, method))
            pe = prediction_error(lambda x: predict_effects(fit, x), oracle, x_test)
            value = empirical_value(itr(fit), data, prop_true)
            rows.append(MetricsRow(case=case, method=method, n=n, replication=rep,
                                   pe=pe, value=value,
                                   seconds=time.perf_counter() - start))
        except Exception as exc:  # per-row failure is recorded, not fatal
            rows.append(MetricsRow(case=case, method=method, n=n, replication=rep,
                                   pe=None, value=None,
                                   seconds=time.perf_counter() - start,
                                   error="%s: %s" % (type(exc).__name__, exc)))
    return rows


def DATA_STREAM(base: RngSpec, case_idx: int, n: int, rep: int) -> RngSpec:
    return RngSpec(base.seed, hash_stream(base.stream, case_idx, n, rep, 0))


def TEST_STREAM(base: RngSpec, case_idx: int, n: int, rep: int) -> RngSpec:
    return RngSpec(base.seed, hash_stream(base.stream, case_idx, n, rep, 1))


def FIT_STREAM(base: RngSpec, case_idx: int, n: int, rep: int, method: str) -> RngSpec:
    return RngSpec(base.seed,
                   hash_stream(base.stream, case_idx, n, rep, 2 + hash_method(method)))


def hash_stream(*parts: int) -> int:
    # Deterministic stream mixing, stable across processes (no PYTHONHASHSEED).
    h = 1469598103934665603
    for part in parts:
        h = (h ^ (part & 0xFFFFFFFF)) * 1099511628211 % (1 << 63)
    return h


def hash_method(method: str) -> int:
    return {"rd": 0, "d": 1, "q": 2}.get(method, 3)


def run_replications(
    cases: Sequence[str],
    methods: Sequence[str],
    ns: Sequence[int],
    replications: int,
    rng: RngSpec = RngSpec(0, 0),
    opts: SimOptions = SimOptions(),
    n_jobs: int = 1,
) -> list[MetricsRow]:
    """Rows in (case, method, n, replication) order, independent of the
    parallelism degree; replication r always uses stream r."""
    if replications < 1:
        raise DomainError("need at least one replication")
    for case in cases:
        if case not in CASES:
            raise DomainError("unknown case %r" % case)
    tasks = [(case, n, rep) for case in cases for n in ns
             for rep in range(replications)]
    results = Parallel(n_jobs=n_jobs)(
        delayed(_one_replication)(case, list(methods), n, rep, rng, opts)
        for case, n, rep in tasks
    )
    by_key = {}
    for (case, n, rep), rows in zip(tasks, results):
        for row in rows:
            by_key[(case, row.method, n, rep)] = row
    ordered = []
    for case in cases:
        for method in methods:
            for n in ns:
                for rep in range(replications):
                    ordered.append(by_key[(case, method, n, rep)])
    return ordered


def metrics_csv_lines(rows: Sequence[MetricsRow]) -> list[str]:
    """Deterministic CSV content: wall time is excluded (it is not
    reproducible across runs) and reported separately in the summary."""
    lines = ["case,method,n,replication,pe,value,error"]
    for row in rows:
        lines.append("%s,%s,%d,%d,%s,%s,%s" % (
            row.case, row.method, row.n, row.replication,
            "" if row.pe is None else repr(row.pe),
            "" if row.value is None else repr(row.value),
            "" if row.error is None else row.error.replace(",", ";"),
        ))
    return lines


def summarize(rows: Sequence[MetricsRow]) -> dict:
    """Medians/quartiles of PE and value per (case, method, n)."""
    groups: dict[tuple, list[MetricsRow]] = {}
    for row in rows:
        groups.setdefault((row.case, row.method, row.n), []).append(row)
    summary = []
    for (case, method, n), members in sorted(groups.items()):
        pes = np.array([m.pe for m in members if m.pe is not None])
        values = np.array([m.value for m in members if m.value is not None])
        entry = {
            "case": case, "method": method, "n": n,
            "replications": len(members),
            "failures": sum(1 for m in members if m.error is not None),
            "seconds_total": float(sum(m.seconds for m in members)),
        }
        if len(pes):
            q1, q2, q3 = np.percentile(pes, [25, 50, 75])
            entry.update(pe_median=float(q2), pe_q1=float(q1), pe_q3=float(q3),
                         pe_mean=float(pes.mean()),
                         pe_se=float(pes.std(ddof=1) / np.sqrt(len(pes)))
                         if len(pes) > 1 else 0.0)
        if len(values):
            entry.update(value_median=float(np.median(values)),
                         value_mean=float(values.mean()))
        summary.append(entry)
    return {"groups": summary}


def stepp_export(
    fits_effects: Sequence[Callable],
    oracle: Oracle,
    spec: DgpSpec,
    grid: np.ndarray | None = None,
    arm: int = 1,
) -> list[dict]:
    """Rows (x1, band quantiles over replications, truth), with the other
    covariates pinned at their medians. Two-arm cases report the between-
    arm contrast mu_1 - mu_2; multi-arm cases report the requested arm's
    centered effect."""
    if grid is None:
        grid = np.linspace(-3.0, 3.0, 61)
    grid = np.asarray(grid, dtype=float)
    x = np.empty((len(grid), spec.p))
    x[:, 0] = grid
    x[:, 1:3] = 0.0
    if spec.p > 3:
        x[:, 3:] = 0.5

    def column(effects):
        effects = np.asarray(effects, dtype=float)
        if oracle.k == 2:
            return effects[:, 0] - effects[:, 1]
        return effects[:, arm - 1]

    truth = column(oracle.delta(x))
    estimates = np.stack([column(fn(x)) for fn in fits_effects])
    lo, med, hi = np.percentile(estimates, [2.5, 50.0, 97.5], axis=0)
    return [
        {"x1": float(grid[i]), "q025": float(lo[i]), "q50": float(med[i]),
         "q975": float(hi[i]), "truth": float(truth[i])}
        for i in range(len(grid))
    ]


def stepp_csv_lines(rows: Sequence[dict]) -> list[str]:
    lines = ["x1,q025,q50,q975,truth"]
    for row in rows:
        lines.append(",".join(repr(row[key]) for key in
                              ("x1", "q025", "q50", "q975", "truth")))
    return lines

"""Command-line surface: fit, infer, simulate, evaluate, stepp.

Runs are configured by a JSON config file plus flag overrides (flags
win). Every key known to a command is defined once in COMMAND_KEYS, from
which both the argparse surface and config validation are generated, so
--help and the schema cannot drift apart. Unknown config keys are
rejected. All outputs carry a format_version field and are byte-for-byte
reproducible given the same config and seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import estimators, inference, simulation
from .core import CsvSchema, Dataset, RngSpec, load_csv
from .errors import (ContractError, DomainError, SchemaError,
                     SingularMatrixError, ValidationError)
from .nuisance import (fit_main_effect, fit_propensity_mlogit,
                       known_constant_propensity, zero_main_effect, DEFAULT_CLIP)

FORMAT_VERSION = 1

# key -> (type, default, help)
COMMON_KEYS = {
    "seed": (int, 0, "base RNG seed"),
    "out": (str, ".", "output directory"),
    "threads": (int, 1, "parallelism degree"),
}
DATA_KEYS = {
    "data": (str, None, "input CSV path"),
    "outcome": (str, "y", "outcome column name"),
    "treatment": (str, "a", "treatment column name"),
    "covariates": (str, None, "comma-separated covariate columns "
                              "(default: every other column)"),
}
MODEL_KEYS = {
    "method": (str, "rd", "estimator: rd, d, or q"),
    "space": (str, "linear", "function space: linear, lasso, or kernel"),
    "main_space": (str, "lasso", "main-effect space for rd: lasso or kernel"),
    "propensity": (str, "logistic", "propensity spec: logistic, "
                                    "known:const:p1,p2,... or known:case-<I..IV>"),
    "clip": (float, DEFAULT_CLIP, "propensity clip floor"),
    "lambda": (float, None, "penalty override (default: cross-validated)"),
    "bandwidth": (float, None, "kernel bandwidth override (default: median "
                               "pairwise distance)"),
}
COMMAND_KEYS = {
    "fit": {**COMMON_KEYS, **DATA_KEYS, **MODEL_KEYS},
    "infer": {**COMMON_KEYS, **DATA_KEYS,
              "propensity": MODEL_KEYS["propensity"],
              "main_space": MODEL_KEYS["main_space"],
              "lambda": MODEL_KEYS["lambda"],
              "bandwidth": MODEL_KEYS["bandwidth"],
              "clip": MODEL_KEYS["clip"],
              "level": (float, 0.95, "confidence level"),
              "form": (str, "identity-block",
                       "covariance form: identity-block or as-written-J"),
              "remark2_toy": (bool, False,
                              "print the exact bias of the naive estimator on "
                              "the three-point toy and exit"),
              "zero_main": (bool, False, "use mhat = 0 instead of fitting")},
    "simulate": {**COMMON_KEYS,
                 "case": (str, "I", "comma-separated cases from I,II,III,IV"),
                 "method": (str, "rd", "comma-separated methods from rd,d,q"),
                 "n": (str, "200", "comma-separated sample sizes"),
                 "replications": (int, 1, "replications per (case, n)"),
                 "p": (int, 100, "covariate dimension (>= 3)"),
                 "sigma": (float, 1.0, "outcome noise SD"),
                 "lambda": MODEL_KEYS["lambda"],
                 "bandwidth": MODEL_KEYS["bandwidth"],
                 "clip": MODEL_KEYS["clip"]},
    "evaluate": {**COMMON_KEYS, **DATA_KEYS,
                 "model": (str, None, "fitted model JSON path"),
                 "propensity": MODEL_KEYS["propensity"],
                 "clip": MODEL_KEYS["clip"]},
    "stepp": {**COMMON_KEYS,
              "case": (str, "II", "one case from I,II,III,IV"),
              "method": (str, "rd", "one method from rd,d,q"),
              "n": (str, "200", "training sample size"),
              "replications": (int, 50, "replications for the band"),
              "p": (int, 20, "covariate dimension (>= 3)"),
              "sigma": (float, 1.0, "outcome noise SD"),
              "lambda": MODEL_KEYS["lambda"],
              "bandwidth": MODEL_KEYS["bandwidth"],
              "clip": MODEL_KEYS["clip"]},
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rdlearn",
        description="Doubly robust direct estimation of conditional average "
                    "treatment effects.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command, keys in COMMAND_KEYS.items():
        cp = sub.add_parser(command)
        cp.add_argument("--config", type=str, default=None,
                        help="JSON config file; flags override its keys")
        for key, (typ, default, help_text) in keys.items():
            flag = "--" + key.replace("_", "-")
            if typ is bool:
                cp.add_argument(flag, action="store_true", default=None,
                                help=help_text)
            else:
                cp.add_argument(flag, type=typ, default=None, help=help_text)
    return parser


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    keys = COMMAND_KEYS[command]
    config = {key: default for key, (_, default, _) in keys.items()}
    if args.config is not None:
        with open(args.config) as handle:
            loaded = json.load(handle)
        if not isinstance(loaded, dict):
            raise SchemaError("config must be a JSON object")
        file_command = loaded.pop("command", command)
        if file_command != command:
            raise SchemaError("config is for command %r, invoked %r"
                              % (file_command, command))
        unknown = set(loaded) - set(keys)
        if unknown:
            raise SchemaError("unknown config keys: %s" % sorted(unknown))
        for key, value in loaded.items():
            typ = keys[key][0]
            if value is not None and not isinstance(value, typ) \
                    and not (typ is float and isinstance(value, int)):
                raise SchemaError("config key %r expects %s, got %r"
                                  % (key, typ.__name__, value))
            config[key] = value
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            config[key] = value
    return config


def _load_dataset(config: dict) -> Dataset:
    if not config.get("data"):
        raise SchemaError("a --data CSV path is required")
    if config.get("covariates"):
        covariates = tuple(c.strip() for c in config["covariates"].split(","))
    else:
        with open(config["data"], newline="") as handle:
            header = handle.readline().strip().split(",")
        covariates = tuple(c for c in header
                           if c not in (config["outcome"], config["treatment"]))
        if not covariates:
            raise SchemaError("no covariate columns left after removing "
                              "outcome and treatment")
    schema = CsvSchema(outcome=config["outcome"], treatment=config["treatment"],
                       covariates=covariates)
    return load_csv(config["data"], schema)


def _resolve_propensity(spec: str, data: Dataset, clip: float):
    if spec == "logistic":
        return fit_propensity_mlogit(data, clip=clip)
    if spec.startswith("known:const:"):
        probs = [float(v) for v in spec.split(":", 2)[2].split(",")]
        if len(probs) != data.k:
            raise SchemaError("constant propensity lists %d arms, data has %d"
                              % (len(probs), data.k))
        return known_constant_propensity(probs, clip=clip)
    if spec.startswith("known:case-"):
        case = spec.split("known:case-", 1)[1]
        model = simulation.true_propensity_model(case, clip=clip)
        if model.k != data.k:
            raise SchemaError("case %s has %d arms, data has %d"
                              % (case, model.k, data.k))
        return model
    raise SchemaError("unrecognized propensity spec %r" % spec)


def _space_name(token: str) -> str:
    return {"linear": "linear", "lasso": "linear-lasso",
            "kernel": "kernel"}.get(token) or _bad_space(token)


def _main_space_name(token: str) -> str:
    return {"lasso": "linear-lasso",
            "kernel": "kernel-ridge"}.get(token) or _bad_space(token)


def _bad_space(token: str):
    raise SchemaError("unknown space %r" % token)


def _write(out_dir: str, name: str, text: str) -> Path:
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    target = path / name
    target.write_text(text)
    return target


def cmd_fit(config: dict) -> int:
    data = _load_dataset(config)
    if data.k < 2:
        raise DomainError("fitting needs at least two treatment arms")
    rng = RngSpec(config["seed"], 0)
    prop = _resolve_propensity(config["propensity"], data, config["clip"])
    space = _space_name(config["space"])
    opts = dict(lam=config["lambda"], bandwidth=config["bandwidth"], rng=rng)
    if config["method"] == "rd":
        main = fit_main_effect(data, prop, _main_space_name(config["main_space"]),
                               lam=config["lambda"],
                               bandwidth=config["bandwidth"], rng=rng)
        fit = estimators.fit_rd(data, prop, main, space, **opts)
    elif config["method"] == "d":
        fit = estimators.fit_d(data, prop, space, **opts)
    elif config["method"] == "q":
        fit = estimators.fit_q(data, space, **opts)
    else:
        raise SchemaError("unknown method %r" % config["method"])

    effects = estimators.predict_effects(fit, data.x)
    rule = estimators.itr(fit).apply(data.x)
    _write(config["out"], "model.json", estimators.fit_to_json(fit) + "\n")
    lines = [",".join(["row"]
                      + ["delta_%d" % (j + 1) for j in range(data.k)]
                      + ["itr"])]
    for i in range(data.n):
        lines.append("%d,%s,%d" % (i, ",".join(repr(float(v)) for v in effects[i]),
                                   rule[i]))
    _write(config["out"], "effects.csv", "\n".join(lines) + "\n")
    print(json.dumps({"format_version": FORMAT_VERSION, "command": "fit",
                      "n": data.n, "k": data.k, "method": config["method"],
                      "out": config["out"]}))
    return 0


def cmd_infer(config: dict) -> int:
    if config["remark2_toy"]:
        bias = inference.bias_of_naive_beta()
        print(json.dumps({"format_version": FORMAT_VERSION,
                          "remark2_bias": "%d/%d" % (bias.numerator,
                                                     bias.denominator),
                          "value": float(bias)}))
        return 0
    data = _load_dataset(config)
    prop = _resolve_propensity(config["propensity"], data, config["clip"])
    if not prop.known:
        raise ContractError("inference requires a known propensity "
                            "(known:const:... or known:case-...)")
    rng = RngSpec(config["seed"], 0)
    if config["zero_main"]:
        main = zero_main_effect()
    else:
        main = fit_main_effect(data, prop, _main_space_name(config["main_space"]),
                               lam=config["lambda"],
                               bandwidth=config["bandwidth"], rng=rng)
    report = inference.sandwich_covariance(data, prop, main,
                                           form=config["form"],
                                           level=config["level"])
    doc = {
        "format_version": FORMAT_VERSION,
        "level": report.level,
        "form": report.form,
        "n": report.n,
        "gamma": report.estimate.gamma.tolist(),
        "se": report.se.tolist(),
        "rows": inference.wald_tests(report),
    }
    _write(config["out"], "inference.json", json.dumps(doc, indent=2) + "\n")
    table = inference.wald_table(report)
    _write(config["out"], "inference.txt", table + "\n")
    print(table)
    return 0


def cmd_simulate(config: dict) -> int:
    cases = [c.strip() for c in config["case"].split(",")]
    methods = [m.strip() for m in config["method"].split(",")]
    ns = [int(v) for v in str(config["n"]).split(",")]
    opts = simulation.SimOptions(p=config["p"], sigma=config["sigma"],
                                 lam=config["lambda"],
                                 bandwidth=config["bandwidth"],
                                 clip=config["clip"])
    rows = simulation.run_replications(
        cases, methods, ns, config["replications"],
        rng=RngSpec(config["seed"], 0), opts=opts, n_jobs=config["threads"])
    _write(config["out"], "metrics.csv",
           "\n".join(simulation.metrics_csv_lines(rows)) + "\n")
    summary = simulation.summarize(rows)
    summary["format_version"] = FORMAT_VERSION
    _write(config["out"], "summary.json", json.dumps(summary, indent=2) + "\n")
    print(json.dumps({"format_version": FORMAT_VERSION, "command": "simulate",
                      "rows": len(rows), "out": config["out"]}))
    return 0


def cmd_evaluate(config: dict) -> int:
    data = _load_dataset(config)
    if not config.get("model"):
        raise SchemaError("a --model JSON path is required")
    fit = estimators.fit_from_json(Path(config["model"]).read_text())
    prop = _resolve_propensity(config["propensity"], data, config["clip"])
    value = simulation.empirical_value(estimators.itr(fit), data, prop)
    print(json.dumps({"format_version": FORMAT_VERSION, "command": "evaluate",
                      "empirical_value": value, "n": data.n}))
    return 0


def cmd_stepp(config: dict) -> int:
    case = config["case"].strip()
    method = config["method"].strip()
    n = int(str(config["n"]).split(",")[0])
    base = RngSpec(config["seed"], 0)
    opts = simulation.SimOptions(p=config["p"], sigma=config["sigma"],
                                 lam=config["lambda"],
                                 bandwidth=config["bandwidth"],
                                 clip=config["clip"])
    spec = simulation.DgpSpec(case=case, n=n, p=opts.p, sigma=opts.sigma)
    oracle = simulation.case_oracle(case)
    effect_fns = []
    case_idx = simulation.CASES.index(case)
    for rep in range(config["replications"]):
        data, _ = simulation.generate(simulation.DgpSpec(
            case=case, n=n, p=opts.p, sigma=opts.sigma,
            rng=simulation.DATA_STREAM(base, case_idx, n, rep)))
        fit = simulation._fit_method(
            method, case, data, opts,
            simulation.FIT_STREAM(base, case_idx, n, rep, method))
        effect_fns.append(
            lambda x, fit=fit: estimators.predict_effects(fit, x))
    rows = simulation.stepp_export(effect_fns, oracle, spec)
    _write(config["out"], "stepp.csv",
           "\n".join(simulation.stepp_csv_lines(rows)) + "\n")
    print(json.dumps({"format_version": FORMAT_VERSION, "command": "stepp",
                      "grid_points": len(rows), "out": config["out"]}))
    return 0


HANDLERS = {
    "fit": cmd_fit,
    "infer": cmd_infer,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
    "stepp": cmd_stepp,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = resolve_config(args.command, args)
        return HANDLERS[args.command](config)
    except (SchemaError, ValidationError, DomainError, ContractError) as exc:
        print(json.dumps({"error": {"type": type(exc).__name__,
                                    "message": str(exc)}}), file=sys.stderr)
        return 1
    except (SingularMatrixError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(json.dumps({"error": {"type": type(exc).__name__,
                                    "message": str(exc)}}), file=sys.stderr)
        return 2
    except OSError as exc:
        print(json.dumps({"error": {"type": type(exc).__name__,
                                    "message": str(exc)}}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line frontend.

Subcommands: gen | solve | diagnose | recover | experiment. Parameters are
flat key=value tokens on the command line, optionally on top of a key=value
config file (--config); command-line values win. Unknown keys are rejected.
The effective configuration is echoed to stdout and embedded in every
written artifact. When neither the command line nor the config file gives a
seed, the NNR_SEED environment variable is used, then 0.

Exit codes: 0 success, 2 configuration/usage error, 3 numerical failure.
"""

import argparse
import os
import sys

import numpy as np

from . import designs, diagnostics, estimators, figures, reports, simlab
from .errors import (InvalidInputError, NonConvergenceError,
                     PathOverrunError, SingularMatrixError)
from .nnls import GroundTruth, RegressionInstance, kkt_check, solve_nnls
from .rng import substream
from .simplexqp import self_reg_margin

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

_NUMERICAL = (NonConvergenceError, SingularMatrixError, PathOverrunError)


# --------------------------------------------------------------------------
# key=value plumbing

def _to_int(text):
    try:
        return int(text)
    except ValueError:
        raise InvalidInputError(f"expected an integer, got {text!r}")


def _to_float(text):
    try:
        return float(text)
    except ValueError:
        raise InvalidInputError(f"expected a number, got {text!r}")


def _to_bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise InvalidInputError(f"expected a boolean, got {text!r}")


def _to_floats(text):
    parts = [t for t in str(text).split(",") if t != ""]
    if not parts:
        raise InvalidInputError("expected a comma-separated list of numbers")
    return tuple(_to_float(t) for t in parts)


def _to_ints(text):
    return tuple(_to_int(t) for t in str(text).split(",") if t != "")


def read_config_file(path):
    """Flat key=value file; '#' lines and blank lines are ignored."""
    cfg = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise InvalidInputError(
                    f"{path}:{lineno}: expected key=value, got {line!r}")
            key, val = line.split("=", 1)
            cfg[key.strip()] = val.strip()
    return cfg


def collect_config(tokens, config_path=None):
    """Merge config-file entries under command-line key=value tokens."""
    cfg = read_config_file(config_path) if config_path else {}
    for tok in tokens:
        if "=" not in tok:
            raise InvalidInputError(
                f"expected key=value token, got {tok!r}")
        key, val = tok.split("=", 1)
        cfg[key.strip()] = val.strip()
    return cfg


def coerce_config(cfg, schema, where):
    out = {}
    for key, raw in cfg.items():
        if key not in schema:
            known = ", ".join(sorted(schema))
            raise InvalidInputError(
                f"unknown {where} key {key!r} (known: {known})")
        conv = schema[key]
        out[key] = conv(raw) if conv is not str else str(raw)
    return out


def resolve_seed(cfg):
    """Seed precedence: explicit config > NNR_SEED > 0."""
    if "seed" in cfg:
        return int(cfg["seed"])
    env = os.environ.get("NNR_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise InvalidInputError(
                f"NNR_SEED must be an integer, got {env!r}")
    return 0


def echo_config(flat):
    for key in flat:
        print(f"# {key}={flat[key]}")


def _flat(command, cfg):
    out = {"command": command}
    out.update(cfg)
    return simlab.flatten_config(out)


# --------------------------------------------------------------------------
# gen

KIND_ALIASES = {
    "orthonormal": "orthonormal",
    "gaussian-iid": "gaussian-iid", "gaussianiid": "gaussian-iid",
    "equicorr": "equicorr-gram", "equicorr-gram": "equicorr-gram",
    "equicorrexact": "equicorr-gram",
    "power-decay": "power-decay", "powerdecay": "power-decay",
    "ens-plus": "nonneg-iid", "ensplus": "nonneg-iid",
    "nonneg-iid": "nonneg-iid",
    "kernel-gauss": "kernel-gauss", "localizedgaussian": "kernel-gauss",
    "localized-gauss": "kernel-gauss",
    "kernel-laplace": "kernel-laplace", "localizedexp": "kernel-laplace",
    "localized-exp": "kernel-laplace",
    "group-testing": "group-testing",
    "grouptestingbernoulli": "group-testing",
    "appendix-i": "negcorr-block", "negcorr-block": "negcorr-block",
    "appendixicounterexample": "negcorr-block",
    "explicit-gram": "explicit-gram", "explicitgram": "explicit-gram",
}

FAMILY_ALIASES = {
    "e1": "uniform", "uniform": "uniform",
    "e2": "bernoulli", "bernoulli": "bernoulli",
    "e3": "halfnormal", "halfnormal": "halfnormal",
    "e4": "poisson", "poisson": "poisson",
}

GEN_SCHEMA = {
    "n": _to_int, "p": _to_int, "s": _to_int,
    "rho": _to_float, "a": _to_float, "pi": _to_float,
    "family": str, "width": _to_float, "h": _to_float,
    "sigma": _to_float, "amp": _to_float,
    "seed": _to_int, "normalize": _to_bool, "csv": _to_bool,
    "gram": str, "name": str,
}

_GRAM_ECHO_LIMIT = 64     # echo the Gram into the manifest up to this p


def _require(cfg, key, kind):
    if key not in cfg:
        raise InvalidInputError(f"design kind {kind!r} needs {key}=...")
    return cfg[key]


def _design_spec(kind, cfg):
    """Translate coerced gen config into a DesignSpec (+ gram for echo)."""
    params = {}
    gram = None
    if kind == "negcorr-block":
        s = _require(cfg, "s", kind)
        cfg.setdefault("p", s + 1)
        cfg.setdefault("n", cfg["p"])
        params["s"] = s
        gram = designs.negcorr_gram(cfg["p"], s)
    n = _require(cfg, "n", kind)
    p = _require(cfg, "p", kind)
    if kind in ("equicorr-gram", "power-decay"):
        params["rho"] = _require(cfg, "rho", kind)
        make = (designs.equicorr_gram if kind == "equicorr-gram"
                else designs.power_decay_gram)
        gram = make(p, params["rho"])
    elif kind == "nonneg-iid":
        fam = str(cfg.get("family", "uniform")).lower()
        if fam not in FAMILY_ALIASES:
            raise InvalidInputError(f"unknown ensemble family {fam!r}")
        params["family"] = FAMILY_ALIASES[fam]
        params["a"] = cfg.get("a", cfg.get("pi", 1.0))
    elif kind == "group-testing":
        params["pi"] = cfg.get("pi", 0.5)
    elif kind == "kernel-gauss":
        if "width" in cfg:
            params["width"] = cfg["width"]
    elif kind == "kernel-laplace":
        params["h"] = cfg.get("h", 2.0 / n)
        params["centers"] = np.arange(1, p + 1, dtype=np.float64) / p
    elif kind == "explicit-gram":
        path = _require(cfg, "gram", kind)
        gram = np.asarray(reports.read_json(path), dtype=np.float64)
        params["gram"] = gram
    spec = designs.DesignSpec(kind, n, p, params,
                              normalize=cfg.get("normalize", True))
    return spec, gram


def cmd_gen(args):
    cfg = coerce_config(collect_config(args.params, args.config),
                        GEN_SCHEMA, "gen")
    key = args.kind.strip().lower()
    if key in FAMILY_ALIASES and "family" not in cfg:
        # allow `gen ens-plus E1 ...` with the family as a bare token
        raise InvalidInputError(
            f"{args.kind!r} is an ensemble family, not a design kind; "
            "use: gen ens-plus " + args.kind + " ...")
    if key not in KIND_ALIASES:
        raise InvalidInputError(f"unknown design kind {args.kind!r}")
    kind = KIND_ALIASES[key]
    for tok in list(args.extra):
        low = tok.strip().lower()
        if low in FAMILY_ALIASES:
            cfg["family"] = FAMILY_ALIASES[low]
        else:
            cfg.update(coerce_config(collect_config([tok]),
                                     GEN_SCHEMA, "gen"))
    seed = resolve_seed(cfg)
    cfg["seed"] = seed

    spec, gram = _design_spec(kind, cfg)
    x = designs.generate(spec, seed=seed)

    make_instance = "sigma" in cfg
    flat = _flat("gen", {**cfg, "kind": kind})
    echo_config(flat)

    extras = {"config": flat}
    if gram is not None and gram.shape[0] <= _GRAM_ECHO_LIMIT:
        extras["gram"] = np.asarray(gram).tolist()

    base = cfg.get("name") or (("instance-" if make_instance else "design-")
                               + kind)
    path = os.path.join(args.out, f"{base}-seed{seed}.json")
    os.makedirs(args.out, exist_ok=True)

    if make_instance:
        s = int(_require(cfg, "s", kind)) if kind != "negcorr-block" \
            else int(cfg["s"])
        if not 0 < s <= spec.p:
            raise InvalidInputError("signal size s must be in 1..p")
        sigma = float(cfg["sigma"])
        if sigma < 0:
            raise InvalidInputError("sigma must be non-negative")
        amp = float(cfg.get("amp", 1.0))
        g = substream(seed, 1)           # independent of the design stream
        beta = np.zeros(spec.p)
        beta[:s] = amp * (1.0 + g.uniform(size=s))
        noise = g.standard_normal(spec.n) if sigma > 0 else np.zeros(spec.n)
        y = x @ beta + sigma * noise
        inst = RegressionInstance(
            x, y, GroundTruth(beta, np.arange(s), sigma, sigma * noise))
        designs.save_instance(path, inst, spec=spec, seed=seed, extras=extras)
    else:
        designs.save_design(path, x, spec=spec, seed=seed, extras=extras,
                            also_csv=cfg.get("csv", False))
    print(path)
    return EXIT_OK


# --------------------------------------------------------------------------
# solve

SOLVE_SCHEMA = {
    "method": str, "lam": _to_float, "steps": _to_int, "gamma": _to_float,
    "seed": _to_int, "format": str, "name": str,
}


def _error_summary(x, beta, truth):
    diff = beta - truth.beta
    return {
        "linf": float(np.max(np.abs(diff))),
        "l2": float(np.linalg.norm(diff)),
        "predMse": float(np.sum((x @ diff) ** 2) / x.shape[0]),
    }


def _write_artifact(path, fmt, flat, scalars, rows, fieldnames):
    """One document per command: JSON by default, coordinate CSV on request."""
    if fmt == "json":
        doc = {"config": dict(flat)}
        doc.update(scalars)
        doc["rows"] = rows
        reports.write_json(path + ".json", doc)
        return path + ".json"
    if fmt == "csv":
        prov = dict(flat)
        for key, val in scalars.items():
            if isinstance(val, (int, float, str, bool)):
                prov[key] = val
        reports.write_csv(path + ".csv", rows, fieldnames, provenance=prov)
        return path + ".csv"
    raise InvalidInputError(f"unknown format {fmt!r} (known: csv, json)")


def cmd_solve(args):
    cfg = coerce_config(collect_config(args.params, args.config),
                        SOLVE_SCHEMA, "solve")
    method = cfg.get("method", "nnls")
    fmt = cfg.get("format", "json")
    inst, _ = designs.load_instance(args.instance)
    x, y = inst.x, inst.y
    n, p = x.shape

    scalars = {"method": method, "n": n, "p": p}
    if method == "nnls":
        sol = solve_nnls(x, y)
        beta = sol.beta
        scalars["iterations"] = sol.iterations
        scalars["objective"] = sol.objective
    elif method == "nnlasso":
        if "lam" not in cfg:
            raise InvalidInputError("method nnlasso needs lam=...")
        beta = estimators.nn_lasso(x, y, cfg["lam"])
        scalars["lam"] = cfg["lam"]
    elif method == "omp":
        steps = cfg.get("steps")
        if steps is None and inst.truth is not None:
            steps = int(inst.truth.support.size)
        if steps is None:
            raise InvalidInputError("method omp needs steps=...")
        beta = estimators.omp(x, y, steps).beta
        scalars["steps"] = int(steps)
    elif method == "ridge":
        if "gamma" not in cfg:
            raise InvalidInputError("method ridge needs gamma=...")
        beta = estimators.ridge(x, y, cfg["gamma"])
        scalars["gamma"] = cfg["gamma"]
    else:
        raise InvalidInputError(
            f"unknown method {method!r} (known: nnls, nnlasso, omp, ridge)")

    # ridge (and an OMP refit) may go negative; the stationarity check
    # only applies to sign-feasible estimates
    if np.all(beta >= 0):
        rep = kkt_check(x, y, beta)
        scalars["kktMaxViolation"] = rep.max_violation
    scalars["activeSize"] = int(np.count_nonzero(beta > 0))
    if inst.truth is not None:
        scalars["errors"] = _error_summary(x, beta, inst.truth)

    flat = _flat("solve", {**cfg, "method": method,
                           "instance": os.path.basename(args.instance)})
    echo_config(flat)
    line = f"active {scalars['activeSize']}/{p}"
    if "kktMaxViolation" in scalars:
        line += f", KKT max violation {scalars['kktMaxViolation']:.3e}"
    if inst.truth is not None:
        line += f", linf error {scalars['errors']['linf']:.6g}"
    print(line)

    rows = [{"j": j, "beta": float(beta[j])} for j in range(p)]
    os.makedirs(args.out, exist_ok=True)
    base = cfg.get("name") or f"solve-{method}"
    out = _write_artifact(os.path.join(args.out, base), fmt, flat,
                          scalars, rows, ["j", "beta"])
    print(out)
    return EXIT_OK


# --------------------------------------------------------------------------
# diagnose

DIAG_SCHEMA = {
    "s": _to_int, "support": _to_ints, "sigma": _to_float,
    "slack": _to_float, "cross": _to_bool, "format": str, "name": str,
    "seed": _to_int,
}

_DIAG_FIELDS = ["n", "p", "sigma", "slack", "margin_sq_full",
                "margin_sq_support", "min_eig_support", "max_eig_support",
                "inv_gram_inf_norm", "inv_gram_one_inf", "irrepresentable",
                "noise_bound", "off_support_l1_bound", "sup_norm_bound",
                "size_condition_ok", "lasso_lambda_floor"]


def cmd_diagnose(args):
    cfg = coerce_config(collect_config(args.params, args.config),
                        DIAG_SCHEMA, "diagnose")
    fmt = cfg.get("format", "json")
    x, manifest = designs.load_design(args.design)
    n, p = x.shape

    support = None
    if "support" in cfg:
        support = np.asarray(sorted(set(cfg["support"])), dtype=int)
    elif "s" in cfg:
        support = np.arange(int(cfg["s"]))
    elif "truth" in manifest:
        support = np.asarray(manifest["truth"]["support"], dtype=int)

    flat = _flat("diagnose", {**cfg,
                              "design": os.path.basename(args.design)})
    echo_config(flat)

    scalars = {"n": n, "p": p}
    rows = []
    if support is not None and 0 < support.size < p:
        rep = diagnostics.support_constants(
            x, support, sigma=cfg.get("sigma", 1.0),
            slack=cfg.get("slack", 1.0))
        for f in _DIAG_FIELDS:
            scalars[f] = getattr(rep, f)
        scalars["tau0Sq"] = rep.margin_sq_full
        scalars["support"] = [int(j) for j in support]
        rows = [{"field": f, "value": float(getattr(rep, f))}
                for f in _DIAG_FIELDS if f not in ("n", "p")]
        print(f"tau0^2 = {rep.margin_sq_full:.9g}")
        print(f"support margin^2 = {rep.margin_sq_support:.9g}, "
              f"min eig = {rep.min_eig_support:.9g}, "
              f"iota = {rep.irrepresentable:.9g}, "
              f"Kinf = {rep.inv_gram_inf_norm:.9g}")
    else:
        cert = self_reg_margin(x)
        scalars["tau0Sq"] = cert.value
        print(f"tau0^2 = {cert.value:.9g}")
    os.makedirs(args.out, exist_ok=True)
    base = cfg.get("name") or "diagnose"
    out = _write_artifact(os.path.join(args.out, base), fmt, flat,
                          scalars, rows, ["field", "value"])
    print(out)
    return EXIT_OK


# --------------------------------------------------------------------------
# recover

RECOVER_SCHEMA = {
    "sigma": _to_float, "slack": _to_float, "format": str, "name": str,
    "seed": _to_int,
}


def cmd_recover(args):
    cfg = coerce_config(collect_config(args.params, args.config),
                        RECOVER_SCHEMA, "recover")
    fmt = cfg.get("format", "json")
    inst, _ = designs.load_instance(args.instance)
    res = estimators.recover_support(inst.x, inst.y,
                                     slack=cfg.get("slack", 1.0),
                                     sigma_hat=cfg.get("sigma"))
    flat = _flat("recover", {**cfg,
                             "instance": os.path.basename(args.instance)})
    echo_config(flat)

    scalars = {
        "n": inst.x.shape[0], "p": inst.x.shape[1],
        "sizeHat": res.size,
        "sigmaHat": res.sigma_hat,
        "threshold": res.threshold,
        "support": [int(j) for j in res.support],
    }
    line = f"s_hat = {res.size}, sigma_hat = {res.sigma_hat:.6g}"
    if inst.truth is not None:
        true_set = set(int(j) for j in inst.truth.support)
        got = set(int(j) for j in res.support)
        scalars["exact"] = got == true_set
        scalars["missed"] = sorted(true_set - got)
        scalars["spurious"] = sorted(got - true_set)
        line += f", exact = {scalars['exact']}"
    print(line)

    rows = [{"rank": k, "j": int(j), "beta": float(res.beta[j])}
            for k, j in enumerate(res.support)]
    os.makedirs(args.out, exist_ok=True)
    base = cfg.get("name") or "recover"
    out = _write_artifact(os.path.join(args.out, base), fmt, flat,
                          scalars, rows, ["rank", "j", "beta"])
    print(out)
    return EXIT_OK


# --------------------------------------------------------------------------
# experiment

EXPERIMENT_ALIASES = {
    "active-size": "active-size", "prop2": "active-size",
    "tau-contour": "tau-contour", "contour": "tau-contour",
    "deconv": "deconv", "deconvolution": "deconv",
    "recovery-phase": "recovery-phase", "recovery": "recovery-phase",
}

_COMMON = {"seed": _to_int, "threads": _to_int, "reps": _to_int}

EXPERIMENT_SCHEMAS = {
    "active-size": {**_COMMON, "n": _to_int, "p": _to_int, "s": _to_int,
                    "rho": _to_float, "sigma": _to_float, "slack": _to_float,
                    "sampler_draws": _to_int, "band": _to_floats},
    "tau-contour": {**_COMMON, "n": _to_int, "p_ratios": _to_floats,
                    "s_ratios": _to_floats, "family": str, "a": _to_float},
    "deconv": {**_COMMON, "n": _to_int, "p": _to_int, "n_spikes": _to_int,
               "sigma": _to_float, "amp_range": _to_floats,
               "cv_folds": _to_int},
    "recovery-phase": {**_COMMON, "design": str, "n": _to_int,
                       "p_ratios": _to_floats, "s_ratios": _to_floats,
                       "bs": _to_floats, "slack": _to_float},
}


def cmd_experiment(args):
    key = args.name.strip().lower()
    if key not in EXPERIMENT_ALIASES:
        known = ", ".join(sorted(set(EXPERIMENT_ALIASES.values())))
        raise InvalidInputError(
            f"unknown experiment {args.name!r} (known: {known})")
    name = EXPERIMENT_ALIASES[key]
    schema = EXPERIMENT_SCHEMAS[name]
    cfg = coerce_config(collect_config(args.params, args.config),
                        schema, f"experiment {name}")
    cfg["seed"] = resolve_seed(cfg)
    if "family" in cfg:
        fam = cfg["family"].lower()
        if fam not in FAMILY_ALIASES:
            raise InvalidInputError(f"unknown ensemble family {cfg['family']!r}")
        cfg["family"] = FAMILY_ALIASES[fam]

    report = simlab.EXPERIMENTS[name](**cfg)
    flat = _flat("experiment", {**cfg, "experiment": name})
    echo_config(flat)

    os.makedirs(args.out, exist_ok=True)
    csv_path, json_path = simlab.write_report(report, args.out)
    print(csv_path)
    print(json_path)
    if not args.no_figures:
        fig_path = figures.render_report(report, args.out)
        if fig_path:
            print(fig_path)
    return EXIT_OK


# --------------------------------------------------------------------------

COMMANDS = {
    "gen": cmd_gen,
    "solve": cmd_solve,
    "diagnose": cmd_diagnose,
    "recover": cmd_recover,
    "experiment": cmd_experiment,
}


def build_parser():
    ap = argparse.ArgumentParser(
        prog="nnreg",
        description="Non-negative least squares: designs, margins, "
                    "recovery, and seeded experiments.")
    ap.add_argument("--config", metavar="FILE",
                    help="flat key=value file merged under command-line keys")
    ap.add_argument("--out", default=".", metavar="DIR",
                    help="output directory (default: current)")
    ap.add_argument("--no-figures", action="store_true",
                    help="skip PNG rendering for experiment reports")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a design or instance")
    g.add_argument("kind")
    g.add_argument("extra", nargs="*", metavar="family|key=value")
    g.set_defaults(params=[])

    s = sub.add_parser("solve", help="solve an instance with one method")
    s.add_argument("instance")
    s.add_argument("params", nargs="*", metavar="key=value")

    d = sub.add_parser("diagnose", help="design constants and error bounds")
    d.add_argument("design")
    d.add_argument("params", nargs="*", metavar="key=value")

    r = sub.add_parser("recover", help="data-driven support recovery")
    r.add_argument("instance")
    r.add_argument("params", nargs="*", metavar="key=value")

    e = sub.add_parser("experiment", help="run a named experiment")
    e.add_argument("name")
    e.add_argument("params", nargs="*", metavar="key=value")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERICAL as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

"""Command-line surface for sketching CSV datasets and querying sketches.

Subcommands: sketch, estimate, cdf, cov, query-batch, fit-logreg,
inspect, eval.  Machine-readable CSV goes to stdout, human diagnostics to
stderr.  Exit codes: 0 ok, 1 I/O error, 2 validation or parse error.

Heavy imports happen after argument parsing so that --threads can cap the
BLAS thread pools before numpy loads.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

EXIT_OK = 0
EXIT_IO = 1
EXIT_VALIDATION = 2

SEED_ENV_VAR = "DPSKETCH_SEED"

# keys accepted in a key=value config file for `sketch`
SKETCH_CONFIG_KEYS = {
    "map", "bins", "m", "sigma", "hashes", "buckets", "r_width",
    "epsilon", "split", "map_seed", "noise_seed", "normalize",
}


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_VALIDATION):
        super().__init__(message)
        self.code = code


def _default_seed() -> int:
    return int(os.environ.get(SEED_ENV_VAR, "0"))


def _parse_epsilon(text: str) -> float:
    if text.strip().lower() in ("inf", "infinity"):
        return math.inf
    value = float(text)
    if value <= 0:
        raise CliError("epsilon must be positive or inf")
    return value


def _read_csv_dataset(path):
    import numpy as np

    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise CliError(f"{path}: empty file")
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    rows.append([float(v) for v in row])
                except ValueError:
                    raise CliError(f"{path}:{lineno}: non-numeric value")
    except OSError as err:
        raise CliError(str(err), EXIT_IO)
    if not rows:
        raise CliError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=float)
    if not np.all(np.isfinite(data)):
        raise CliError(f"{path}: non-finite value in data")
    return data, header


def _load_schema(path, header):
    from .domain import CONTINUOUS, Domain

    if path is None:
        d = len(header)
        return Domain.unit(d)
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as err:
        raise CliError(str(err), EXIT_IO)
    except json.JSONDecodeError as err:
        raise CliError(f"{path}: invalid JSON ({err})")
    cols = doc.get("columns")
    if not isinstance(cols, list) or len(cols) != len(header):
        raise CliError(f"{path}: schema must list {len(header)} columns")
    lower, upper, kinds = [], [], []
    for col in cols:
        lower.append(float(col.get("lower", 0.0)))
        upper.append(float(col.get("upper", 1.0)))
        kinds.append(col.get("kind", CONTINUOUS))
    from .domain import DomainError

    try:
        return Domain(tuple(lower), tuple(upper), tuple(kinds))
    except DomainError as err:
        raise CliError(f"{path}: {err}")


def _read_config_file(path) -> dict:
    values = {}
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise CliError(f"{path}:{lineno}: expected key=value")
                key, _, value = line.partition("=")
                key = key.strip()
                if key not in SKETCH_CONFIG_KEYS:
                    raise CliError(f"{path}:{lineno}: unknown key {key!r}")
                values[key] = value.strip()
    except OSError as err:
        raise CliError(str(err), EXIT_IO)
    return values


def _out_writer():
    return csv.writer(sys.stdout, lineterminator="\n")


# -- subcommands ----------------------------------------------------------


def cmd_sketch(args) -> int:
    import numpy as np

    from .domain import DomainError
    from .feature_maps import FeatureMapError, build_hist, build_race, build_rff
    from .sketch import DEFAULT_SPLIT, save_sketch, privatize, sketch_exact

    config = _read_config_file(args.config) if args.config else {}

    def opt(name, flag_value, cast, default):
        if flag_value is not None:
            return flag_value
        if name in config:
            return cast(config[name])
        return default

    data, header = _read_csv_dataset(args.input)
    domain = _load_schema(args.schema, header)
    normalize = args.normalize or config.get("normalize", "").lower() in ("1", "true")
    norm_extra = None
    if normalize:
        from .domain import Domain

        mins = data.min(axis=0)
        maxs = data.max(axis=0)
        span = np.where(maxs > mins, maxs - mins, 1.0)
        data = (data - mins) / span
        domain = Domain.unit(data.shape[1])
        norm_extra = {"normalization": {"min": mins.tolist(), "max": maxs.tolist()}}
        print("note: min/max normalization constants are computed from the "
              "data and recorded in the sketch file; they leak information "
              "outside the stated privacy budget", file=sys.stderr)

    map_kind = opt("map", args.map, str, "hist").lower()
    map_seed = opt("map_seed", args.map_seed, int, _default_seed())
    d = data.shape[1]
    try:
        if map_kind == "hist":
            spec = build_hist(domain, opt("bins", args.bins, int, 100))
        elif map_kind == "rff":
            spec = build_rff(d, opt("m", args.m, int, 200),
                             opt("sigma", args.sigma, float, 1.0),
                             map_seed, domain)
        elif map_kind == "race":
            spec = build_race(d, opt("hashes", args.hashes, int, 80),
                              opt("buckets", args.buckets, int, 80),
                              opt("r_width", args.r_width, float, 0.1),
                              map_seed, domain)
        else:
            raise CliError(f"unknown feature map {map_kind!r}")
    except FeatureMapError as err:
        raise CliError(str(err))

    epsilon = _parse_epsilon(opt("epsilon", args.epsilon, str, "inf"))
    split = opt("split", args.split, float, DEFAULT_SPLIT)
    noise_seed = opt("noise_seed", args.noise_seed, int, _default_seed())

    try:
        exact = sketch_exact(spec, data)
    except (DomainError, FeatureMapError) as err:
        raise CliError(f"schema violation: {err}")
    sketch = privatize(exact, spec, epsilon, split, seed=noise_seed)

    try:
        save_sketch(args.out, sketch, spec, extra=norm_extra)
    except OSError as err:
        raise CliError(str(err), EXIT_IO)

    delta = spec.sensitivity_l1()
    sum_scale = delta / sketch.epsilon_num if math.isfinite(sketch.epsilon_num) else 0.0
    count_scale = 1.0 / sketch.epsilon_den if math.isfinite(sketch.epsilon_den) else 0.0
    writer = _out_writer()
    writer.writerow(["sensitivity_l1", "noise_scale_sum", "noise_scale_count",
                     "noisy_count"])
    writer.writerow([repr(delta), repr(sum_scale), repr(count_scale),
                     repr(sketch.noisy_count)])
    print(f"wrote {args.out} ({spec.variant}, m={spec.m}, "
          f"epsilon={'inf' if math.isinf(epsilon) else epsilon})",
          file=sys.stderr)
    return EXIT_OK


def _load_sketch_file(path):
    from .feature_maps import FeatureMapError
    from .sketch import SketchError, load_sketch

    try:
        return load_sketch(path)
    except OSError as err:
        raise CliError(str(err), EXIT_IO)
    except (json.JSONDecodeError, SketchError, FeatureMapError, KeyError) as err:
        raise CliError(f"{path}: {err}")


def _train_config(args, spec):
    from .estimator import TrainConfig

    return TrainConfig(
        n_synth=args.n_synth,
        extra_reg=args.extra_reg,
        seed=args.synth_seed if args.synth_seed is not None else _default_seed(),
    )


def cmd_estimate(args) -> int:
    import numpy as np

    from .estimator import SyntheticFeatures, learn_and_estimate
    from .metrics import emd_1d, mre
    from .targets import TargetError, estimate_cdf, estimate_covariance, parse_target

    sketch, spec, _doc = _load_sketch_file(args.sketch)
    try:
        kind, payload = parse_target(args.target)
    except TargetError as err:
        raise CliError(f"target parse error: {err}")

    truth_data = None
    if args.truth:
        truth_data, _ = _read_csv_dataset(args.truth)

    config = _train_config(args, spec)
    features = SyntheticFeatures(spec, config)
    writer = _out_writer()

    if kind in ("moment", "count"):
        value = learn_and_estimate(spec, sketch, payload, features=features)
        row = [args.target.strip(), repr(value)]
        header = ["target", "estimate"]
        if truth_data is not None:
            true_value = float(np.mean(payload(truth_data)))
            header += ["true_value", "metric", "metric_value"]
            if true_value != 0:
                row += [repr(true_value), "mre", repr(mre(value, true_value))]
            else:
                row += [repr(true_value), "abs_error", repr(abs(value - true_value))]
        writer.writerow(header)
        writer.writerow(row)
    elif kind == "cdf":
        est = estimate_cdf(spec, sketch, payload, features=features)
        header = ["target", "threshold", "estimate"]
        true_cdf = None
        if truth_data is not None:
            true_cdf = [(truth_data[:, payload - 1] <= s).mean()
                        for s in est.thresholds]
            header.append("true_value")
        writer.writerow(header)
        for i, (s, v) in enumerate(zip(est.thresholds, est.values)):
            row = [args.target.strip(), repr(float(s)), repr(float(v))]
            if true_cdf is not None:
                row.append(repr(float(true_cdf[i])))
            writer.writerow(row)
        if true_cdf is not None:
            print(f"emd={emd_1d(est.values, true_cdf)!r}", file=sys.stderr)
    elif kind == "cov":
        cov = estimate_covariance(spec, sketch, features=features)
        for row in cov:
            writer.writerow([repr(float(v)) for v in row])
        if truth_data is not None:
            from .metrics import frobenius

            mu = truth_data.mean(axis=0)
            c = truth_data - mu
            true_cov = c.T @ c / truth_data.shape[0]
            print(f"frobenius={frobenius(cov, true_cov)!r}", file=sys.stderr)
    return EXIT_OK


def cmd_cdf(args) -> int:
    args.target = f"cdf {args.attr}"
    return cmd_estimate(args)


def cmd_cov(args) -> int:
    args.target = "cov"
    return cmd_estimate(args)


def cmd_query_batch(args) -> int:
    import numpy as np

    from .estimator import SyntheticFeatures
    from .targets import TargetError, answer_queries, parse_predicates

    sketch, spec, _doc = _load_sketch_file(args.sketch)
    try:
        with open(args.queries) as fh:
            lines = [line.strip() for line in fh if line.strip()]
    except OSError as err:
        raise CliError(str(err), EXIT_IO)
    try:
        queries = [parse_predicates(line) for line in lines]
    except TargetError as err:
        raise CliError(f"query parse error: {err}")

    truth_data = None
    if args.truth:
        truth_data, _ = _read_csv_dataset(args.truth)

    config = _train_config(args, spec)
    features = SyntheticFeatures(spec, config)
    try:
        answers = answer_queries(spec, sketch, queries, features=features)
    except TargetError as err:
        raise CliError(str(err))
    writer = _out_writer()
    header = ["query", "fraction", "count"]
    if truth_data is not None:
        header.append("true_fraction")
    writer.writerow(header)
    for i, line in enumerate(lines):
        row = [line, repr(float(answers.fractions[i])),
               repr(float(answers.counts[i]))]
        if truth_data is not None:
            row.append(repr(float(np.mean(queries[i](truth_data)))))
        writer.writerow(row)
    return EXIT_OK


def cmd_fit_logreg(args) -> int:
    from .domain import BINARY
    from .estimator import SyntheticFeatures, TrainConfig
    from .reweighting import GdConfig, evaluate_auc, fit_logistic_from_sketch

    sketch, spec, _doc = _load_sketch_file(args.sketch)
    test_data, _ = _read_csv_dataset(args.test)
    if spec.variant == "HIST":
        print("warning: the binned-marginal feature map carries no "
              "cross-attribute information; expect near-chance AUC",
              file=sys.stderr)

    domain = spec.domain
    if domain.kinds[-1] != BINARY:
        from .domain import CONTINUOUS, Domain

        # Reinterpret the last attribute as the label if it was declared
        # continuous on [0, 1].
        kinds = (CONTINUOUS,) * (domain.d - 1) + (BINARY,)
        try:
            domain = Domain(domain.lower, domain.upper, kinds)
        except Exception as err:
            raise CliError(f"last attribute cannot be a binary label: {err}")

    config = TrainConfig(
        n_synth=args.n_synth, extra_reg=args.extra_reg,
        seed=args.synth_seed if args.synth_seed is not None else _default_seed(),
        domain=domain,
    )
    features = SyntheticFeatures(spec, config)
    gd = GdConfig(step=args.step, iters=args.iters, seed=_default_seed())
    model = fit_logistic_from_sketch(spec, sketch, features=features, gd=gd)
    try:
        auc_value = evaluate_auc(model, test_data)
    except ValueError as err:
        raise CliError(f"{args.test}: {err}")

    if args.model_out:
        doc = {
            "theta": model.theta.tolist(),
            "intercept": model.intercept,
            "objective": model.objective,
            "config": {"n_synth": config.n_synth, "step": gd.step,
                       "iters": gd.iters, "lambda": model.diagnostics["lambda"]},
        }
        tmp = args.model_out + ".tmp"
        try:
            with open(tmp, "w") as fh:
                json.dump(doc, fh, sort_keys=True, indent=1)
                fh.write("\n")
            os.replace(tmp, args.model_out)
        except OSError as err:
            raise CliError(str(err), EXIT_IO)

    writer = _out_writer()
    writer.writerow(["auc"])
    writer.writerow([repr(auc_value)])
    return EXIT_OK


def cmd_inspect(args) -> int:
    sketch, spec, doc = _load_sketch_file(args.sketch)
    writer = _out_writer()
    writer.writerow(["field", "value"])
    rows = [
        ("variant", spec.variant),
        ("d", spec.d),
        ("m", spec.m),
        ("sensitivity_l1", repr(spec.sensitivity_l1())),
        ("epsilon_num", "inf" if math.isinf(sketch.epsilon_num)
         else repr(sketch.epsilon_num)),
        ("epsilon_den", "inf" if math.isinf(sketch.epsilon_den)
         else repr(sketch.epsilon_den)),
        ("noisy_count", repr(sketch.noisy_count)),
        ("spec_id", sketch.spec_id),
    ]
    if "normalization" in doc:
        rows.append(("normalized", "true"))
    for row in rows:
        writer.writerow(row)
    return EXIT_OK


PLAN_KEYS = {
    "dataset", "n", "d", "sketches", "epsilons", "repetitions", "tasks",
    "n_synth", "n_queries", "extra_reg", "seed",
}


def _read_plan(path):
    from .harness import ExperimentPlan

    values = {}
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise CliError(f"{path}:{lineno}: expected key=value")
                key, _, value = line.partition("=")
                key = key.strip()
                if key not in PLAN_KEYS:
                    raise CliError(f"{path}:{lineno}: unknown key {key!r}")
                values[key] = value.strip()
    except OSError as err:
        raise CliError(str(err), EXIT_IO)

    kwargs = {}
    if "dataset" in values:
        kwargs["dataset"] = values["dataset"]
    for key in ("n", "d", "repetitions", "n_synth", "n_queries", "seed"):
        if key in values:
            kwargs[key] = int(values[key])
    if "extra_reg" in values:
        kwargs["extra_reg"] = float(values["extra_reg"])
    if "sketches" in values:
        kwargs["sketches"] = tuple(s.strip() for s in values["sketches"].split(","))
    if "tasks" in values:
        kwargs["tasks"] = tuple(s.strip() for s in values["tasks"].split(","))
    if "epsilons" in values:
        kwargs["epsilons"] = tuple(
            _parse_epsilon(s) for s in values["epsilons"].split(","))
    try:
        return ExperimentPlan(**kwargs)
    except ValueError as err:
        raise CliError(f"{path}: {err}")


def cmd_eval(args) -> int:
    from .harness import run_plan

    plan = _read_plan(args.plan)
    if args.quick:
        plan = plan.quick()
    try:
        results = run_plan(plan, args.out)
    except OSError as err:
        raise CliError(str(err), EXIT_IO)
    print(f"results written to {results}", file=sys.stderr)
    return EXIT_OK


# -- argument parsing -----------------------------------------------------


def _add_fit_args(sub):
    sub.add_argument("--n-synth", type=int, default=100_000)
    sub.add_argument("--extra-reg", type=float, default=1.0)
    sub.add_argument("--synth-seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpsketch",
        description="Differentially private dataset sketches and "
                    "sketch-based estimation.",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS thread pools")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sketch", help="sketch a CSV dataset")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--map", choices=["hist", "rff", "race"], default=None)
    p.add_argument("--bins", type=int, default=None)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--hashes", type=int, default=None)
    p.add_argument("--buckets", type=int, default=None)
    p.add_argument("--r-width", type=float, default=None)
    p.add_argument("--epsilon", default=None)
    p.add_argument("--split", type=float, default=None)
    p.add_argument("--map-seed", type=int, default=None)
    p.add_argument("--noise-seed", type=int, default=None)
    p.add_argument("--schema", default=None)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_sketch)

    p = sub.add_parser("estimate", help="estimate a target from a sketch")
    p.add_argument("sketch")
    p.add_argument("target")
    p.add_argument("--truth", default=None)
    _add_fit_args(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("cdf", help="estimate a per-attribute CDF")
    p.add_argument("sketch")
    p.add_argument("--attr", type=int, required=True)
    p.add_argument("--truth", default=None)
    _add_fit_args(p)
    p.set_defaults(func=cmd_cdf)

    p = sub.add_parser("cov", help="estimate the covariance matrix")
    p.add_argument("sketch")
    p.add_argument("--truth", default=None)
    _add_fit_args(p)
    p.set_defaults(func=cmd_cov)

    p = sub.add_parser("query-batch", help="answer counting queries from a file")
    p.add_argument("sketch")
    p.add_argument("queries")
    p.add_argument("--truth", default=None)
    _add_fit_args(p)
    p.set_defaults(func=cmd_query_batch)

    p = sub.add_parser("fit-logreg", help="train a logistic model from a sketch")
    p.add_argument("sketch")
    p.add_argument("test")
    p.add_argument("--model-out", default=None)
    p.add_argument("--step", type=float, default=0.1)
    p.add_argument("--iters", type=int, default=500)
    _add_fit_args(p)
    p.set_defaults(func=cmd_fit_logreg)

    p = sub.add_parser("inspect", help="describe a sketch file")
    p.add_argument("sketch")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("eval", help="run an experiment plan")
    p.add_argument("--plan", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--quick", action="store_true")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        return args.func(args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.code
    except BrokenPipeError:
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

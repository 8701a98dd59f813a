"""``sbmds`` command line: simulate, fit, evaluate, bench, align, experiment.

Every subcommand writes into ``--out-dir`` (refusing a non-empty directory
unless ``--force``), writes files atomically and leaves a ``manifest.json``
recording resolved parameters, input digests, seed, version and timestamps.

Exit codes: 0 success, 1 a requested check failed, 2 usage error, 3 validation error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .core import CouplingScheme, read_dissim_csv, write_matrix_csv
from .exceptions import (
    ConfigurationError,
    DimensionError,
    DomainError,
    NumericalError,
    ValidationError,
)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_NUMERICAL = 4


class UsageError(Exception):
    """Bad or missing arguments detected after parsing."""


# ----------------------------------------------------------------------------
# file helpers


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write(path, writer) -> None:
    """Call ``writer(tmp_path)`` then move the result onto ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text(path, text: str) -> None:
    def _w(tmp):
        with open(tmp, "w", newline="") as fh:
            fh.write(text)

    atomic_write(path, _w)


def write_json(path, obj) -> None:
    write_text(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def write_rows_csv(path, rows, columns=None) -> None:
    if not rows:
        write_text(path, "")
        return
    columns = columns or list(rows[0].keys())
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _csv_value(row.get(k)) for k in columns})
    write_text(path, buf.getvalue())


def _csv_value(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return str(obj)


def prepare_out_dir(path, force: bool) -> Path:
    if path is None:
        raise UsageError("--out-dir is required")
    out = Path(path)
    if out.exists() and not out.is_dir():
        raise UsageError(f"{out} exists and is not a directory")
    if out.exists() and any(out.iterdir()) and not force:
        raise UsageError(f"output directory {out} is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    return out


class Manifest:
    """Collects run provenance and writes ``manifest.json`` at the end."""

    def __init__(self, subcommand, args):
        self.data = {
            "subcommand": subcommand,
            "params": {k: v for k, v in vars(args).items() if k not in ("func", "command")},
            "inputs": {},
            "outputs": {},
            "seed": getattr(args, "seed", None),
            "version": __version__,
            "started": _now(),
        }

    def add_input(self, path):
        if path is not None:
            self.data["inputs"][str(path)] = sha256_file(path)

    def write(self, out_dir: Path, **extra):
        for f in sorted(out_dir.iterdir()):
            if f.is_file() and f.name != "manifest.json" and not f.name.startswith("."):
                self.data["outputs"][f.name] = sha256_file(f)
        self.data.update(extra)
        self.data["finished"] = _now()
        write_json(out_dir / "manifest.json", self.data)


def _now():
    return datetime.now(timezone.utc).isoformat()


def _csv_list(text, cast=str):
    if text is None:
        return None
    if isinstance(text, (list, tuple)):
        return [cast(t) for t in text]
    return [cast(t.strip()) for t in str(text).split(",") if t.strip()]


def _require(args, *names):
    for name in names:
        if getattr(args, name, None) is None:
            raise UsageError(f"--{name.replace('_', '-')} is required")


def _apply_threads():
    value = os.environ.get("SBMDS_THREADS")
    if not value:
        return
    import numba

    try:
        n = int(value)
    except ValueError:
        raise UsageError(f"SBMDS_THREADS must be an integer, got {value!r}") from None
    if n < 1:
        raise UsageError("SBMDS_THREADS must be >= 1")
    if numba.config.NUMBA_NUM_THREADS > 1:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


# ----------------------------------------------------------------------------
# subcommands


def cmd_simulate(args):
    from .evaluation.simulate import SimSpec, simulate_dataset

    _require(args, "n")
    noise = {"tnorm": "truncated-normal", "lognormal": "log-normal"}[args.noise]
    spec = SimSpec(args.n, args.true_dim, args.sigma_true, noise, args.seed)
    out = prepare_out_dir(args.out_dir, args.force)
    manifest = Manifest("simulate", args)
    X, d_true, d_obs = simulate_dataset(spec)
    atomic_write(out / "true_locations.csv", lambda p: write_matrix_csv(p, X))
    atomic_write(out / "true_distances.csv", lambda p: write_matrix_csv(p, d_true))
    atomic_write(out / "observed_distances.csv", lambda p: write_matrix_csv(p, d_obs))
    manifest.write(out, noise_construction=_noise_note(noise))
    print(f"wrote {args.n} x {args.n} observed distances to {out}")


def _noise_note(noise):
    if noise == "truncated-normal":
        return "delta ~ N(delta_true, sigma_true^2) truncated to (0, inf), one draw per pair"
    return "delta = max(delta_true + exp(Z) - 1, 1e-6), Z ~ N(0, sigma_true^2), one draw per pair"


def cmd_fit(args):
    from .samplers import PriorSpec, SamplerConfig, run_chain

    _require(args, "dissim")
    delta = read_dissim_csv(args.dissim, skip_header=args.skip_header).values
    n_obj = delta.shape[0]
    scheme = CouplingScheme.parse(args.coupling, n_obj, args.embed_dim)
    config = SamplerConfig(
        algorithm=args.sampler,
        iterations=args.iterations,
        burn_in=args.burnin,
        thin=args.thin,
        leapfrog_steps=args.leapfrog_steps,
        initial_step=args.step_size,
        target_accept=args.target_accept,
        seed=args.seed,
    )
    priors = PriorSpec(args.location_var, args.sigma2_shape, args.sigma2_scale)
    perm = None
    if args.permute_rows is not None:
        perm = np.random.default_rng(args.permute_rows).permutation(n_obj)
        delta = delta[np.ix_(perm, perm)]
    out = prepare_out_dir(args.out_dir, args.force)
    manifest = Manifest("fit", args)
    manifest.add_input(args.dissim)
    trace = run_chain(delta, scheme, priors, config, init=args.init, dim=args.embed_dim)
    if perm is not None:
        # row k of the permuted problem is original object perm[k]
        restored = np.empty_like(trace.samples)
        restored[:, perm] = trace.samples
        trace.samples = restored
        trace.meta["permutation"] = perm.tolist()
        trace.meta["permute_rows_seed"] = args.permute_rows
    trace.meta["coupling_requested"] = args.coupling
    atomic_write(out / "trace.csv", trace.to_csv)
    write_json(out / "trace_meta.json", trace.metadata())
    manifest.write(out, scheme=str(scheme))
    acc = trace.acceptance
    print(
        f"{len(trace)} samples, scheme {scheme}, location acceptance {acc['location']:.3f}, "
        f"sigma2 acceptance {acc['sigma2']:.3f}, {trace.wall_seconds:.1f}s"
    )


def _load_trace(path, meta_path=None):
    from .samplers import read_trace

    path = Path(path)
    if meta_path is None:
        candidate = path.with_name("trace_meta.json")
        meta_path = candidate if candidate.exists() else None
    try:
        return read_trace(path, meta_path)
    except (ValueError, IndexError, StopIteration) as exc:
        if isinstance(exc, ConfigurationError):
            raise ValidationError(str(exc)) from None
        raise ValidationError(f"{path}: unreadable trace ({exc})") from None


def cmd_evaluate(args):
    from .evaluation.diagnostics import MetricReport, ess, hellinger, mean_mse, min_ess, min_ess_per_hour

    _require(args, "trace")
    metrics = _csv_list(args.metrics)
    if metrics is None:
        metrics = ["ess"] + (["mse"] if args.truth_distances else []) + (["hellinger"] if args.compare_trace else [])
    unknown = set(metrics) - {"mse", "ess", "ess-per-hour", "hellinger"}
    if unknown:
        raise UsageError(f"unknown metrics {sorted(unknown)}")
    if "mse" in metrics and not args.truth_distances:
        raise UsageError("metric 'mse' needs --truth-distances")
    if "hellinger" in metrics and not args.compare_trace:
        raise UsageError("metric 'hellinger' needs --compare-trace")
    trace = _load_trace(args.trace, args.trace_meta)
    if ({"ess", "ess-per-hour"} & set(metrics)) and len(trace) < 10:
        raise ValidationError(f"ESS needs at least 10 retained samples, trace has {len(trace)}")
    truth = read_dissim_csv(args.truth_distances).values if args.truth_distances else None
    if truth is not None and truth.shape[0] != trace.n_objects:
        raise DimensionError(f"truth has {truth.shape[0]} objects, trace has {trace.n_objects}")
    out = prepare_out_dir(args.out_dir, args.force)
    manifest = Manifest("evaluate", args)
    for p in (args.trace, args.truth_distances, args.compare_trace):
        manifest.add_input(p)
    result = {"monitor": args.monitor, "n_samples": len(trace)}
    mse = ess_min = h = None
    if "mse" in metrics:
        mse = mean_mse(trace, truth, args.max_pairs, np.random.default_rng(args.seed))
        result["mse_bar"] = mse
    if "ess" in metrics or "ess-per-hour" in metrics:
        ess_min = min_ess(trace, _monitor(args.monitor))
        result["ess_min"] = ess_min
        result["ess_sigma2"] = ess(trace.sigma2)
    if "ess-per-hour" in metrics:
        result["ess_per_hour"] = min_ess_per_hour(trace, _monitor(args.monitor))
    if "hellinger" in metrics:
        other = _load_trace(args.compare_trace)
        h = hellinger(_scalar_column(trace, args.scalar), _scalar_column(other, args.scalar))
        result["hellinger"] = h
        result["hellinger_scalar"] = args.scalar
        result["hellinger_bins"] = 512
    result["seconds"] = trace.wall_seconds
    # validates ranges (e.g. hellinger in [0, 1])
    MetricReport(mse, ess_min, result.get("ess_per_hour"), h, trace.wall_seconds)
    write_json(out / "metrics.json", result)
    write_rows_csv(out / "metrics.csv", [result])
    manifest.write(out)
    for key in ("mse_bar", "ess_min", "ess_per_hour", "hellinger"):
        if key in result:
            print(f"{key}: {result[key]:.6g}")


def _monitor(text):
    if text in ("all", "sigma2", "distances"):
        return text
    return _csv_list(text)


def _scalar_column(trace, name):
    if name == "sigma2":
        return trace.sigma2
    if name.startswith("d_"):
        a, b = (int(t) - 1 for t in name.split("_")[1:3])
        return np.linalg.norm(trace.samples[:, a] - trace.samples[:, b], axis=1)
    try:
        n, d = (int(t) - 1 for t in name.split("_")[1:3])
        return trace.samples[:, n, d]
    except (ValueError, IndexError):
        raise UsageError(f"unknown scalar {name!r}; use sigma2, x_N_D or d_N_M") from None


def cmd_bench(args):
    from .evaluation.experiments import timing_experiment

    n_list = _csv_list(args.n_list, int)
    schemes = _csv_list(args.coupling_list)
    if not n_list or not schemes:
        raise UsageError("--n-list and --coupling-list must be non-empty")
    out = prepare_out_dir(args.out_dir, args.force)
    manifest = Manifest("bench", args)
    rows = timing_experiment(n_list, schemes, args.reps, args.seed, args.dim)
    write_rows_csv(out / "timings.csv", rows, ["n", "scheme", "op", "seconds_median"])
    manifest.write(out, resolved_schemes=sorted({f"{r['n']}:{r['resolved']}" for r in rows}))
    for r in rows:
        print(f"n={r['n']} {r['scheme']} {r['op']}: {r['seconds_median']:.6f}s")


def cmd_align(args):
    from .evaluation.embedding import summarize_aligned

    _require(args, "trace")
    trace = _load_trace(args.trace)
    if args.reference == "first-sample":
        reference = trace.samples[0]
    else:
        reference = np.loadtxt(args.reference, delimiter=",", ndmin=2)
        if reference.shape != trace.samples.shape[1:]:
            raise DimensionError(f"reference has shape {reference.shape}, trace snapshots are {trace.samples.shape[1:]}")
    out = prepare_out_dir(args.out_dir, args.force)
    manifest = Manifest("align", args)
    manifest.add_input(args.trace)
    if args.reference != "first-sample":
        manifest.add_input(args.reference)
    summary = summarize_aligned(trace.samples, reference, args.summary)
    atomic_write(out / "aligned_locations.csv", lambda p: write_matrix_csv(p, summary))
    manifest.write(out)
    print(f"aligned {len(trace)} snapshots; wrote {summary.shape[0]} x {summary.shape[1]} {args.summary} locations")


EXPERIMENTS = (
    "worked-example",
    "gradient",
    "equivalence",
    "invariance",
    "speedup",
    "scaling",
    "elbow",
    "consistency",
    "samplers",
    "diagnostics",
    "acceptance",
    "elbow-sweep",
    "misspec",
)


def cmd_experiment(args):
    from .evaluation import checks, experiments
    from .samplers import SamplerConfig

    _require(args, "name")
    out = prepare_out_dir(args.out_dir, args.force)
    manifest = Manifest("experiment", args)
    config = SamplerConfig(
        iterations=args.iterations, burn_in=args.burnin, thin=args.thin, seed=args.seed
    )
    if args.name == "elbow-sweep":
        bands = _csv_list(args.bands, int)
        rows = []
        for s in range(args.n_seeds):
            schemes = ["full"] + [f"{args.kind}:{b}" for b in bands]
            rows += experiments.elbow_experiment(
                args.n, args.sigma_true, schemes, config, args.seed + s, noise_kind=_noise(args.noise)
            )
        write_rows_csv(out / "results.csv", rows)
        manifest.write(out)
        print(f"wrote {len(rows)} rows")
        return
    if args.name == "misspec":
        dims = _csv_list(args.true_dims, int)
        rows = experiments.misspecification_experiment(
            args.n, dims, ("full", "banded:20"), args.sigma_true, config, args.seed
        )
        write_rows_csv(out / "results.csv", rows, ["n", "seed", "true_dim", "method", "mse_bar"])
        manifest.write(out)
        print(f"wrote {len(rows)} rows")
        return
    names = list(checks.ALL_CHECKS) if args.name == "acceptance" else [args.name]
    summary = {}
    for i, name in enumerate(names, 1):
        res = checks.ALL_CHECKS[name]()
        summary[name] = {"passed": bool(res.passed), "summary": res.summary, "seconds": res.seconds, "details": res.details}
        rows = res.details.get("rows")
        if rows:
            write_rows_csv(out / f"{name}.csv", rows)
        print(res.line(), flush=True)
    write_json(out / "results.json", summary)
    manifest.write(out)
    if not all(v["passed"] for v in summary.values()):
        return EXIT_CHECK_FAILED


def _noise(text):
    return {"tnorm": "truncated-normal", "lognormal": "log-normal"}[text]


# ----------------------------------------------------------------------------
# parser


def _common(p, seed=True):
    p.add_argument("--config", help="JSON file whose keys match the flag names")
    p.add_argument("--out-dir", help="output directory (must be empty unless --force)")
    p.add_argument("--force", action="store_true", help="write into a non-empty --out-dir")
    if seed:
        p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sbmds", description="Sparse Bayesian multidimensional scaling")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("simulate", help="simulate a synthetic dataset")
    _common(p)
    p.add_argument("--n", type=int, help="number of objects")
    p.add_argument("--true-dim", type=int, default=2)
    p.add_argument("--embed-dim", type=int, default=2, help="recorded in the manifest for later fits")
    p.add_argument("--sigma-true", type=float, default=0.2, help="noise standard deviation")
    p.add_argument("--noise", choices=["tnorm", "lognormal"], default="tnorm")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="run one MCMC chain on a dissimilarity CSV")
    _common(p)
    p.add_argument("--dissim", help="square dissimilarity matrix CSV")
    p.add_argument("--skip-header", action="store_true")
    p.add_argument("--embed-dim", type=int, default=2)
    p.add_argument("--coupling", default="full", help="full | banded:B | landmark:L | auto")
    p.add_argument("--sampler", choices=["hmc", "mh"], default="hmc")
    p.add_argument("--iterations", type=int, default=11000)
    p.add_argument("--burnin", type=int, default=1000)
    p.add_argument("--thin", type=int, default=10)
    p.add_argument("--leapfrog-steps", type=int, default=20)
    p.add_argument("--step-size", type=float, default=None)
    p.add_argument("--target-accept", type=float, default=None)
    p.add_argument("--init", choices=["classical-mds", "random"], default="classical-mds")
    p.add_argument("--location-var", type=float, default=1.0)
    p.add_argument("--sigma2-shape", type=float, default=1.0)
    p.add_argument("--sigma2-scale", type=float, default=1.0)
    p.add_argument("--permute-rows", type=int, default=None, metavar="SEED",
                   help="shuffle object order before fitting; the trace is written in the original order")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("evaluate", help="accuracy and mixing metrics for a trace")
    _common(p)
    p.add_argument("--trace")
    p.add_argument("--trace-meta", default=None)
    p.add_argument("--truth-distances", default=None)
    p.add_argument("--compare-trace", default=None)
    p.add_argument("--scalar", default="sigma2", help="series compared by hellinger: sigma2, x_N_D or d_N_M")
    p.add_argument("--metrics", default=None, help="comma list of mse, ess, ess-per-hour, hellinger")
    p.add_argument("--monitor", default="all", help="all | sigma2 | distances | comma list of columns")
    p.add_argument("--max-pairs", type=int, default=1000)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="time likelihood and gradient evaluations")
    _common(p)
    p.add_argument("--n-list", default="500,1000")
    p.add_argument("--coupling-list", default="full,banded:50", help="schemes; sizes may use n, e.g. banded:n-1")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--dim", type=int, default=2)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("align", help="Procrustes-align trace snapshots and summarise")
    _common(p, seed=False)
    p.add_argument("--trace")
    p.add_argument("--reference", default="first-sample", help="first-sample or a locations CSV")
    p.add_argument("--summary", choices=["mean", "median"], default="mean")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("experiment", help="run a named check or experiment")
    _common(p)
    p.add_argument("name", nargs="?", choices=EXPERIMENTS)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--sigma-true", type=float, default=0.2)
    p.add_argument("--noise", choices=["tnorm", "lognormal"], default="tnorm")
    p.add_argument("--kind", choices=["banded", "landmark"], default="banded")
    p.add_argument("--bands", default="1,2,5,10,20", help="elbow-sweep sizes")
    p.add_argument("--n-seeds", type=int, default=1)
    p.add_argument("--true-dims", default="2,3,4,5,6,7,8,9,10")
    p.add_argument("--iterations", type=int, default=11000)
    p.add_argument("--burnin", type=int, default=1000)
    p.add_argument("--thin", type=int, default=10)
    p.set_defaults(func=cmd_experiment)
    return parser


def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def parse_args(argv=None):
    """Parse ``argv``, then layer a ``--config`` JSON file under the command line."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        raise UsageError("a subcommand is required")
    if args.config:
        sub = _subparser(parser, args.command)
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        dests = {a.dest for a in sub._actions}
        defaults = {}
        for key, value in cfg.items():
            dest = key.lstrip("-").replace("-", "_")
            if dest not in dests or dest in ("config", "help"):
                raise UsageError(f"unknown config key {key!r} for {args.command}")
            defaults[dest] = value
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        _apply_threads()
        code = args.func(args)
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    except (UsageError, ConfigurationError, FileNotFoundError) as exc:
        print(f"sbmds: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, DimensionError, DomainError) as exc:
        print(f"sbmds: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"sbmds: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return code or EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface.

Inputs are passed by role: ``--true``/``--true-pool`` hold samples of the
target distribution, ``--gen``/``--gen-pool`` samples of the generator. The
``--direction`` flag decides which side plays the reference: with
``true-as-ref`` the reference is ``--true``, null toys come from
``--true-pool`` and test data from ``--gen-pool``; ``gen-as-ref`` swaps the
roles.

Exit codes: 0 success, 1 usage error, 2 numerical failure or fingerprint
mismatch, 3 IO or parse failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .benchmarks import MoGSpec, perturb_mog, random_mog, sample_mog
from .calibration import ResamplingMode, ResamplingPolicy, cached_null, check_fingerprint, run_validation
from .diagnostics import classifier_scores, corner_data, reweight_reference, select_top_quantile
from .errors import DatasetParseError, FingerprintMismatch, InputError, NumericalError
from .io import DataFormat, read_config, read_dataset, read_report, write_dataset, write_report
from .model_selection import choose_lambda, heuristic_sigma, lambda_scan, preset_config, saturation_m, scan_m
from .rng import derive_seed
from .testing import make_report, run_single_test
from .types import Dataset, Direction, NplmConfig, NullModel, TrainedModel

log = logging.getLogger("nplm_gof")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3

DEFAULT_LAMBDA_GRID = (1e-4, 1e-5, 1e-6, 1e-7, 1e-8)
DEFAULT_CENTERS = 500


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ------------------------------------------------------------------ helpers


def _ext(fmt: DataFormat) -> str:
    return ".bin" if DataFormat(fmt) is DataFormat.BINARY else ".csv"


def _file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Run:
    """Collects the provenance of one invocation and stamps it on outputs."""

    def __init__(self, args):
        self.args = args
        self.started = time.perf_counter()
        self.inputs: dict = {}
        self.outputs: list = []
        self.config: Optional[NplmConfig] = None
        self.seeds: dict = {"master_seed": args.seed}

    def load(self, role: str, path) -> Dataset:
        if path is None:
            raise UsageError(f"missing required input --{role}")
        ds = read_dataset(path, label=role)
        self.inputs[role] = {"path": str(path), "sha256": _file_sha256(path), "shape": [ds.n_points, ds.dim]}
        return ds

    def note_input(self, role: str, path) -> None:
        self.inputs[role] = {"path": str(path), "sha256": _file_sha256(path)}

    def manifest(self) -> dict:
        from .io import to_document

        # wall_time is the only field expected to differ between reruns
        return {
            "schema": "nplm.RunManifest/1",
            "command": self.args.command,
            "argv": [a for a in self.args.argv if not a.startswith("--threads")],
            "config": None if self.config is None else to_document(self.config),
            "inputs": self.inputs,
            "outputs": list(self.outputs),
            "seeds": self.seeds,
            "version": __version__,
            "wall_time": round(time.perf_counter() - self.started, 3),
        }

    def report(self, obj, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(str(path))
        write_report(obj, path, manifest=self.manifest_ref())

    def dataset(self, ds: Dataset, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(str(path))
        write_dataset(ds, path, self.args.format)

    def manifest_ref(self) -> dict:
        return {"path": str(self.manifest_path), "command": self.args.command, "version": __version__}

    @property
    def manifest_path(self) -> Path:
        return Path(self.args.manifest or Path(self.args.out_dir) / f"manifest-{self.args.command}.json")

    def finish(self) -> None:
        self.manifest_path.parent.mkdir(parents=True, exist_ok=True)
        self.manifest_path.write_text(json.dumps(self.manifest(), indent=1) + "\n")


def _roles(args):
    """(reference path, toy-pool path, data-pool path) for the chosen direction."""
    if Direction(args.direction) is Direction.TRUE_AS_REFERENCE:
        return ("true", args.true), ("true-pool", args.true_pool), ("gen-pool", args.gen_pool)
    return ("gen", args.gen), ("gen-pool", args.gen_pool), ("true-pool", args.true_pool)


def _load_config(args, run: Run) -> NplmConfig:
    if args.preset:
        cfg = preset_config(args.preset)
    elif args.config:
        cfg = read_config(args.config)
        run.note_input("config", args.config)
    else:
        raise UsageError("this command needs --config or --preset")
    cfg = replace(cfg, master_seed=args.seed)
    run.config = cfg
    return cfg


def _policy(args, toy_size_default: int) -> ResamplingPolicy:
    return ResamplingPolicy(ResamplingMode(args.mode), args.toy_size or toy_size_default)


def _null(args, run: Run, reference, toy_pool, config, policy) -> NullModel:
    if args.null:
        null = read_report(args.null)
        if not isinstance(null, NullModel):
            raise InputError(f"{args.null} does not hold a NullModel")
        run.note_input("null", args.null)
        check_fingerprint(null, config, reference, policy.toy_size)
        return null
    if toy_pool is None:
        raise UsageError("need --null or a toy pool to calibrate")
    return cached_null(args.cache_dir, reference, toy_pool, config, policy, args.n_toys, args.threads)


# ----------------------------------------------------------------- commands


def cmd_gen_mog(args, run: Run) -> None:
    """Random MoG target, a perturbed generator surrogate and samples of both."""
    out = Path(args.out_dir)
    spec = random_mog(args.dim, args.components, args.seed)
    gen = perturb_mog(spec, args.epsilon, seed=derive_seed(args.seed, 1), inflate_only=args.inflate_only)
    run.report(spec, out / "true_spec.json")
    run.report(gen, out / "gen_spec.json")
    ext = _ext(args.format)
    sizes = {"true": args.n_ref, "true_pool": args.n_pool, "gen": args.n_ref, "gen_pool": args.n_pool}
    for i, (name, n) in enumerate(sizes.items()):
        if n <= 0:
            continue
        src = spec if name.startswith("true") else gen
        run.dataset(sample_mog(src, n, derive_seed(args.seed, 2, i), label=name), out / f"{name}{ext}")
    run.seeds["spec_seed"] = args.seed


def cmd_select_hyper(args, run: Run) -> None:
    (ref_role, ref_path), (pool_role, pool_path), _ = _roles(args)
    reference = run.load(ref_role, ref_path)
    toy_pool = run.load(pool_role, pool_path)
    standardize = not args.raw
    sigma = heuristic_sigma(reference, standardize=standardize, percentile=args.percentile, seed=args.seed)
    base = NplmConfig(
        n_centers=args.centers,
        kernel_width=sigma,
        regularization=args.lambda_grid[0],
        master_seed=args.seed,
        standardize=standardize,
    )
    out = Path(args.out_dir)
    if args.m_grid:
        mscan = scan_m(reference, toy_pool, base, args.m_grid, args.probe_toys, toy_size=args.toy_size, workers=args.threads)
        base = replace(base, n_centers=saturation_m(mscan))
        run.report(mscan, out / "scan_m.json")
    lscan = lambda_scan(reference, toy_pool, base, args.lambda_grid, args.probe_toys, toy_size=args.toy_size, workers=args.threads)
    run.report(lscan, out / "scan_lambda.json")
    config = replace(base, regularization=choose_lambda(lscan, args.time_budget))
    run.config = config
    run.report(config, out / "config.json")
    print(f"sigma={config.kernel_width:.6g} M={config.n_centers} lambda={config.regularization:g}")


def cmd_calibrate(args, run: Run) -> None:
    (ref_role, ref_path), (pool_role, pool_path), _ = _roles(args)
    reference = run.load(ref_role, ref_path)
    toy_pool = run.load(pool_role, pool_path)
    config = _load_config(args, run)
    policy = _policy(args, reference.n_points // 10)
    null = cached_null(args.cache_dir, reference, toy_pool, config, policy, args.n_toys, args.threads)
    run.report(null, Path(args.out_dir) / "null.json")
    print(f"n_toys={null.n_toys} dof={null.chi2_dof:.4f} ks_p={null.ks_pvalue:.4f} failed={null.n_failed}")


def cmd_test(args, run: Run) -> None:
    (ref_role, ref_path), (pool_role, pool_path), (data_role, data_path) = _roles(args)
    reference = run.load(ref_role, ref_path)
    if args.data:
        data = run.load("data", args.data)
    else:
        pool = run.load(data_role, data_path)
        size = args.toy_size or reference.n_points // 10
        idx = np.random.default_rng(derive_seed(args.seed, 3)).choice(pool.n_points, size=size, replace=False)
        data = pool.take(idx, label="data")
    config = _load_config(args, run)
    policy = _policy(args, data.n_points)
    if policy.toy_size != data.n_points:
        raise UsageError(f"--toy-size {policy.toy_size} differs from the data size {data.n_points}")
    toy_pool = run.load(pool_role, pool_path) if pool_path and not args.null else None
    null = _null(args, run, reference, toy_pool, config, policy)
    model, t = run_single_test(reference, data, config)
    report = make_report(t, null, direction=args.direction, seeds=(config.master_seed,), alpha=args.alpha, converged=model.converged)
    out = Path(args.out_dir)
    if not args.data:
        # keep the drawn sample so `diagnose --data` can look at the same points
        run.dataset(data, out / f"data{_ext(args.format)}")
    run.report(report, out / "report.json")
    run.report(model, args.model_out or out / "model.json")
    print(f"t={report.t_obs:.6g} p_chi2={report.p_chi2:.4g} Z={report.z_score:.3f} p_emp={report.p_empirical:.4g}")


def cmd_validate(args, run: Run) -> None:
    (ref_role, ref_path), (pool_role, pool_path), (data_role, data_path) = _roles(args)
    reference = run.load(ref_role, ref_path)
    data_pool = run.load(data_role, data_path)
    config = _load_config(args, run)
    policy = _policy(args, reference.n_points // 10)
    toy_pool = run.load(pool_role, pool_path) if pool_path and not args.null else None
    null = _null(args, run, reference, toy_pool, config, policy)
    summary = run_validation(
        reference, data_pool, config, null, args.repeats, policy, Direction(args.direction), args.threads, args.alpha
    )
    run.report(summary, Path(args.out_dir) / "validation.json")
    print(f"Z median={summary.z_median:.3f} band=[{summary.ci68_low:.3f}, {summary.ci68_high:.3f}] repeats={summary.n_repeats}")


def cmd_diagnose(args, run: Run) -> None:
    model = read_report(args.model)
    if not isinstance(model, TrainedModel):
        raise InputError(f"{args.model} does not hold a TrainedModel")
    run.note_input("model", args.model)
    (ref_role, ref_path), _, (data_role, data_path) = _roles(args)
    reference = run.load(ref_role, ref_path)
    data = run.load("data", args.data) if args.data else run.load(data_role, data_path)
    out = Path(args.out_dir)
    ext = _ext(args.format)
    scores = classifier_scores(model, data)
    run.dataset(Dataset(scores, label="scores"), out / f"scores{ext}")
    selected = select_top_quantile(data, scores, args.quantile, lowest=args.underdense)
    run.dataset(selected, out / f"selected{ext}")
    weights = reweight_reference(model, reference) if args.reweight else None
    bundle = corner_data(reference, data, selected, args.bins, reference_weights=weights)
    run.report(bundle, out / "corner.json")
    print(f"selected {selected.n_points} of {data.n_points} points")


def cmd_scan(args, run: Run) -> None:
    (ref_role, ref_path), (pool_role, pool_path), _ = _roles(args)
    reference = run.load(ref_role, ref_path)
    toy_pool = run.load(pool_role, pool_path)
    config = _load_config(args, run)
    if bool(args.m_grid) == bool(args.lambda_grid):
        raise UsageError("scan needs exactly one of --m-grid or --lambda-grid")
    if args.m_grid:
        result = scan_m(reference, toy_pool, config, args.m_grid, args.n_toys, toy_size=args.toy_size, workers=args.threads)
    else:
        result = lambda_scan(reference, toy_pool, config, args.lambda_grid, args.n_toys, toy_size=args.toy_size, workers=args.threads)
    out = Path(args.out_dir)
    run.report(result, out / "scan.json")
    table = out / "scan.tsv"
    rows = ["M\tlambda\tmedian_t\tmean_seconds\tmax_seconds\tflag"]
    for (m, lam), med, wt, mt, flag in zip(result.grid, result.medians, result.wall_times, result.max_times, result.flags):
        rows.append(f"{m}\t{lam!r}\t{med!r}\t{wt:.3f}\t{mt:.3f}\t{flag}")
    table.write_text("\n".join(rows) + "\n")
    run.outputs.append(str(table))


COMMANDS = {
    "gen-mog": cmd_gen_mog,
    "select-hyper": cmd_select_hyper,
    "calibrate": cmd_calibrate,
    "test": cmd_test,
    "validate": cmd_validate,
    "diagnose": cmd_diagnose,
    "scan": cmd_scan,
}


# ------------------------------------------------------------------ parsing


def _floats(text: str) -> list:
    return [float(v) for v in text.split(",") if v]


def _ints(text: str) -> list:
    return [int(v) for v in text.split(",") if v]


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(0), help="master seed")
    p.add_argument("--config", default=d(None), help="NplmConfig JSON file")
    p.add_argument("--threads", type=int, default=d(1), help="worker processes")
    p.add_argument("--direction", choices=[v.value for v in Direction], default=d(Direction.TRUE_AS_REFERENCE.value))
    p.add_argument("--format", choices=[v.value for v in DataFormat], default=d(DataFormat.TEXT.value), help="sample file format for outputs")
    p.add_argument("--out-dir", default=d("."), help="output directory")
    p.add_argument("--manifest", default=d(None), help="run manifest path (default: OUT_DIR/manifest-<command>.json)")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))


def _inputs(p, *, pools=True, data=False):
    p.add_argument("--true", help="target-distribution sample of reference size")
    p.add_argument("--gen", help="generator sample of reference size")
    if pools:
        p.add_argument("--true-pool", help="target-distribution pool for toys or data draws")
        p.add_argument("--gen-pool", help="generator pool for toys or data draws")
    if data:
        p.add_argument("--data", help="explicit data sample (overrides the pool draw)")


def _calib_flags(p, *, null=True):
    p.add_argument("--preset", help="named hyperparameter preset instead of --config")
    p.add_argument("--toy-size", type=int, help="points per toy or data draw (default: reference size / 10)")
    p.add_argument("--mode", choices=[m.value for m in ResamplingMode], default=ResamplingMode.PARTITION.value)
    p.add_argument("--n-toys", type=int, default=200)
    p.add_argument("--cache-dir", default=".nplm-cache", help="null-model cache directory")
    if null:
        p.add_argument("--null", help="NullModel JSON to use instead of the cache")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nplm-gof", description="Kernel goodness-of-fit two-sample test for generative models.")
    parser.add_argument("--version", action="version", version=__version__)
    _global_flags(parser, suppress=False)
    common = _Parser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-mog", parents=[common], help="random MoG target, perturbed generator and samples")
    p.add_argument("--dim", type=int, default=4)
    p.add_argument("--components", type=int, default=3)
    p.add_argument("--epsilon", type=float, default=0.0, help="generator perturbation strength")
    p.add_argument("--inflate-only", action="store_true", help="perturb by widening the components only")
    p.add_argument("--n-ref", type=int, default=20_000)
    p.add_argument("--n-pool", type=int, default=200_000)

    p = sub.add_parser("select-hyper", parents=[common], help="sigma, M and lambda heuristics -> config")
    _inputs(p)
    p.add_argument("--percentile", type=float, default=90.0)
    p.add_argument("--centers", type=int, default=DEFAULT_CENTERS)
    p.add_argument("--m-grid", type=_ints, help="comma-separated ascending M values to scan")
    p.add_argument("--lambda-grid", type=_floats, default=list(DEFAULT_LAMBDA_GRID))
    p.add_argument("--probe-toys", type=int, default=10)
    p.add_argument("--time-budget", type=float, default=60.0, help="seconds per probe toy")
    p.add_argument("--toy-size", type=int)
    p.add_argument("--raw", action="store_true", help="skip reference standardization")

    p = sub.add_parser("calibrate", parents=[common], help="null model via pseudo-experiments")
    _inputs(p)
    _calib_flags(p, null=False)

    p = sub.add_parser("test", parents=[common], help="single test -> TestReport")
    _inputs(p, data=True)
    _calib_flags(p)
    p.add_argument("--alpha", type=float)
    p.add_argument("--model-out", help="where to save the fitted model")

    p = sub.add_parser("validate", parents=[common], help="repeated tests -> ValidationSummary")
    _inputs(p)
    _calib_flags(p)
    p.add_argument("--repeats", type=int, default=40)
    p.add_argument("--alpha", type=float)

    p = sub.add_parser("diagnose", parents=[common], help="scores, selections and corner histograms")
    _inputs(p, data=True)
    p.add_argument("--model", required=True, help="TrainedModel JSON written by `test`")
    p.add_argument("--quantile", type=float, default=0.05)
    p.add_argument("--underdense", action="store_true", help="select the lowest scores instead")
    p.add_argument("--bins", type=int, default=40)
    p.add_argument("--reweight", action="store_true", help="weight reference histograms by exp(f)")

    p = sub.add_parser("scan", parents=[common], help="null medians over an M or lambda grid")
    _inputs(p)
    p.add_argument("--preset")
    p.add_argument("--m-grid", type=_ints)
    p.add_argument("--lambda-grid", type=_floats)
    p.add_argument("--n-toys", type=int, default=10)
    p.add_argument("--toy-size", type=int)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        args.argv = argv
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        if args.threads < 1:
            raise UsageError("--threads must be positive")
        run = Run(args)
        COMMANDS[args.command](args, run)
        run.finish()
        return EXIT_OK
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except FingerprintMismatch as exc:
        print(f"error: null model does not match this configuration\n{exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DatasetParseError, json.JSONDecodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InputError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

Subcommands: train, attribute, evaluate, toy-bound, theory-check,
exact-shapley. Structured results are JSON, curves and logs are CSV, and
every run writes a manifest with config, seed, input hashes and outputs.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 invalid
configuration, 4 missing input file.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .data import Dataset, ingest_csv
from .errors import CapacityError, ConfigError, EmshapError, UsageError
from .evaluation import BoundToyConfig, sic_auc, toy_bound_experiment
from .explainers import (EmshapExplainer, ExactShapleyExplainer,
                         KernelShapExplainer, SamplingShapExplainer)
from .models import fit_model
from .shapley import (AttributionResult, ContributionOracle, alpha,
                      exact_shapley, sigma_star_inverse_check)
from .trainer import TrainConfig, train

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING_INPUT = 4

ESTIMATORS = ("exact", "emshap", "sampling", "kernel")


def fmt(value: float) -> str:
    """Console formatting: 6 significant digits."""
    return f"{float(value):.6g}"


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _worker_count() -> int:
    raw = os.environ.get("EMSHAP_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"EMSHAP_THREADS must be an integer, got {raw!r}") from None


class ManifestWriter:
    def __init__(self, argv, out_dir: Path, seed):
        self.manifest = {
            "command": list(argv),
            "config": {},
            "seed": seed,
            "input_hashes": {},
            "outputs": [],
            "wall_clock": 0.0,
            "version": __version__,
        }
        self.out_dir = out_dir
        self._start = time.perf_counter()

    def add_input(self, path) -> None:
        self.manifest["input_hashes"][str(path)] = _sha256(path)

    def add_output(self, path) -> None:
        self.manifest["outputs"].append(str(path))

    def write(self) -> None:
        self.manifest["wall_clock"] = time.perf_counter() - self._start
        self.out_dir.mkdir(parents=True, exist_ok=True)
        with open(self.out_dir / "manifest.json", "w") as fh:
            json.dump(self.manifest, fh, indent=2)


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON config: {exc}") from None
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return payload


def _train_config(args) -> TrainConfig:
    """Merge the config file with explicitly set CLI flags (flags win)."""
    merged = dict(_load_config_file(args.config))
    overrides = {
        "epochs": args.epochs, "k_tilde": args.k_tilde, "seed": args.seed,
        "zeta_min": args.zeta_min, "zeta_max": args.zeta_max,
        "batch_size": getattr(args, "batch_size", None),
        "learning_rate": getattr(args, "learning_rate", None),
    }
    merged.update({k: v for k, v in overrides.items() if v is not None})
    merged.setdefault("epochs", 10)
    return TrainConfig.from_dict(merged)


def _require_file(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(str(p))
    return p


def _load_dataset(args, manifest: ManifestWriter) -> Dataset:
    path = _require_file(args.data)
    manifest.add_input(path)
    ds = ingest_csv(path, target=getattr(args, "target", None))
    if ds.n_dropped:
        print(f"dropped {ds.n_dropped} rows with missing values")
    if ds.n == 0:
        raise UsageError(f"{path}: no usable rows")
    return ds


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# -- subcommands --------------------------------------------------------

def cmd_train(args, argv) -> int:
    out = Path(args.out)
    manifest = ManifestWriter(argv, out, args.seed)
    ds = _load_dataset(args, manifest)
    cfg = _train_config(args)
    manifest.manifest["config"] = cfg.to_dict()
    report = train(ds.normalized(), cfg)

    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint.json"
    with open(ckpt, "w") as fh:
        json.dump({
            "energy": report.energy.to_dict(),
            "proposal": report.proposal.to_dict(),
            "feature_names": ds.feature_names,
            "mean": ds.mean.tolist(),
            "scale": ds.scale.tolist(),
            "config": cfg.to_dict(),
        }, fh)
    loss_log = out / "loss_log.csv"
    _write_csv(loss_log, ["epoch", "zeta", "loss"],
               [(e, z, loss) for e, (z, loss)
                in enumerate(zip(report.zetas, report.losses))])
    manifest.add_output(ckpt)
    manifest.add_output(loss_log)
    manifest.write()
    if report.losses:
        print(f"trained {cfg.epochs} epochs; final loss {fmt(report.losses[-1])}")
    else:
        print("trained 0 epochs")
    return EXIT_OK


def _build_explainer(args, model, cfg: TrainConfig):
    if args.estimator == "emshap":
        return EmshapExplainer(
            model=model, epochs=cfg.epochs, batch_size=cfg.batch_size,
            learning_rate=cfg.learning_rate, k=args.k, k_tilde=cfg.k_tilde,
            zeta_min=cfg.zeta_min, zeta_max=cfg.zeta_max,
            gamma_dim=cfg.gamma_dim, energy_hidden=cfg.energy_hidden,
            seed=cfg.seed)
    if args.estimator == "sampling":
        return SamplingShapExplainer(model=model, n_permutations=args.k,
                                     seed=cfg.seed)
    if args.estimator == "kernel":
        return KernelShapExplainer(model=model, seed=cfg.seed)
    return ExactShapleyExplainer(model=model, seed=cfg.seed)


def _explain_rows(explainer, rows: np.ndarray) -> list[AttributionResult]:
    workers = _worker_count()
    if workers == 1 or rows.shape[0] == 1:
        return [explainer._explain_row(row, str(i)) for i, row in enumerate(rows)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda ir: explainer._explain_row(ir[1], str(ir[0])),
                             enumerate(rows)))


def cmd_attribute(args, argv) -> int:
    if args.target is None:
        raise UsageError("attribute requires --target to train the model")
    out = Path(args.out)
    manifest = ManifestWriter(argv, out, args.seed)
    ds = _load_dataset(args, manifest)
    cfg = _train_config(args)
    manifest.manifest["config"] = cfg.to_dict()

    x = ds.normalized()
    model = fit_model(args.model, x, ds.target, seed=cfg.seed)
    manifest.manifest["config"]["model"] = args.model
    manifest.manifest["config"]["output_transform"] = model.transform

    explainer = _build_explainer(args, model, cfg).fit(x)
    rows = x[: args.limit] if args.limit else x
    results = _explain_rows(explainer, rows)

    out.mkdir(parents=True, exist_ok=True)
    path = out / "attributions.jsonl"
    with open(path, "w") as fh:
        for r in results:
            fh.write(r.to_json() + "\n")
    manifest.add_output(path)
    manifest.write()
    for r in results:
        phi = " ".join(fmt(p) for p in r.phi)
        print(f"sample {r.sample_id}: phi0={fmt(r.phi0)} phi=[{phi}]")
    return EXIT_OK


def cmd_evaluate(args, argv) -> int:
    if args.target is None:
        raise UsageError("evaluate requires --target to train the model")
    out = Path(args.out)
    manifest = ManifestWriter(argv, out, args.seed)
    ds = _load_dataset(args, manifest)
    cfg = _train_config(args)
    manifest.manifest["config"] = cfg.to_dict()

    x = ds.normalized()
    model = fit_model(args.model, x, ds.target, seed=cfg.seed)
    explainer = _build_explainer(args, model, cfg).fit(x)
    rows = x[: args.limit] if args.limit else x
    results = _explain_rows(explainer, rows)

    background = x.mean(axis=0)
    out.mkdir(parents=True, exist_ok=True)
    sic_rows = []
    aucs = {"add": [], "del": []}
    for r, row in zip(results, rows):
        for direction in ("add", "del"):
            curve = sic_auc(model, row, r.phi, background, direction, args.steps)
            aucs[direction].append(curve.auc)
            for frac, val in zip(curve.fractions, curve.outputs):
                sic_rows.append((r.sample_id, direction, frac, val, curve.auc))
    sic_path = out / "sic.csv"
    _write_csv(sic_path, ["sample_id", "direction", "fraction", "output", "auc"],
               sic_rows)
    summary = {
        "estimator": args.estimator,
        "n_samples": len(results),
        "mean_auc_add": float(np.mean(aucs["add"])),
        "mean_auc_del": float(np.mean(aucs["del"])),
    }
    summary_path = out / "summary.json"
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2)
    manifest.add_output(sic_path)
    manifest.add_output(summary_path)
    manifest.write()
    print(f"SIC AUC add={fmt(summary['mean_auc_add'])} "
          f"del={fmt(summary['mean_auc_del'])} over {len(results)} samples")
    return EXIT_OK


def cmd_toy_bound(args, argv) -> int:
    out = Path(args.out)
    manifest = ManifestWriter(argv, out, args.seed)
    try:
        ks = tuple(int(k) for k in args.K.split(","))
    except ValueError:
        raise UsageError(f"--K must be a comma-separated integer list, got {args.K!r}")
    if any(k < 1 for k in ks):
        raise ConfigError(f"--K entries must be positive, got {ks}")
    cfg = BoundToyConfig(seed=args.seed or 0, ks=ks,
                         epochs=args.epochs if args.epochs is not None else 10,
                         k_ref=args.k_ref)
    manifest.manifest["config"] = {
        "seed": cfg.seed, "ks": list(cfg.ks), "epochs": cfg.epochs,
        "k_ref": cfg.k_ref, "n_points": cfg.n_points,
    }
    report = toy_bound_experiment(cfg)

    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "bound_report.csv"
    _write_csv(csv_path,
               ["k", "coalition", "statistical_error", "approximation_error", "bound"],
               [(r["k"], r["coalition"], r["statistical_error"],
                 r["approximation_error"], r["bound"]) for r in report.rows])
    summary = {
        "held_out_mse": report.held_out_mse,
        "loglog_slope": report.loglog_slope(),
        "statistical_by_k": report.statistical_by_k(),
        "all_within_bound": all(
            r["statistical_error"] + r["approximation_error"] <= r["bound"]
            for r in report.rows),
    }
    summary_path = out / "summary.json"
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2)
    manifest.add_output(csv_path)
    manifest.add_output(summary_path)
    manifest.write()
    print(f"held-out MSE {fmt(report.held_out_mse)}; "
          f"log-log slope {fmt(summary['loglog_slope'])}; "
          f"within bound: {summary['all_within_bound']}")
    return EXIT_OK


def cmd_theory_check(args, argv) -> int:
    if args.d < 2:
        raise ConfigError(f"--d must be >= 2, got {args.d}")
    out = Path(args.out)
    manifest = ManifestWriter(argv, out, args.seed)
    a = alpha(args.d)
    dev = sigma_star_inverse_check(args.d)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "theory.json"
    with open(path, "w") as fh:
        json.dump({"d": args.d, "alpha": a, "inverse_deviation": dev}, fh, indent=2)
    manifest.add_output(path)
    manifest.write()
    print(f"alpha = {fmt(a)}")
    print(f"inverse deviation = {fmt(dev)}")
    return EXIT_OK


def cmd_exact_shapley(args, argv) -> int:
    out = Path(args.out)
    manifest = ManifestWriter(argv, out, args.seed)
    if args.weights is not None:
        try:
            w = np.asarray([float(v) for v in args.weights.split(",")])
        except ValueError:
            raise UsageError(f"--weights must be comma-separated numbers, got {args.weights!r}")
        oracle = ContributionOracle(
            lambda c: float(sum(w[i] for i in c.observed_indices)), len(w))
        result = exact_shapley(oracle, sample_id="additive-game", seed=args.seed)
    else:
        if args.data is None or args.target is None:
            raise UsageError("exact-shapley needs either --weights or --data with --target")
        ds = _load_dataset(args, manifest)
        x = ds.normalized()
        model = fit_model(args.model, x, ds.target, seed=args.seed or 0)
        explainer = ExactShapleyExplainer(model=model, seed=args.seed or 0).fit(x)
        if not 0 <= args.row < x.shape[0]:
            raise UsageError(f"--row {args.row} out of range for {x.shape[0]} rows")
        result = explainer._explain_row(x[args.row], str(args.row))
    out.mkdir(parents=True, exist_ok=True)
    path = out / "exact_shapley.json"
    with open(path, "w") as fh:
        fh.write(result.to_json())
    manifest.add_output(path)
    manifest.write()
    phi = " ".join(fmt(p) for p in result.phi)
    print(f"phi0={fmt(result.phi0)} phi=[{phi}]")
    return EXIT_OK


# -- argument parsing ---------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="emshap", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False):
        p.add_argument("--config", default=None, help="JSON training config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default="emshap-out", help="output directory")
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--k-tilde", dest="k_tilde", type=int, default=None)
        p.add_argument("--zeta-min", dest="zeta_min", type=float, default=None)
        p.add_argument("--zeta-max", dest="zeta_max", type=float, default=None)
        if data:
            p.add_argument("--data", required=True, help="input CSV with header row")
            p.add_argument("--target", default=None, help="target column name")

    p = sub.add_parser("train", help="train the energy/proposal pair")
    common(p, data=True)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p.set_defaults(func=cmd_train)

    for name, func in (("attribute", cmd_attribute), ("evaluate", cmd_evaluate)):
        p = sub.add_parser(name)
        common(p, data=True)
        p.add_argument("--estimator", choices=ESTIMATORS, default="emshap")
        p.add_argument("--k", type=int, default=256,
                       help="sampling budget per coalition / permutation count")
        p.add_argument("--model", choices=("linear", "mlp"), default="linear")
        p.add_argument("--limit", type=int, default=4,
                       help="number of rows to explain (0 = all)")
        if name == "evaluate":
            p.add_argument("--steps", type=int, default=10)
        p.set_defaults(func=func)

    p = sub.add_parser("toy-bound", help="Monte Carlo error-bound experiment")
    common(p)
    p.add_argument("--K", default="10,100,1000,10000",
                   help="comma-separated sample counts")
    p.add_argument("--k-ref", dest="k_ref", type=int, default=100_000,
                   help="pool size for the large-K reference estimate")
    p.set_defaults(func=cmd_toy_bound)

    p = sub.add_parser("theory-check", help="coalition covariance matrix checks")
    common(p)
    p.add_argument("--d", type=int, required=True)
    p.set_defaults(func=cmd_theory_check)

    p = sub.add_parser("exact-shapley", help="exact enumeration attribution")
    common(p)
    p.add_argument("--weights", default=None,
                   help="comma-separated additive game weights")
    p.add_argument("--data", default=None)
    p.add_argument("--target", default=None)
    p.add_argument("--model", choices=("linear", "mlp"), default="linear")
    p.add_argument("--row", type=int, default=0)
    p.set_defaults(func=cmd_exact_shapley)
    return parser


def _error_record(code: int, exc: Exception) -> int:
    record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(record), file=sys.stderr)
    return code


def run_command(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args, argv)
    except (ConfigError,) as exc:
        return _error_record(EXIT_CONFIG, exc)
    except FileNotFoundError as exc:
        return _error_record(EXIT_MISSING_INPUT, exc)
    except (UsageError, CapacityError) as exc:
        return _error_record(EXIT_USAGE, exc)
    except EmshapError as exc:
        return _error_record(EXIT_RUNTIME, exc)


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()

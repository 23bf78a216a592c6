"""
Command-line entry point.

    python app.py simulate --config configs/ball.yaml --out runs/ball/data
    python app.py train    --config configs/ball.yaml --data runs/ball/data/train --out runs/ball/hybrid
    python app.py track    --config configs/ball.yaml --model runs/ball/hybrid --data runs/ball/data/test --out track.csv
    python app.py eval     --config configs/ball.yaml --models runs/ball/hybrid runs/ball/gp --test runs/ball/data/test --out runs/ball/eval
    python app.py repro    --experiment ball

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from datetime import datetime
from importlib import metadata
from pathlib import Path

import pandas as pd
from dotenv import load_dotenv

load_dotenv()

from baselines import EkfMethod, ekf_model_for, ekf_track, single_gp_learn, switching_gp_learn
from config import (
    DEFAULT_JOBS,
    DEFAULT_OUTPUT_DIR,
    DEV_MODE,
    EXPERIMENTS,
    config_hash,
    load_experiment_config,
)
from core_types import ConfigError, InputError, NumericalError, read_trajectory_csv
from hybrid_learner import HybridLearner
from metrics import bounce_bimodality_rate, nstep_eval, summarize
from model_storage import (
    ensure_dir,
    load_dataset,
    load_model,
    model_method,
    save_dataset,
    save_hybrid_model,
    save_switching_model,
)
from particle_filter import ParticleFilterMethod, reports_to_frame, track
from sims import simulate_split
from sims.box import made_contact

logger = logging.getLogger(__name__)

CONFIG_DIR = Path(__file__).resolve().parent / "configs"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

_PACKAGES = ("numpy", "scipy", "scikit-learn", "pandas", "PyYAML", "joblib", "python-dotenv")


def friendly_error(error) -> str:
    """One-line message for the exceptions the CLI maps to exit codes."""
    if isinstance(error, NumericalError):
        module = error.module or "unknown"
        text = f"[{module}] numerical failure: {error}"
    else:
        text = str(error)
    return text.split("\n")[0]


def _versions() -> dict:
    versions = {}
    for name in _PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = None
    versions["python"] = sys.version.split()[0]
    return versions


def write_manifest(out_dir, command: str, config_path, seed: int, extra: dict = None) -> Path:
    """Record what is needed to rerun a command: config hash, seed, versions."""
    out_dir = ensure_dir(out_dir)
    data = {
        "command": command,
        "argv": sys.argv[1:],
        "config": str(config_path),
        "config_sha256": config_hash(config_path),
        "seed": seed,
        "versions": _versions(),
        "saved_at": datetime.now().isoformat(),
    }
    data.update(extra or {})
    path = out_dir / "manifest.json"
    with open(path, "w") as f:
        json.dump(data, f, indent=2)
    return path


# --- Subcommands ---

def cmd_simulate(config_path, out_dir) -> dict:
    cfg = load_experiment_config(config_path)
    train, test = simulate_split(cfg.simulation, cfg.seed)
    out_dir = ensure_dir(out_dir)
    save_dataset(train, out_dir / "train")
    save_dataset(test, out_dir / "test")
    summary = {"n_train": len(train.trajectories), "n_test": len(test.trajectories)}
    if cfg.experiment == "box":
        summary["contact_trajectories"] = sum(
            made_contact(t) for t in train.trajectories + test.trajectories)
    write_manifest(out_dir, "simulate", config_path, cfg.seed, summary)
    logger.info(f"simulated {summary}")
    return summary


def _train(cfg, trajectories, method: str, jobs: int):
    if method == "hybrid":
        learner = HybridLearner(replace(cfg.learner, n_jobs=jobs), cfg.gp, cfg.clustering,
                               cfg.oversample, cfg.classifier, cfg.seed)
        return learner.learn(trajectories)
    if method == "gp":
        return single_gp_learn(trajectories, cfg.gp, cfg.seed, jobs)
    if method == "switching":
        return switching_gp_learn(trajectories, cfg.learner.n_modes, cfg.gp, cfg.clustering,
                                  cfg.seed, jobs)
    raise ConfigError(f"cannot train method {method!r}; choose hybrid, gp or switching")


def _save(model, method: str, out_dir) -> Path:
    if method == "switching":
        return save_switching_model(model, out_dir)
    return save_hybrid_model(model, out_dir, method)


def cmd_train(data_dir, config_path, model_out, method: str = "hybrid", jobs: int = DEFAULT_JOBS):
    cfg = load_experiment_config(config_path)
    ds = load_dataset(data_dir)
    model = _train(cfg, ds.trajectories, method, jobs)
    _save(model, method, model_out)
    extra = {"method": method}
    history = getattr(model, "history", None)
    if history is not None:
        pd.DataFrame({"iteration": range(1, len(history) + 1), "change_count": history}) \
            .to_csv(Path(model_out) / "history.csv", index=False)
        extra["change_counts"] = history
    write_manifest(model_out, "train", config_path, cfg.seed, extra)
    return model


def _observation_files(data_path):
    data_path = Path(data_path)
    if data_path.is_dir():
        return sorted(data_path.glob("*.csv"))
    return [data_path]


def cmd_track(model_path, data_path, out_csv, config_path, method: str = None):
    """Track each observation file; `method="ekf"` needs no model."""
    cfg = load_experiment_config(config_path)
    tracking = cfg.tracking
    if method == "ekf":
        model = ekf_model_for(cfg.simulation)
        n_modes = model.n_modes
    else:
        if model_path is None:
            raise ConfigError("--model is required unless --method ekf")
        model = load_model(model_path)
        method = method or model_method(model_path)
        n_modes = model.n_modes

    frames = []
    for i, path in enumerate(_observation_files(data_path)):
        traj = read_trajectory_csv(path)
        if method == "ekf":
            reports = ekf_track(model, traj, tracking.sigma_eps, tracking.metric_dims)
        else:
            reports = track(model, traj, tracking.n_particles, tracking.sigma_eps, cfg.seed,
                            tracking.metric_dims, tracking)
        frame = reports_to_frame(reports, n_modes, method)
        frame.insert(1, "trajectory", i)
        frames.append(frame)
    out_csv = Path(out_csv)
    ensure_dir(out_csv.parent)
    pd.concat(frames, ignore_index=True).to_csv(out_csv, index=False, float_format="%.12g")
    write_manifest(out_csv.parent, "track", config_path, cfg.seed, {"method": method})
    return out_csv


def _eval_methods(cfg, model_dirs):
    methods = []
    for directory in model_dirs:
        name = model_method(directory)
        if name in cfg.evaluation.methods:
            methods.append(ParticleFilterMethod(name, load_model(directory), cfg.tracking))
    if "ekf" in cfg.evaluation.methods:
        methods.append(EkfMethod(ekf_model_for(cfg.simulation)))
    return methods


def evaluate(cfg, methods, test, out_dir, jobs: int):
    ev, tracking = cfg.evaluation, cfg.tracking
    out_dir = ensure_dir(out_dir)
    raws, rates = [], []
    for method in methods:
        raws.append(nstep_eval(method, test, ev.n_max, cfg.seed, ev.window, tracking.metric_dims,
                               tracking.sigma_eps, ev.max_starts, jobs))
        if cfg.experiment == "ball":
            rate = bounce_bimodality_rate(method, test, tracking.metric_dims[0], ev.threshold, cfg.seed)
            rates.append({"method": method.name, "bimodal_rate": rate})
    raw = pd.concat(raws, ignore_index=True)
    summary = summarize(raw)
    raw.to_csv(out_dir / "raw.csv", index=False, float_format="%.12g")
    summary.to_csv(out_dir / "summary.csv", index=False, float_format="%.12g")
    if rates:
        pd.DataFrame(rates).to_csv(out_dir / "multimodality.csv", index=False, float_format="%.12g")
    return summary


def cmd_eval(model_dirs, test_dir, out_dir, config_path, jobs: int = DEFAULT_JOBS):
    cfg = load_experiment_config(config_path)
    test = load_dataset(test_dir)
    summary = evaluate(cfg, _eval_methods(cfg, model_dirs), test, out_dir, jobs)
    write_manifest(out_dir, "eval", config_path, cfg.seed,
                   {"methods": sorted(summary["method"].unique().tolist())})
    return summary


def cmd_repro(experiment: str, out_dir=None, config_path=None, jobs: int = DEFAULT_JOBS):
    """Simulate, train every learned method, and evaluate all of them."""
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {experiment!r}")
    config_path = config_path or CONFIG_DIR / f"{experiment}.yaml"
    out_dir = Path(out_dir or Path(DEFAULT_OUTPUT_DIR) / experiment)
    cfg = load_experiment_config(config_path)

    cmd_simulate(config_path, out_dir / "data")
    model_dirs = []
    for method in ("hybrid", "gp", "switching"):
        if method in cfg.evaluation.methods:
            cmd_train(out_dir / "data" / "train", config_path, out_dir / method, method, jobs)
            model_dirs.append(out_dir / method)
    summary = cmd_eval(model_dirs, out_dir / "data" / "test", out_dir / "eval", config_path, jobs)
    write_manifest(out_dir, "repro", config_path, cfg.seed, {"experiment": experiment})
    return summary


# --- Argument parsing ---

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Learn and track piecewise-smooth hybrid systems")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Generate train/test trajectories")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)

    p = sub.add_parser("train", help="Learn a model from a directory of trajectory CSVs")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--method", choices=("hybrid", "gp", "switching"), default="hybrid")
    p.add_argument("--jobs", type=int, default=DEFAULT_JOBS)

    p = sub.add_parser("track", help="Track observed trajectories with a saved model or the EKF")
    p.add_argument("--config", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--method", choices=("hybrid", "gp", "switching", "ekf"), default=None)

    p = sub.add_parser("eval", help="Metric tables for saved models (plus the EKF)")
    p.add_argument("--config", required=True)
    p.add_argument("--models", nargs="*", default=[])
    p.add_argument("--test", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--jobs", type=int, default=DEFAULT_JOBS)

    p = sub.add_parser("repro", help="Full pipeline for one experiment")
    p.add_argument("--experiment", choices=EXPERIMENTS, required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--jobs", type=int, default=DEFAULT_JOBS)
    return parser


def run(args) -> None:
    out_root = Path(DEFAULT_OUTPUT_DIR)
    if args.command == "simulate":
        cmd_simulate(args.config, args.out or out_root / "data")
    elif args.command == "train":
        cmd_train(args.data, args.config, args.out or out_root / args.method, args.method, args.jobs)
    elif args.command == "track":
        cmd_track(args.model, args.data, args.out or out_root / "track.csv", args.config, args.method)
    elif args.command == "eval":
        cmd_eval(args.models, args.test, args.out or out_root / "eval", args.config, args.jobs)
    elif args.command == "repro":
        cmd_repro(args.experiment, args.out, args.config, args.jobs)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO if DEV_MODE else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        run(args)
    except ConfigError as e:
        print(f"error: {friendly_error(e)}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as e:
        print(f"error: {friendly_error(e)}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        print(f"error: {friendly_error(e)}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

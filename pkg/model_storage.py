"""
File persistence for learned models and datasets.

A model is a directory holding `model.json` (classifiers, labels, history
and an index of the GPs) plus one JSON file per GP. Datasets are
directories of trajectory CSVs.
"""

import json
import logging
import os
from datetime import datetime
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from baselines import SwitchingGpModel
from classifiers import Classifier
from config import DEV_MODE
from core_types import InputError, LabeledDataset, read_trajectory_csv, write_trajectory_csv
from gp_regression import GpModel
from hybrid_learner import HybridModel

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MANIFEST_FILE = "model.json"


def _log(level, message):
    if DEV_MODE:
        logger.log(level, message)


def ensure_dir(path) -> Path:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path


def _write_json(path: Path, data: dict):
    with open(path, "w") as f:
        json.dump(data, f, indent=2)


def _read_json(path: Path) -> dict:
    try:
        with open(path, "r") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"cannot read {path}: {e}") from None


def _save_gp(directory: Path, name: str, gp: GpModel) -> str:
    filename = f"gp_{name}.json"
    _write_json(directory / filename, gp.to_dict())
    return filename


def _labels_to_list(ds) -> Optional[List[List[int]]]:
    return None if ds is None else [lab.tolist() for lab in ds.labels]


# --- Hybrid model (also the single-GP baseline, K=1) ---

def save_hybrid_model(model: HybridModel, directory, method: str = "hybrid") -> Path:
    """Write a HybridModel under `directory`, returning the manifest path."""
    directory = ensure_dir(directory)
    dynamics = {str(m): _save_gp(directory, f"dyn_{m}", gp) for m, gp in model.dynamics.items()}
    resets = {f"{a}-{b}": _save_gp(directory, f"reset_{a}_{b}", gp)
              for (a, b), gp in model.resets.items()}

    data = {
        "schema_version": SCHEMA_VERSION,
        "kind": "hybrid",
        "method": method,
        "saved_at": datetime.now().isoformat(),
        "n_modes": model.n_modes,
        "dynamics": dynamics,
        "resets": resets,
        "mode_classifier": model.mode_clf.to_dict(),
        "guard_classifiers": {str(m): clf.to_dict() for m, clf in model.guard_clfs.items()},
        "history": model.history,
        "guard_counts": {f"{a}-{b}": n for (a, b), n in model.guard_counts.items()},
        "dropped_modes": list(model.dropped_modes),
        "smooth_switches": [f"{a}-{b}" for a, b in model.smooth_switches],
        "labels": _labels_to_list(model.labels),
    }
    manifest = directory / MANIFEST_FILE
    _write_json(manifest, data)
    _log(logging.INFO, f"saved {method} model to {directory}")
    return manifest


def _pair_key(text: str):
    a, b = text.split("-")
    return int(a), int(b)


def _load_hybrid(directory: Path, data: dict) -> HybridModel:
    dynamics = {int(m): GpModel.from_dict(_read_json(directory / f)) for m, f in data["dynamics"].items()}
    resets = {_pair_key(k): GpModel.from_dict(_read_json(directory / f)) for k, f in data["resets"].items()}
    return HybridModel(
        n_modes=int(data["n_modes"]),
        dynamics=dynamics,
        resets=resets,
        mode_clf=Classifier.from_dict(data["mode_classifier"]),
        guard_clfs={int(m): Classifier.from_dict(c) for m, c in data["guard_classifiers"].items()},
        history=data.get("history", []),
        guard_counts={_pair_key(k): int(n) for k, n in data.get("guard_counts", {}).items()},
        dropped_modes=data.get("dropped_modes", []),
        smooth_switches=[_pair_key(k) for k in data.get("smooth_switches", [])],
    )


# --- Switching GP ---

def save_switching_model(model: SwitchingGpModel, directory) -> Path:
    directory = ensure_dir(directory)
    data = {
        "schema_version": SCHEMA_VERSION,
        "kind": "switching",
        "method": "switching",
        "saved_at": datetime.now().isoformat(),
        "n_modes": model.n_modes,
        "dynamics": {str(m): _save_gp(directory, f"dyn_{m}", gp) for m, gp in model.dynamics.items()},
        "transition_matrix": model.transition_matrix.tolist(),
        "initial_proba": model.initial_proba.tolist(),
        "labels": _labels_to_list(model.labels),
    }
    manifest = directory / MANIFEST_FILE
    _write_json(manifest, data)
    _log(logging.INFO, f"saved switching model to {directory}")
    return manifest


def _load_switching(directory: Path, data: dict) -> SwitchingGpModel:
    dynamics = {int(m): GpModel.from_dict(_read_json(directory / f)) for m, f in data["dynamics"].items()}
    return SwitchingGpModel(int(data["n_modes"]), dynamics, np.array(data["transition_matrix"]),
                            np.array(data["initial_proba"]))


def load_model(directory) -> Union[HybridModel, SwitchingGpModel]:
    """
    Load whichever model was saved under `directory`.

    Raises:
        InputError: if the manifest is missing, unreadable or of an unknown kind.
    """
    directory = Path(directory)
    if directory.is_file():
        directory = directory.parent
    data = _read_json(directory / MANIFEST_FILE)
    if data.get("schema_version") != SCHEMA_VERSION:
        raise InputError(f"{directory}: unsupported schema version {data.get('schema_version')}")
    kind = data.get("kind")
    if kind == "hybrid":
        return _load_hybrid(directory, data)
    if kind == "switching":
        return _load_switching(directory, data)
    raise InputError(f"{directory}: unknown model kind {kind!r}")


def model_method(directory) -> str:
    """The method name recorded in a saved model's manifest."""
    directory = Path(directory)
    if directory.is_file():
        directory = directory.parent
    return _read_json(directory / MANIFEST_FILE).get("method", "hybrid")


# --- Datasets ---

def save_dataset(ds: LabeledDataset, directory, prefix: str = "traj") -> List[Path]:
    """One CSV per trajectory, named {prefix}_{index:03d}.csv."""
    directory = ensure_dir(directory)
    paths = []
    for i, traj in enumerate(ds.trajectories):
        path = directory / f"{prefix}_{i:03d}.csv"
        write_trajectory_csv(path, traj)
        paths.append(path)
    return paths


def load_dataset(directory, prefix: str = "traj") -> LabeledDataset:
    """
    Read every {prefix}_*.csv in name order. Ground-truth labels are used
    when every file has a mode column; otherwise the dataset is unlabeled.
    """
    directory = Path(directory)
    paths = sorted(directory.glob(f"{prefix}_*.csv"))
    if not paths:
        raise InputError(f"no {prefix}_*.csv files in {directory}")
    trajectories = [read_trajectory_csv(p) for p in paths]
    if all(t.modes is not None for t in trajectories):
        return LabeledDataset.from_ground_truth(trajectories)
    return LabeledDataset.unlabeled(trajectories)

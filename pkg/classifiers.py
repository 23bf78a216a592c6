"""
Two-level probabilistic classifiers over modes.

Level 1 predicts the current mode from the state; level 2 (one per mode m)
predicts the next mode given the state is in m, with m itself as the
"stay" class. Both are balanced multinomial logistic regressions; the
fitted weights are kept as a plain matrix so a classifier can be stored
and evaluated without sklearn objects.
"""

import logging
import warnings
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.special import softmax
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LogisticRegression
from sklearn.utils.class_weight import compute_class_weight

from config import DEV_MODE, ClassifierConfig
from core_types import InputError, LabeledDataset, as_state_vec

logger = logging.getLogger(__name__)


def _log(level, message):
    if DEV_MODE:
        logger.log(level, message)


@dataclass(frozen=True)
class Classifier:
    """Linear scores W[:, :d] @ x + W[:, d] followed by a softmax over `classes`."""
    weights: np.ndarray
    classes: Tuple[int, ...]
    class_weights: Tuple[float, ...]

    def __post_init__(self):
        weights = np.array(self.weights, dtype=float)
        classes = tuple(int(c) for c in self.classes)
        if weights.ndim != 2 or weights.shape[0] != len(classes):
            raise InputError(f"weights of shape {weights.shape} for {len(classes)} classes")
        if len(set(classes)) != len(classes):
            raise InputError(f"classes must be distinct, got {classes}")
        weights.flags.writeable = False
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "class_weights", tuple(float(w) for w in self.class_weights))

    @classmethod
    def constant(cls, label: int, dim: int) -> "Classifier":
        return cls(np.zeros((1, dim + 1)), (label,), (1.0,))

    @property
    def dim(self) -> int:
        return self.weights.shape[1] - 1

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "classes": list(self.classes),
            "class_weights": list(self.class_weights),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Classifier":
        return cls(np.array(data["weights"], dtype=float), tuple(data["classes"]),
                   tuple(data["class_weights"]))


def predict_proba_many(clf: Classifier, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != clf.dim:
        raise InputError(f"input dimension {X.shape[1]} but classifier expects {clf.dim}")
    scores = X @ clf.weights[:, :-1].T + clf.weights[:, -1]
    return softmax(scores, axis=1)


def predict_proba(clf: Classifier, x) -> np.ndarray:
    """Probabilities aligned with `clf.classes`."""
    return predict_proba_many(clf, as_state_vec(x).reshape(1, -1))[0]


def proba_over_modes(clf: Classifier, X, n_modes: int) -> np.ndarray:
    """Scatter class probabilities into rows of length n_modes."""
    proba = predict_proba_many(clf, X)
    out = np.zeros((proba.shape[0], n_modes))
    out[:, list(clf.classes)] = proba
    return out


def fit_logistic(X, y, balanced: bool = True, reg: float = 1.0, seed: int = 0,
                 cfg: Optional[ClassifierConfig] = None) -> Classifier:
    """
    L2-regularized multinomial logistic regression.

    A single-class input yields the constant classifier for that class.
    """
    if reg <= 0:
        raise InputError(f"regularization must be positive, got {reg}")
    cfg = cfg or ClassifierConfig(reg=reg, balanced=balanced)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=int).reshape(-1)
    if X.shape[0] != y.shape[0] or X.shape[0] == 0:
        raise InputError(f"{X.shape[0]} samples but {y.shape[0]} labels")

    classes = np.unique(y)
    d = X.shape[1]
    if len(classes) == 1:
        return Classifier.constant(int(classes[0]), d)

    class_weight = "balanced" if balanced else None
    factors = (compute_class_weight("balanced", classes=classes, y=y)
               if balanced else np.ones(len(classes)))

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        model = LogisticRegression(C=1.0 / reg, class_weight=class_weight, tol=cfg.tol,
                                   max_iter=cfg.max_iter, random_state=seed)
        model.fit(X, y)

    coef = np.hstack([model.coef_, model.intercept_[:, None]])
    if len(classes) == 2:
        # sklearn keeps one logit for binary problems; split it symmetrically
        coef = np.vstack([-0.5 * coef[0], 0.5 * coef[0]])
    return Classifier(coef, tuple(int(c) for c in model.classes_), tuple(factors))


def train_mode_classifier(ds: LabeledDataset, cfg: Optional[ClassifierConfig] = None,
                          seed: int = 0) -> Classifier:
    """Level-1 classifier on every point and its final label."""
    cfg = cfg or ClassifierConfig()
    return fit_logistic(ds.pooled_states(), ds.pooled_labels(), cfg.balanced, cfg.reg, seed, cfg)


def train_guard_classifier(mode: int, dyn_pre: Optional[np.ndarray],
                           guard_pre: Dict[int, np.ndarray],
                           synthetic_pre: Optional[Dict[int, np.ndarray]] = None,
                           cfg: Optional[ClassifierConfig] = None, seed: int = 0,
                           dim: Optional[int] = None) -> Classifier:
    """
    Level-2 classifier for `mode`.

    Args:
        mode: The mode m; it is also the "stay" class.
        dyn_pre: Pre-states of mode-m dynamics pairs (negatives).
        guard_pre: Target mode m' -> real guard pre-states of (m, m').
        synthetic_pre: Target mode m' -> synthetic guard pre-states.
        dim: State dimension, needed only when every input is empty.

    Returns:
        Classifier over {m} and every target with guard data.
    """
    cfg = cfg or ClassifierConfig()
    synthetic_pre = synthetic_pre or {}
    blocks, labels = [], []
    if dyn_pre is not None and len(dyn_pre) > 0:
        blocks.append(np.atleast_2d(dyn_pre))
        labels.append(np.full(len(dyn_pre), mode))
    for target in sorted(guard_pre):
        parts = [np.atleast_2d(guard_pre[target])]
        if cfg.use_synthetic and target in synthetic_pre and len(synthetic_pre[target]) > 0:
            parts.append(np.atleast_2d(synthetic_pre[target]))
        positives = np.vstack(parts)
        blocks.append(positives)
        labels.append(np.full(len(positives), target))

    if not guard_pre:
        if dim is None:
            if not blocks:
                raise InputError(f"mode {mode} has no data and no dimension was given")
            dim = blocks[0].shape[1]
        _log(logging.INFO, f"mode {mode}: no outgoing guards, constant stay classifier")
        return Classifier.constant(mode, dim)

    X = np.vstack(blocks)
    y = np.concatenate(labels)
    return fit_logistic(X, y, cfg.balanced, cfg.reg, seed, cfg)

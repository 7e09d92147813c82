"""One-vs-rest kernel SVM over deep features, with per-class probability calibration.

Each class gets a binary C-SVM (class vs rest) solved by libsvm through
scikit-learn. Only the solution (support vectors, signed dual coefficients,
intercepts) is kept; margins are evaluated here from that data so a saved
model reproduces its scores exactly. Margins are mapped to probabilities
with a per-class logistic curve whose slope is constrained non-negative,
fitted on a holdout split, and the K outputs are normalized to sum to one.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_expit, softmax
from sklearn.svm import SVC

from ..categories import NUM_CLASSES, category_map
from ..config import SvmConfig
from ..errors import ConfigError, ContractError

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


def _check_finite(X: np.ndarray, what: str) -> None:
    bad = np.flatnonzero(~np.isfinite(X).all(axis=1))
    if bad.size:
        raise ContractError(f"{what} row {int(bad[0])} contains non-finite values ({bad.size} bad rows)")


def resolve_gamma(policy, X: np.ndarray) -> float:
    """``scale`` = 1/(d·Var[X]), ``auto`` = 1/d, or an explicit number."""
    d = X.shape[1]
    if policy == "scale":
        var = float(X.var())
        return 1.0 / (d * var) if var > 0 else 1.0
    if policy == "auto":
        return 1.0 / d
    return float(policy)


def kernel_matrix(X: np.ndarray, S: np.ndarray, kernel: str, gamma: float) -> np.ndarray:
    if kernel == "linear":
        return X @ S.T
    sq = (X * X).sum(1)[:, None] + (S * S).sum(1)[None, :] - 2.0 * (X @ S.T)
    return np.exp(-gamma * np.maximum(sq, 0.0))


def fit_monotone_logistic(margins: np.ndarray, positive: np.ndarray) -> tuple[float, float]:
    """Fit p = sigmoid(a·m + b) with a >= 0 by regularized-target log loss.

    Targets use the usual (N+ + 1)/(N+ + 2) and 1/(N- + 2) smoothing, which
    keeps the fit bounded on separable margins.
    """
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    t = np.where(positive, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))

    def loss(params):
        a, b = params
        z = a * margins + b
        val = -(t * log_expit(z) + (1 - t) * log_expit(-z)).sum()
        r = expit(z) - t
        return val, np.array([(r * margins).sum(), r.sum()])

    res = minimize(loss, x0=np.array([1.0, 0.0]), jac=True, method="L-BFGS-B", bounds=[(0.0, None), (None, None)])
    return float(res.x[0]), float(res.x[1])


@dataclass
class SvmModel:
    support: np.ndarray  # (n_sv, d), union over all one-vs-rest problems
    coef: np.ndarray  # (K, n_sv) signed dual coefficients
    intercept: np.ndarray  # (K,)
    gamma: float
    kernel: str
    cal_slope: np.ndarray  # (K,)
    cal_offset: np.ndarray  # (K,)
    config: SvmConfig = field(default_factory=SvmConfig)
    categories: dict[int, str] = field(default_factory=category_map)
    metrics: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return int(self.support.shape[1])

    @property
    def num_classes(self) -> int:
        return int(self.coef.shape[0])

    def margins(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise ContractError(f"feature dimension {X.shape[1]} does not match model dimension {self.dim}")
        _check_finite(X, "feature")
        K = kernel_matrix(X, self.support, self.kernel, self.gamma)
        return K @ self.coef.T + self.intercept

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        z = self.margins(X) * self.cal_slope + self.cal_offset
        return softmax(log_expit(z), axis=1)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = {
            "format_version": FORMAT_VERSION,
            "kind": "svm",
            "kernel": self.kernel,
            "gamma": self.gamma,
            "config": asdict(self.config),
            "categories": {str(k): v for k, v in self.categories.items()},
            "metrics": self.metrics,
            "extra": self.extra,
        }
        with open(path, "wb") as fh:
            np.savez(
                fh,
                meta=np.array(json.dumps(meta, sort_keys=True)),
                support=self.support,
                coef=self.coef,
                intercept=self.intercept,
                cal_slope=self.cal_slope,
                cal_offset=self.cal_offset,
            )
        return path

    @classmethod
    def load(cls, path: str | Path) -> "SvmModel":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("kind") != "svm" or meta.get("format_version") != FORMAT_VERSION:
                raise ConfigError(f"{path} is not a version-{FORMAT_VERSION} SVM model")
            return cls(
                support=z["support"],
                coef=z["coef"],
                intercept=z["intercept"],
                gamma=float(meta["gamma"]),
                kernel=meta["kernel"],
                cal_slope=z["cal_slope"],
                cal_offset=z["cal_offset"],
                config=SvmConfig(**meta["config"]),
                categories={int(k): v for k, v in meta["categories"].items()},
                metrics=meta["metrics"],
                extra=meta.get("extra", {}),
            )


def train_svm(
    features: Sequence,
    labels: Sequence[int],
    config: SvmConfig,
    cal_split: Optional[tuple] = None,
    num_classes: int = NUM_CLASSES,
) -> SvmModel:
    """Fit the one-vs-rest SVM and calibrate it on ``cal_split = (features, labels)``.

    Without a holdout the calibration falls back to training margins, which
    are optimistic; a warning is logged.
    """
    config.validate()
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ContractError(f"features {X.shape} and labels {y.shape} disagree")
    _check_finite(X, "training feature")
    present = np.unique(y)
    if present.size < 2:
        raise ConfigError(f"need at least two classes to train, got {present.tolist()}")
    if present.min() < 0 or present.max() >= num_classes:
        raise ConfigError(f"labels outside [0, {num_classes})")

    gamma = resolve_gamma(config.gamma_policy, X)
    used = np.zeros(len(X), dtype=bool)
    solutions = []
    for k in range(num_classes):
        target = np.where(y == k, 1, -1)
        if k not in present:
            solutions.append((np.array([], dtype=np.int64), np.array([]), -1.0))
            continue
        svc = SVC(C=config.C, kernel=config.kernel, gamma=gamma, tol=1e-4, shrinking=True)
        svc.fit(X, target)
        # Positive margin means classes_[1], i.e. +1 (class k).
        solutions.append((svc.support_, svc.dual_coef_[0].copy(), float(svc.intercept_[0])))
        used[svc.support_] = True

    sv_index = np.flatnonzero(used)
    position = np.full(len(X), -1)
    position[sv_index] = np.arange(sv_index.size)
    coef = np.zeros((num_classes, sv_index.size))
    intercept = np.zeros(num_classes)
    for k, (idx, dual, b) in enumerate(solutions):
        coef[k, position[idx]] = dual
        intercept[k] = b

    model = SvmModel(
        support=X[sv_index].copy(),
        coef=coef,
        intercept=intercept,
        gamma=gamma,
        kernel=config.kernel,
        cal_slope=np.ones(num_classes),
        cal_offset=np.zeros(num_classes),
        config=config,
        categories=category_map() if num_classes == NUM_CLASSES else {k: str(k) for k in range(num_classes)},
    )

    if cal_split is None:
        log.warning("no calibration holdout given; calibrating on training margins")
        Xc, yc = X, y
    else:
        Xc = np.asarray(cal_split[0], dtype=np.float64)
        yc = np.asarray(cal_split[1], dtype=np.int64)
        _check_finite(Xc, "calibration feature")
    mc = model.margins(Xc)
    mt = None
    for k in range(num_classes):
        if k not in present:
            # Never seen in training: constant, negligible probability.
            model.cal_slope[k], model.cal_offset[k] = 0.0, -10.0
        elif (yc == k).any():
            model.cal_slope[k], model.cal_offset[k] = fit_monotone_logistic(mc[:, k], yc == k)
        else:
            log.warning("class %d absent from calibration holdout; calibrating on training margins", k)
            mt = model.margins(X) if mt is None else mt
            model.cal_slope[k], model.cal_offset[k] = fit_monotone_logistic(mt[:, k], y == k)

    model.metrics = {
        "train_accuracy": float((np.argmax(model.margins(X), 1) == y).mean()),
        "holdout_accuracy": float((model.predict(Xc) == yc).mean()) if cal_split is not None else None,
        "n_train": int(len(X)),
        "n_support": int(sv_index.size),
        "gamma": gamma,
    }
    log.info("svm trained: %s", model.metrics)
    return model


def classify(model: SvmModel, feat) -> np.ndarray:
    """Probability vector over the model's classes for one feature vector."""
    feat = np.asarray(feat, dtype=np.float64)
    if feat.ndim != 1:
        raise ContractError(f"expected a single feature vector, got shape {feat.shape}")
    return model.predict_proba(feat[None])[0]

"""Tree ensembles: second-order gradient boosting and bagged forests.

Both presets of the booster share one engine. ``gbdt_depthwise`` grows
level by level with exact splits; ``gbdt_leafwise`` always expands the
best leaf and searches 256-bin histograms. ``random_forest`` bags
variance (or Gini) trees, and ``decision_tree`` is a forest of one
unbagged tree.

Every model exposes ``predict_raw(X) = base_value + sum_k weight_k * tree_k(X)``
so the explain module can decompose any of them the same way.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dataset import FeatureMatrix, kfold
from .errors import InputError
from .metrics import classify_durations, confusion, report, rmse
from .seeding import derive_seed, rng, thread_cap
from .tree import BinnedMatrix, DecisionTree, TreeParams, feature_subset, fit_newton_tree, fit_variance_tree

MODEL_FORMAT_VERSION = 1


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class Objective:
    name: str

    def grad_hess(self, pred: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def base_score(self, y: np.ndarray) -> float:
        raise NotImplementedError

    def loss(self, pred: np.ndarray, y: np.ndarray) -> float:
        raise NotImplementedError

    def check_target(self, y: np.ndarray) -> None:
        if not np.isfinite(y).all():
            raise InputError("target contains non-finite values")


class SquaredError(Objective):
    name = "squared_error"

    def grad_hess(self, pred, y):
        return pred - y, np.ones_like(y)

    def base_score(self, y):
        return float(np.mean(y))

    def loss(self, pred, y):
        """Root mean squared error."""
        return float(np.sqrt(np.mean((pred - y) ** 2)))


class Logistic(Objective):
    name = "logistic"

    def grad_hess(self, pred, y):
        p = sigmoid(pred)
        return p - y, p * (1.0 - p)

    def base_score(self, y):
        p = min(max(float(np.mean(y)), 1e-6), 1 - 1e-6)
        return math.log(p / (1 - p))

    def loss(self, pred, y):
        """Mean log loss."""
        p = np.clip(sigmoid(pred), 1e-15, 1 - 1e-15)
        return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))

    def check_target(self, y):
        super().check_target(y)
        if not np.isin(y, (0.0, 1.0)).all():
            raise InputError("logistic objective needs binary 0/1 targets")


OBJECTIVES: dict[str, Objective] = {"squared_error": SquaredError(), "logistic": Logistic()}


def get_objective(objective: str | Objective) -> Objective:
    if isinstance(objective, Objective):
        return objective
    try:
        return OBJECTIVES[objective]
    except KeyError:
        raise InputError(f"unknown objective {objective!r}") from None


def _check_X(X, n_features: int | None = None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise InputError("X must be 2-D")
    if n_features is not None and X.shape[1] != n_features:
        raise InputError(f"expected {n_features} feature columns, got {X.shape[1]}")
    return X


@dataclass
class GbdtModel:
    trees: list[DecisionTree]
    learning_rate: float
    base_score: float
    objective: str
    n_rounds: int
    n_features: int
    log_target: bool = False
    feature_names: list[str] | None = None
    params: dict = field(default_factory=dict)
    train_loss: list[float] = field(default_factory=list)
    valid_loss: list[float] = field(default_factory=list)

    kind = "gbdt"

    @property
    def base_value(self) -> float:
        return self.base_score

    @property
    def tree_weights(self) -> list[float]:
        return [self.learning_rate] * len(self.trees)

    def predict_raw(self, X) -> np.ndarray:
        X = _check_X(X, self.n_features)
        out = np.full(X.shape[0], self.base_score)
        for t in self.trees:
            out += self.learning_rate * t.predict(X)
        return out

    def predict(self, X) -> np.ndarray:
        """Minutes for regression, long-term probability for ``logistic``."""
        raw = self.predict_raw(X)
        if self.objective == "logistic":
            return sigmoid(raw)
        return np.expm1(raw) if self.log_target else raw

    def predict_proba(self, X) -> np.ndarray:
        if self.objective != "logistic":
            raise InputError("predict_proba needs a logistic model")
        return sigmoid(self.predict_raw(X))

    def predict_class(self, X) -> np.ndarray:
        return (self.predict_proba(X) > 0.5).astype(int)

    def to_dict(self) -> dict:
        return {
            "version": MODEL_FORMAT_VERSION,
            "kind": self.kind,
            "objective": self.objective,
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "n_rounds": self.n_rounds,
            "n_features": self.n_features,
            "log_target": self.log_target,
            "feature_names": self.feature_names,
            "params": self.params,
            "train_loss": self.train_loss,
            "valid_loss": self.valid_loss,
            "trees": [t.to_nodes() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbdtModel":
        return cls(
            trees=[DecisionTree.from_nodes(nodes, "newton") for nodes in d["trees"]],
            learning_rate=float(d["learning_rate"]),
            base_score=float(d["base_score"]),
            objective=d["objective"],
            n_rounds=int(d["n_rounds"]),
            n_features=int(d["n_features"]),
            log_target=bool(d.get("log_target", False)),
            feature_names=d.get("feature_names"),
            params=d.get("params", {}),
            train_loss=list(d.get("train_loss", [])),
            valid_loss=list(d.get("valid_loss", [])),
        )


def fit_gbdt(
    X,
    y,
    objective: str | Objective = "squared_error",
    params: TreeParams | None = None,
    n_rounds: int = 100,
    seed: int = 0,
    learning_rate: float = 0.1,
    log_target: bool = False,
    eval_set: tuple | None = None,
    early_stopping_rounds: int | None = None,
    feature_names: Sequence[str] | None = None,
) -> GbdtModel:
    """Newton boosting: each round fits a tree to the current grad/hess.

    With ``log_target`` a squared-error model is fit on ``log1p(y)`` and
    ``predict`` maps back with ``expm1``. ``eval_set=(X_val, y_val)`` plus
    ``early_stopping_rounds`` keeps the trees up to the best validation
    round.
    """
    if n_rounds < 1:
        raise InputError("n_rounds must be >= 1")
    if not 0.0 < learning_rate <= 1.0:
        raise InputError("learning_rate must be in (0, 1]")
    obj = get_objective(objective)
    params = params or TreeParams()
    X = _check_X(X)
    y = np.asarray(y, dtype=float)
    if y.shape != (X.shape[0],):
        raise InputError("y must have one entry per row")
    if log_target:
        if obj.name != "squared_error":
            raise InputError("log_target only applies to squared_error")
        if (y <= -1).any():
            raise InputError("log_target needs y > -1")
        y = np.log1p(y)
    obj.check_target(y)

    binned = BinnedMatrix(X, params.split_method, params.max_bins)
    base = obj.base_score(y)
    pred = np.full(y.shape, base)
    if eval_set is not None:
        Xv = _check_X(eval_set[0], X.shape[1])
        yv = np.asarray(eval_set[1], dtype=float)
        if log_target:
            yv = np.log1p(yv)
        pred_v = np.full(yv.shape, base)
    trees: list[DecisionTree] = []
    train_loss: list[float] = []
    valid_loss: list[float] = []
    best_round, best_val = 0, math.inf
    for k in range(n_rounds):
        g, h = obj.grad_hess(pred, y)
        tree = fit_newton_tree(X, g, h, params, seed=derive_seed(seed, f"round/{k}"), binned=binned)
        trees.append(tree)
        # leaves indexed by the binned partition equal tree.predict on the training rows
        pred = pred + learning_rate * tree.predict(X)
        train_loss.append(obj.loss(pred, y))
        if eval_set is not None:
            pred_v = pred_v + learning_rate * tree.predict(Xv)
            v = obj.loss(pred_v, yv)
            valid_loss.append(v)
            if v < best_val:
                best_val, best_round = v, k
            elif early_stopping_rounds is not None and k - best_round >= early_stopping_rounds:
                break
    if eval_set is not None and early_stopping_rounds is not None:
        trees = trees[: best_round + 1]
        train_loss = train_loss[: best_round + 1]
        valid_loss = valid_loss[: best_round + 1]
    return GbdtModel(
        trees=trees,
        learning_rate=learning_rate,
        base_score=base,
        objective=obj.name,
        n_rounds=n_rounds,
        n_features=X.shape[1],
        log_target=log_target,
        feature_names=list(feature_names) if feature_names is not None else None,
        params=params.to_dict(),
        train_loss=train_loss,
        valid_loss=valid_loss,
    )


def predict_gbdt(model: GbdtModel, X) -> np.ndarray:
    return model.predict_raw(X)


@dataclass
class ForestModel:
    trees: list[DecisionTree]
    seeds: list[int]
    task: str  # "regression" | "classification"
    n_features: int
    bootstrap: bool = True
    log_target: bool = False
    feature_names: list[str] | None = None
    params: dict = field(default_factory=dict)
    feature_sets: list[list[int]] = field(default_factory=list)

    kind = "forest"

    @property
    def base_value(self) -> float:
        return 0.0

    @property
    def tree_weights(self) -> list[float]:
        return [1.0 / len(self.trees)] * len(self.trees)

    def predict_raw(self, X) -> np.ndarray:
        """Mean of the tree outputs (log-minutes with ``log_target``)."""
        X = _check_X(X, self.n_features)
        return np.mean([t.predict(X) for t in self.trees], axis=0)

    def predict(self, X) -> np.ndarray:
        raw = self.predict_raw(X)
        return np.expm1(raw) if self.log_target else raw

    def predict_proba(self, X) -> np.ndarray:
        if self.task != "classification":
            raise InputError("predict_proba needs a classification forest")
        return self.predict_raw(X)

    def predict_class(self, X) -> np.ndarray:
        return (self.predict_proba(X) > 0.5).astype(int)

    def to_dict(self) -> dict:
        return {
            "version": MODEL_FORMAT_VERSION,
            "kind": self.kind,
            "task": self.task,
            "n_features": self.n_features,
            "bootstrap": self.bootstrap,
            "log_target": self.log_target,
            "seeds": [str(s) for s in self.seeds],
            "feature_names": self.feature_names,
            "params": self.params,
            "feature_sets": self.feature_sets,
            "trees": [t.to_nodes() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        crit = "gini" if d["task"] == "classification" else "variance"
        return cls(
            trees=[DecisionTree.from_nodes(nodes, crit) for nodes in d["trees"]],
            seeds=[int(s) for s in d["seeds"]],
            task=d["task"],
            n_features=int(d["n_features"]),
            bootstrap=bool(d.get("bootstrap", True)),
            log_target=bool(d.get("log_target", False)),
            feature_names=d.get("feature_names"),
            params=d.get("params", {}),
            feature_sets=d.get("feature_sets", []),
        )


def _fit_forest_tree(X, y, params, task, bootstrap, tree_seed):
    n = X.shape[0]
    if bootstrap:
        idx = np.sort(rng(tree_seed, "bootstrap").integers(0, n, n))
        Xb, yb = X[idx], y[idx]
    else:
        Xb, yb = X, y
    crit = "gini" if task == "classification" else "variance"
    return fit_variance_tree(Xb, yb, params, seed=tree_seed, criterion=crit)


def fit_forest(
    X,
    y,
    params: TreeParams | None = None,
    n_trees: int = 100,
    seed: int = 0,
    task: str = "regression",
    bootstrap: bool = True,
    log_target: bool = False,
    feature_names: Sequence[str] | None = None,
    threads: int | None = None,
) -> ForestModel:
    """Bagged trees; per-tree seeds are derived from ``seed`` up front."""
    if n_trees < 1:
        raise InputError("n_trees must be >= 1")
    if task not in ("regression", "classification"):
        raise InputError(f"unknown task {task!r}")
    params = params or TreeParams(max_depth=12, min_samples_leaf=5, feature_subsample=0.5)
    X = _check_X(X)
    y = np.asarray(y, dtype=float)
    if y.shape != (X.shape[0],):
        raise InputError("y must have one entry per row")
    if task == "classification" and not np.isin(y, (0.0, 1.0)).all():
        raise InputError("classification forest needs 0/1 targets")
    if log_target:
        if task != "regression":
            raise InputError("log_target only applies to regression")
        y = np.log1p(y)
    seeds = [derive_seed(seed, f"tree/{i}") for i in range(n_trees)]
    workers = threads if threads is not None else thread_cap()
    if workers > 1 and n_trees > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trees = list(pool.map(lambda s: _fit_forest_tree(X, y, params, task, bootstrap, s), seeds))
    else:
        trees = [_fit_forest_tree(X, y, params, task, bootstrap, s) for s in seeds]
    return ForestModel(
        trees=trees,
        seeds=seeds,
        task=task,
        n_features=X.shape[1],
        bootstrap=bootstrap,
        log_target=log_target,
        feature_names=list(feature_names) if feature_names is not None else None,
        params=params.to_dict(),
        feature_sets=[feature_subset(X.shape[1], params, s).tolist() for s in seeds],
    )


def model_to_json(model) -> str:
    return json.dumps(model.to_dict(), sort_keys=True, separators=(",", ":"))


def model_from_dict(d: dict):
    version = int(d.get("version", 0))
    if version > MODEL_FORMAT_VERSION:
        raise InputError(f"model format version {version} is newer than supported ({MODEL_FORMAT_VERSION})")
    kind = d.get("kind")
    if kind == "gbdt":
        return GbdtModel.from_dict(d)
    if kind == "forest":
        return ForestModel.from_dict(d)
    raise InputError(f"unknown model kind {kind!r}")


def save_model(model, path: str | Path) -> None:
    Path(path).write_text(model_to_json(model) + "\n", encoding="utf-8")


def load_model(path: str | Path):
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read model file {path}: {exc}") from None
    return model_from_dict(d)


def model_hash(model) -> str:
    return hashlib.sha256(model_to_json(model).encode()).hexdigest()


# ---------------------------------------------------------------- presets

PRESETS = {
    "gbdt_depthwise": {
        "family": "gbdt",
        "n_rounds": 300,
        "learning_rate": 0.1,
        "tree": {"max_depth": 6, "min_samples_leaf": 20, "reg_lambda": 1.0, "gamma": 0.0,
                 "growth": "depth_wise", "split_method": "exact"},
    },
    "gbdt_leafwise": {
        "family": "gbdt",
        "n_rounds": 300,
        "learning_rate": 0.1,
        "tree": {"max_depth": None, "max_leaves": 63, "min_samples_leaf": 20, "reg_lambda": 1.0,
                 "gamma": 0.0, "growth": "leaf_wise", "split_method": "hist", "max_bins": 256},
    },
    "random_forest": {
        "family": "forest",
        "n_trees": 100,
        "tree": {"max_depth": 12, "min_samples_leaf": 5, "feature_subsample": 0.5},
    },
    "decision_tree": {
        "family": "tree",
        "tree": {"max_depth": 8, "min_samples_leaf": 20},
    },
}


@dataclass
class ModelSpec:
    """A preset plus overrides; ``task="classification"`` labels rows by ``tau``."""

    preset: str = "gbdt_depthwise"
    task: str = "regression"
    tau: float = 30.0
    log_target: bool = False
    n_rounds: int | None = None
    learning_rate: float | None = None
    n_trees: int | None = None
    tree: dict = field(default_factory=dict)
    early_stopping_rounds: int | None = None

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise InputError(f"unknown model preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if self.task not in ("regression", "classification"):
            raise InputError(f"unknown task {self.task!r}")

    @property
    def family(self) -> str:
        return PRESETS[self.preset]["family"]

    def tree_params(self) -> TreeParams:
        base = dict(PRESETS[self.preset]["tree"])
        base.update(self.tree)
        return TreeParams.from_dict(base)

    def rounds(self) -> int:
        return self.n_rounds if self.n_rounds is not None else PRESETS[self.preset].get("n_rounds", 100)

    def lr(self) -> float:
        return self.learning_rate if self.learning_rate is not None else PRESETS[self.preset].get("learning_rate", 0.1)

    def forest_size(self) -> int:
        return self.n_trees if self.n_trees is not None else PRESETS[self.preset].get("n_trees", 100)


def labels_for(spec: ModelSpec, durations: np.ndarray) -> np.ndarray:
    if spec.task == "classification":
        return classify_durations(durations, spec.tau).astype(float)
    return np.asarray(durations, dtype=float)


def fit_model(spec: ModelSpec, X, durations, seed: int = 0, feature_names=None, eval_set=None):
    """Fit the preset; targets are durations (labelled by tau for classification)."""
    y = labels_for(spec, durations)
    params = spec.tree_params()
    if spec.family == "gbdt":
        objective = "logistic" if spec.task == "classification" else "squared_error"
        if eval_set is not None:
            eval_set = (eval_set[0], labels_for(spec, eval_set[1]))
        return fit_gbdt(X, y, objective, params, spec.rounds(), seed, spec.lr(),
                        log_target=spec.log_target and spec.task == "regression",
                        eval_set=eval_set, early_stopping_rounds=spec.early_stopping_rounds,
                        feature_names=feature_names)
    if spec.family == "forest":
        return fit_forest(X, y, params, spec.forest_size(), seed, task=spec.task,
                          log_target=spec.log_target and spec.task == "regression", feature_names=feature_names)
    return fit_forest(X, y, params, 1, seed, task=spec.task, bootstrap=False,
                      log_target=spec.log_target and spec.task == "regression", feature_names=feature_names)


@dataclass
class FoldReport:
    fold: int
    n_train: int
    n_test: int
    metrics: dict[str, float]


@dataclass
class CVReport:
    task: str
    folds: list[FoldReport]
    mean: dict[str, float]
    std: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "folds": [{"fold": f.fold, "n_train": f.n_train, "n_test": f.n_test, "metrics": f.metrics}
                      for f in self.folds],
            "mean": self.mean,
            "std": self.std,
        }


def evaluate_model(model, spec: ModelSpec, X, durations) -> dict[str, float]:
    if spec.task == "regression":
        return {"rmse": rmse(np.asarray(durations, dtype=float), model.predict(X))}
    truth = classify_durations(durations, spec.tau)
    rep = report(confusion(truth, model.predict_class(X)))
    return rep.to_dict()


def cross_validate(matrix: FeatureMatrix, spec: ModelSpec, k: int = 5, seed: int = 0,
                   threads: int | None = None,
                   on_fold: Callable[[FoldReport], None] | None = None) -> CVReport:
    """k-fold CV; each fold gets a seed derived from ``seed`` before any fitting."""
    folds = kfold(matrix, k, seed)
    seeds = [derive_seed(seed, f"cv/{i}") for i in range(k)]

    def run(i):
        sp = folds[i]
        model = fit_model(spec, matrix.rows[sp.train_idx], matrix.target[sp.train_idx], seeds[i],
                          feature_names=matrix.column_names)
        m = evaluate_model(model, spec, matrix.rows[sp.test_idx], matrix.target[sp.test_idx])
        fr = FoldReport(i, int(sp.train_idx.size), int(sp.test_idx.size), m)
        if on_fold is not None:
            on_fold(fr)
        return fr

    workers = threads if threads is not None else thread_cap()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(run, range(k)))
    else:
        reports = [run(i) for i in range(k)]
    keys = [key for key, v in reports[0].metrics.items() if isinstance(v, (int, float)) and not isinstance(v, bool)]
    mean = {key: float(np.mean([r.metrics[key] for r in reports])) for key in keys}
    std = {key: float(np.std([r.metrics[key] for r in reports], ddof=1)) if k > 1 else 0.0 for key in keys}
    return CVReport(spec.task, reports, mean, std)

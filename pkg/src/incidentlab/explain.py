"""Feature importance from tree structure and from tree SHAP values.

SHAP values here are the path-dependent variant: the expectation of a tree
given a feature subset follows the training covers at every split on a
feature outside the subset. The recursion extends/unwinds a path of
(feature, zero fraction, one fraction, weight) elements. Each tree is
walked once for a whole batch of rows, since the zero fractions depend only
on the tree and the one fractions are per-row 0/1 arrays.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InputError
from .tree import DecisionTree

LOCAL_ACCURACY_TOL = 1e-8


def _trees_of(model) -> tuple[list[DecisionTree], list[float], float]:
    if isinstance(model, DecisionTree):
        return [model], [1.0], 0.0
    return list(model.trees), list(model.tree_weights), float(model.base_value)


def _n_features(model, X=None) -> int:
    if isinstance(model, DecisionTree):
        used = model.feature[model.feature >= 0]
        return int(X.shape[1]) if X is not None else int(used.max(initial=-1)) + 1
    return int(model.n_features)


def _feature_names(model, d: int, names: Sequence[str] | None) -> list[str]:
    if names is not None:
        return list(names)
    fn = getattr(model, "feature_names", None)
    return list(fn) if fn else [f"f{i}" for i in range(d)]


@dataclass
class ImportanceReport:
    names: list[str]
    split_count: np.ndarray | None = None
    total_gain: np.ndarray | None = None
    mean_abs_shap: np.ndarray | None = None

    COLUMNS = ("split_count", "total_gain", "mean_abs_shap")

    def merge(self, other: "ImportanceReport") -> "ImportanceReport":
        if self.names != other.names:
            raise InputError("cannot merge importance reports over different features")
        pick = lambda a, b: a if a is not None else b  # noqa: E731
        return ImportanceReport(
            self.names,
            pick(self.split_count, other.split_count),
            pick(self.total_gain, other.total_gain),
            pick(self.mean_abs_shap, other.mean_abs_shap),
        )

    def column(self, name: str) -> np.ndarray:
        if name not in self.COLUMNS:
            raise InputError(f"unknown importance column {name!r}")
        values = getattr(self, name)
        if values is None:
            raise InputError(f"importance column {name!r} was not computed")
        return values

    def ranking(self, column: str, top_k: int | None = None) -> list[tuple[str, float]]:
        """Descending by value; equal values ordered by feature name."""
        values = self.column(column)
        order = sorted(range(len(self.names)), key=lambda i: (-float(values[i]), self.names[i]))
        if top_k is not None:
            order = order[:top_k]
        return [(self.names[i], float(values[i])) for i in order]

    def to_csv(self, path: str | Path, column: str, top_k: int | None = None) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rank", "feature", "value"])
            for rank, (name, value) in enumerate(self.ranking(column, top_k), start=1):
                w.writerow([rank, name, int(value) if column == "split_count" else repr(value)])


def split_importance(model, feature_names: Sequence[str] | None = None,
                     n_features: int | None = None) -> ImportanceReport:
    """Split counts and summed split gains per feature over every tree."""
    trees, _, _ = _trees_of(model)
    d = n_features if n_features is not None else _n_features(model)
    names = _feature_names(model, d, feature_names)
    counts = np.zeros(d, dtype=np.int64)
    gains = np.zeros(d)
    for t in trees:
        internal = t.feature >= 0
        np.add.at(counts, t.feature[internal], 1)
        np.add.at(gains, t.feature[internal], t.gain[internal])
    return ImportanceReport(names, split_count=counts, total_gain=gains)


@dataclass
class ShapVector:
    phi: np.ndarray
    phi0: float


def tree_expected_value(tree: DecisionTree) -> float:
    """Cover-weighted mean output, propagated with the same ratios SHAP uses."""
    def rec(i):
        if tree.feature[i] < 0:
            return float(tree.value[i])
        l, r = tree.left[i], tree.right[i]
        c = tree.cover[i]
        return (tree.cover[l] / c) * rec(l) + (tree.cover[r] / c) * rec(r)
    return rec(0)


class _PathElement:
    __slots__ = ("d", "z", "o", "w")

    def __init__(self, d, z, o, w):
        self.d = d
        self.z = z
        self.o = o
        self.w = w


def _extend(path, z, o, d, n_rows):
    l = len(path)
    new = [_PathElement(e.d, e.z, e.o, e.w.copy()) for e in path]
    new.append(_PathElement(d, z, o, np.ones(n_rows) if l == 0 else np.zeros(n_rows)))
    for i in range(l - 1, -1, -1):
        new[i + 1].w += o * new[i].w * ((i + 1) / (l + 1))
        new[i].w = z * new[i].w * ((l - i) / (l + 1))
    return new


def _unwind(path, k):
    last = len(path) - 1
    o, z = path[k].o, path[k].z
    nz = o != 0
    o_safe = np.where(nz, o, 1.0)
    n = path[last].w.copy()
    new = [_PathElement(e.d, e.z, e.o, e.w.copy()) for e in path]
    for j in range(last - 1, -1, -1):
        t = new[j].w
        with np.errstate(divide="ignore", invalid="ignore"):
            w_hot = n * (last + 1) / ((j + 1) * o_safe)
            w_cold = t * (last + 1) / (z * (last - j)) if z != 0 else np.zeros_like(t)
        new_w = np.where(nz, w_hot, w_cold)
        n = np.where(nz, t - new_w * z * ((last - j) / (last + 1)), n)
        new[j].w = new_w
    for j in range(k, last):
        new[j].d, new[j].z, new[j].o = new[j + 1].d, new[j + 1].z, new[j + 1].o
    new.pop()
    return new


def _unwound_sum(path, k):
    last = len(path) - 1
    o, z = path[k].o, path[k].z
    nz = o != 0
    o_safe = np.where(nz, o, 1.0)
    n = path[last].w
    total_hot = np.zeros_like(n)
    total_cold = np.zeros_like(n)
    for j in range(last - 1, -1, -1):
        t = n * (last + 1) / ((j + 1) * o_safe)
        total_hot = total_hot + t
        n = path[j].w - t * z * ((last - j) / (last + 1))
        if z != 0:
            total_cold = total_cold + (path[j].w / z) / ((last - j) / (last + 1))
    return np.where(nz, total_hot, total_cold)


def _tree_shap_batch(tree: DecisionTree, X: np.ndarray, phi: np.ndarray, scale: float) -> None:
    n_rows = X.shape[0]
    feat, thr, left, right, cover, value = tree.feature, tree.threshold, tree.left, tree.right, tree.cover, tree.value

    def rec(node, path, z, o, d):
        path = _extend(path, z, o, d, n_rows)
        f = int(feat[node])
        if f < 0:
            for k in range(1, len(path)):
                w = _unwound_sum(path, k)
                e = path[k]
                phi[:, e.d] += scale * w * (e.o - e.z) * value[node]
            return
        go_left = (X[:, f] <= thr[node]).astype(float)
        inc_z, inc_o = 1.0, np.ones(n_rows)
        for k in range(1, len(path)):
            if path[k].d == f:
                inc_z, inc_o = path[k].z, path[k].o
                path = _unwind(path, k)
                break
        c = cover[node]
        rec(int(left[node]), path, inc_z * cover[left[node]] / c, inc_o * go_left, f)
        rec(int(right[node]), path, inc_z * cover[right[node]] / c, inc_o * (1.0 - go_left), f)

    if feat[0] < 0:
        return
    rec(0, [], 1.0, np.ones(n_rows), -1)


def tree_shap_matrix(model, X) -> tuple[np.ndarray, float]:
    """SHAP values for every row of ``X`` and the shared base value.

    ``phi0 + phi[i].sum() == model raw prediction for row i``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    trees, weights, base = _trees_of(model)
    d = _n_features(model, X)
    if X.shape[1] != d:
        raise InputError(f"expected {d} feature columns, got {X.shape[1]}")
    phi = np.zeros((X.shape[0], d))
    phi0 = base
    for t, w in zip(trees, weights):
        phi0 += w * tree_expected_value(t)
        _tree_shap_batch(t, X, phi, w)
    return phi, phi0


def tree_shap(model, x) -> ShapVector:
    phi, phi0 = tree_shap_matrix(model, np.asarray(x, dtype=float)[None, :])
    return ShapVector(phi[0], phi0)


def raw_prediction(model, X) -> np.ndarray:
    if isinstance(model, DecisionTree):
        return model.predict(X)
    return model.predict_raw(X)


def shap_summary(model, X_sample, feature_names: Sequence[str] | None = None,
                 batch_size: int = 4096) -> ImportanceReport:
    """Mean |phi| per feature; local accuracy is checked on every row first."""
    X = np.asarray(X_sample, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise InputError("shap_summary needs at least one row")
    d = _n_features(model, X)
    total = np.zeros(d)
    for start in range(0, X.shape[0], batch_size):
        chunk = X[start:start + batch_size]
        phi, phi0 = tree_shap_matrix(model, chunk)
        gap = np.abs(phi0 + phi.sum(axis=1) - raw_prediction(model, chunk))
        if gap.max(initial=0.0) > LOCAL_ACCURACY_TOL:
            raise ArithmeticError(f"SHAP local accuracy violated by {gap.max():.3g}")
        total += np.abs(phi).sum(axis=0)
    return ImportanceReport(_feature_names(model, d, feature_names), mean_abs_shap=total / X.shape[0])


def explain(model, X_sample, feature_names: Sequence[str] | None = None) -> ImportanceReport:
    d = _n_features(model, np.asarray(X_sample))
    return split_importance(model, feature_names, d).merge(shap_summary(model, X_sample, feature_names))

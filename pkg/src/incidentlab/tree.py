"""Binary regression trees fitted by greedy split search.

One engine serves three criteria:

* ``newton``: second-order fit on per-row gradients/hessians. Leaf value
  ``-G / (H + lambda)``; split gain
  ``0.5 * (GL^2/(HL+lambda) + GR^2/(HR+lambda) - G^2/(H+lambda)) - gamma``.
* ``variance``: least squares on a target ``y``; gain is the drop in the sum
  of squared deviations, leaves are means. Equivalent to ``newton`` with
  ``grad = -y``, unit hessians, ``lambda = 0``, with the gain doubled.
* ``gini``: binary ``y`` in {0, 1}; gain is the count-weighted drop in Gini
  impurity, which for two classes is exactly twice the variance gain.
  Leaves hold the positive-class fraction.

Before the search every feature column is mapped to integer codes. With
``split_method="exact"`` the codes are the ranks of the distinct training
values, so histogram accumulation over codes enumerates every split the
classic exact algorithm would; thresholds are midpoints between the two
neighbouring distinct values present in the node. With ``"hist"`` columns
with more than ``max_bins`` distinct values are bucketed at quantile cut
points first.

Routing is ``x[feature] <= threshold`` to the left; NaN goes right.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InputError
from .seeding import rng

GAIN_SCALE = {"newton": 1.0, "variance": 2.0, "gini": 4.0}
# Features with more codes than this use a per-node sort instead of bincount.
_SORT_PATH_MIN_CODES = 2048


@dataclass
class TreeParams:
    max_depth: int | None = 6
    min_samples_leaf: int = 20
    min_split_gain: float = 0.0
    reg_lambda: float = 1.0
    gamma: float = 0.0
    growth: str = "depth_wise"
    max_leaves: int | None = None
    feature_subsample: float = 1.0
    split_method: str = "exact"
    max_bins: int = 256

    def __post_init__(self):
        if self.max_depth is not None and self.max_depth < 0:
            raise InputError("max_depth must be >= 0 (0 gives a single leaf)")
        if self.min_samples_leaf < 1:
            raise InputError("min_samples_leaf must be >= 1")
        if self.reg_lambda < 0 or self.gamma < 0:
            raise InputError("lambda and gamma must be non-negative")
        if self.growth not in ("depth_wise", "leaf_wise"):
            raise InputError(f"unknown growth {self.growth!r}")
        if self.growth == "depth_wise" and self.max_depth is None:
            raise InputError("depth_wise growth needs max_depth")
        if self.max_leaves is not None and self.max_leaves < 1:
            raise InputError("max_leaves must be >= 1")
        if not 0.0 < self.feature_subsample <= 1.0:
            raise InputError("feature_subsample must be in (0, 1]")
        if self.split_method not in ("exact", "hist"):
            raise InputError(f"unknown split_method {self.split_method!r}")
        if self.max_bins < 2:
            raise InputError("max_bins must be >= 2")

    @classmethod
    def from_dict(cls, d) -> "TreeParams":
        d = dict(d)
        if "lambda" in d:
            d["reg_lambda"] = d.pop("lambda")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InputError(f"unknown tree parameter(s): {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


class BinnedMatrix:
    """Integer-coded copy of a training matrix, reusable across boosting rounds."""

    def __init__(self, X: np.ndarray, split_method: str = "exact", max_bins: int = 256):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise InputError("X must be 2-D")
        self.split_method = split_method
        n, d = X.shape
        self.codes = np.empty((n, d), dtype=np.int32)
        self.values: list[np.ndarray] = []
        self.cuts: list[np.ndarray | None] = []
        for j in range(d):
            col = X[:, j]
            finite = col[~np.isnan(col)]
            uniq = np.unique(finite)
            if split_method == "hist" and uniq.size > max_bins:
                q = np.quantile(finite, np.linspace(0, 1, max_bins + 1)[1:-1])
                # snap each quantile to the midpoint of its bracketing distinct values
                pos = np.clip(np.searchsorted(uniq, q, side="right"), 1, uniq.size - 1)
                cuts = np.unique(0.5 * (uniq[pos - 1] + uniq[pos]))
                codes = np.searchsorted(cuts, col, side="left")
                self.cuts.append(cuts)
                self.values.append(np.append(cuts, uniq[-1]))
            else:
                codes = np.searchsorted(uniq, col, side="left")
                self.cuts.append(None)
                self.values.append(uniq)
            codes[np.isnan(col)] = len(self.values[-1])  # NaN past the last bin
            self.codes[:, j] = codes
        self.n_codes = np.array([v.size + 1 for v in self.values], dtype=np.int64)

    @property
    def shape(self):
        return self.codes.shape

    def threshold(self, feature: int, lo: int, hi: int) -> float:
        """Threshold separating code ``lo`` (last code left) from ``hi`` (first right)."""
        vals = self.values[feature]
        if hi >= vals.size:  # only NaN rows to the right
            return float(vals[lo])
        cuts = self.cuts[feature]
        if cuts is not None:
            return float(cuts[lo])
        a, b = float(vals[lo]), float(vals[hi])
        mid = 0.5 * (a + b)
        return a if not a <= mid < b else mid


@dataclass
class DecisionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    cover: np.ndarray
    n_samples: np.ndarray | None = None
    criterion: str = "newton"
    params: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    def is_leaf(self, i: int) -> bool:
        return self.feature[i] < 0

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    @property
    def n_internal(self) -> int:
        return int(np.sum(self.feature >= 0))

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        node = np.zeros(X.shape[0], dtype=np.int64)
        if self.n_nodes == 1:
            return node
        rows = np.arange(X.shape[0])
        used = self.feature >= 0
        if X.shape[1] <= int(self.feature[used].max(initial=-1)):
            raise InputError("row has fewer features than the tree uses")
        active = rows
        while active.size:
            nd = node[active]
            f = self.feature[nd]
            internal = f >= 0
            active, nd, f = active[internal], nd[internal], f[internal]
            if not active.size:
                break
            go_left = X[active, f] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def expected_value(self) -> float:
        """Cover-weighted mean of the leaf values."""
        leaves = self.feature < 0
        return float(np.sum(self.value[leaves] * self.cover[leaves]) / np.sum(self.cover[leaves]))

    def to_nodes(self) -> list[dict]:
        out = []
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                out.append({
                    "id": i,
                    "feature": int(self.feature[i]),
                    "threshold": float(self.threshold[i]),
                    "left": int(self.left[i]),
                    "right": int(self.right[i]),
                    "gain": float(self.gain[i]),
                    "cover": float(self.cover[i]),
                })
            else:
                out.append({"id": i, "value": float(self.value[i]), "cover": float(self.cover[i])})
        return out

    @classmethod
    def from_nodes(cls, nodes: list[dict], criterion: str = "newton", params: dict | None = None) -> "DecisionTree":
        n = len(nodes)
        t = cls(
            feature=np.full(n, -1, dtype=np.int64),
            threshold=np.zeros(n),
            left=np.full(n, -1, dtype=np.int64),
            right=np.full(n, -1, dtype=np.int64),
            value=np.zeros(n),
            gain=np.zeros(n),
            cover=np.zeros(n),
            criterion=criterion,
            params=dict(params or {}),
        )
        for nd in nodes:
            i = int(nd["id"])
            t.cover[i] = float(nd["cover"])
            if "feature" in nd:
                t.feature[i] = int(nd["feature"])
                t.threshold[i] = float(nd["threshold"])
                t.left[i] = int(nd["left"])
                t.right[i] = int(nd["right"])
                t.gain[i] = float(nd.get("gain", 0.0))
            else:
                t.value[i] = float(nd["value"])
        t.validate()
        return t

    def to_json(self) -> str:
        return json.dumps(self.to_nodes(), sort_keys=True)

    def validate(self) -> None:
        n = self.n_nodes
        seen = np.zeros(n, dtype=bool)
        stack = [0]
        while stack:
            i = stack.pop()
            if seen[i]:
                raise ValueError("tree has a cycle or shared child")
            seen[i] = True
            if self.feature[i] >= 0:
                stack += [int(self.right[i]), int(self.left[i])]
            elif not np.isfinite(self.value[i]):
                raise ValueError(f"leaf {i} has non-finite value")
        if not seen.all():
            raise ValueError("unreachable nodes in tree")


def predict_tree(tree: DecisionTree, x) -> float:
    return float(tree.predict(np.asarray(x, dtype=float)[None, :])[0])


@dataclass(order=True)
class _Split:
    sort_key: tuple
    node: int = field(compare=False)
    feature: int = field(compare=False)
    lo: int = field(compare=False)
    hi: int = field(compare=False)
    gain: float = field(compare=False)


class _Grower:
    def __init__(self, binned: BinnedMatrix, grad, hess, params: TreeParams, criterion: str, features):
        self.b = binned
        self.g = grad
        self.h = hess
        self.p = params
        self.lam = params.reg_lambda
        self.gamma = params.gamma
        self.scale = GAIN_SCALE[criterion]
        self.criterion = criterion
        features = np.asarray(features, dtype=np.int64)
        nc = binned.n_codes[features] if features.size else np.zeros(0, dtype=np.int64)
        self.bin_feats = features[nc <= _SORT_PATH_MIN_CODES]
        self.sort_feats = features[nc > _SORT_PATH_MIN_CODES]
        # feature j owns histogram slots [j*stride, (j+1)*stride); padding stays empty.
        # Separate rows keep every feature's prefix sums independent, so two
        # identical columns produce bit-identical gains and the tie-break holds.
        self.stride = int(binned.n_codes[self.bin_feats].max(initial=1))
        self.offsets = np.arange(self.bin_feats.size + 1, dtype=np.int64) * self.stride
        # row-major, pre-offset codes so a node's histogram input is one row gather
        key = tuple(self.bin_feats.tolist())
        cache = binned.__dict__.setdefault("_flat_cache", {})
        if key not in cache:
            cache.clear()
            cache[key] = (binned.codes[:, self.bin_feats] + self.offsets[:-1]).astype(np.intp)
        self.flat_codes = cache[key]
        self.hist: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
        self.unit_hess = bool(np.all(hess == 1.0))
        # node storage
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []
        self.gain: list[float] = []
        self.cover: list[float] = []
        self.count: list[int] = []
        self.depth: list[int] = []
        self.rows: dict[int, np.ndarray] = {}
        self.stats: dict[int, tuple[float, float]] = {}

    def _score(self, G, H):
        return G * G / (H + self.lam)

    def _new_node(self, idx: np.ndarray, depth: int) -> int:
        i = len(self.feature)
        g = self.g[idx]
        G = float(np.sum(g))
        if abs(G) <= 1e-13 * float(np.sum(np.abs(g))):
            G = 0.0  # residuals that cancel up to rounding
        H = float(np.sum(self.h[idx]))
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        denom = H + self.lam
        self.value.append(-G / denom if denom > 0 else 0.0)
        self.gain.append(0.0)
        self.cover.append(H)
        self.count.append(int(idx.size))
        self.depth.append(depth)
        self.rows[i] = idx
        self.stats[i] = (G, H)
        return i

    def _gains(self, GL, HL, G, H):
        with np.errstate(divide="ignore", invalid="ignore"):
            parent = self._score(G, H)
            raw = 0.5 * (self._score(GL, HL) + self._score(G - GL, H - HL) - parent)
        # cancellation noise on splits that change nothing
        tol = 1e-11 * (abs(parent) + np.abs(self._score(GL, HL)) + 1e-300)
        raw = np.where(raw <= tol, 0.0, raw)
        out = self.scale * (raw - self.gamma)
        return np.where(np.isfinite(out), out, -np.inf)

    def _histogram(self, idx):
        flat = self.flat_codes[idx].ravel()
        total = int(self.offsets[-1])
        k = self.bin_feats.size
        hg = np.bincount(flat, weights=np.repeat(self.g[idx], k), minlength=total)
        hc = np.bincount(flat, minlength=total)
        if self.unit_hess:
            hh = hc.astype(float)
        else:
            hh = np.bincount(flat, weights=np.repeat(self.h[idx], k), minlength=total)
        return hg, hh, hc

    def best_split(self, node: int) -> _Split | None:
        idx = self.rows[node]
        m = idx.size
        msl = self.p.min_samples_leaf
        if m < 2 * msl:
            return None
        G, H = self.stats[node]
        g, h = self.g[idx], self.h[idx]
        best: tuple[float, int, int, int] | None = None  # (gain, feature, lo, hi)
        # gains within rounding noise of each other count as ties
        base = 1e-11 * abs(self.scale * self._score(G, H))

        if self.bin_feats.size:
            if node not in self.hist:
                self.hist[node] = self._histogram(idx)
            hg, hh, hc = self.hist[node]
            k, M = self.bin_feats.size, self.stride
            GL = hg.reshape(k, M).cumsum(axis=1).ravel()
            HL = hh.reshape(k, M).cumsum(axis=1).ravel()
            CL = hc.reshape(k, M).cumsum(axis=1).ravel()
            ok = (hc > 0) & (CL >= msl) & (m - CL >= msl)
            if ok.any():
                pos = np.flatnonzero(ok)
                gains = self._gains(GL[pos], HL[pos], G, H)
                top = float(gains.max())
                # first near-max: lowest feature, then lowest code
                j = int(np.argmax(gains >= top - (base + 1e-11 * abs(top))))
                p = int(pos[j])
                f_local, lo = divmod(p, M)
                # first non-empty code to the right inside this feature
                seg_counts = hc[self.offsets[f_local]:self.offsets[f_local + 1]]
                hi = lo + 1 + int(np.flatnonzero(seg_counts[lo + 1:])[0])
                best = (float(gains[j]), int(self.bin_feats[f_local]), lo, hi)

        for f in self.sort_feats:
            c = self.b.codes[idx, f]
            order = np.argsort(c, kind="stable")
            cs = c[order]
            gl = np.cumsum(g[order])[:-1]
            hl = np.cumsum(h[order])[:-1]
            boundary = np.flatnonzero(cs[:-1] != cs[1:])
            cl = boundary + 1
            keep = (cl >= msl) & (m - cl >= msl)
            boundary = boundary[keep]
            if not boundary.size:
                continue
            gains = self._gains(gl[boundary], hl[boundary], G, H)
            top = float(gains.max())
            j = int(np.argmax(gains >= top - (base + 1e-11 * abs(top))))
            cand = (float(gains[j]), int(f), int(cs[boundary[j]]), int(cs[boundary[j] + 1]))
            if best is None:
                best = cand
            else:
                tie = base + 1e-11 * max(abs(cand[0]), abs(best[0]))
                if cand[0] > best[0] + tie or (abs(cand[0] - best[0]) <= tie and cand[1] < best[1]):
                    best = cand

        if best is None or not best[0] > self.p.min_split_gain:
            return None
        gain, f, lo, hi = best
        return _Split((-gain, node), node, f, lo, hi, gain)

    def apply_split(self, s: _Split) -> tuple[int, int]:
        idx = self.rows.pop(s.node)
        go_left = self.b.codes[idx, s.feature] <= s.lo
        d = self.depth[s.node] + 1
        li = self._new_node(idx[go_left], d)
        ri = self._new_node(idx[~go_left], d)
        parent = self.hist.pop(s.node, None)
        if parent is not None and self.can_grow(li) and idx.size >= 2 * self.p.min_samples_leaf + 2:
            # build the smaller child directly, the larger one by subtraction
            small, large = (li, ri) if self.count[li] <= self.count[ri] else (ri, li)
            hs = self._histogram(self.rows[small])
            self.hist[small] = hs
            hl = tuple(p - c for p, c in zip(parent, hs))
            if self.unit_hess:
                hl = (hl[0], hl[2].astype(float), hl[2])
            self.hist[large] = hl
        i = s.node
        self.feature[i] = s.feature
        self.threshold[i] = self.b.threshold(s.feature, s.lo, s.hi)
        self.left[i], self.right[i] = li, ri
        self.gain[i] = s.gain
        return li, ri

    def can_grow(self, node: int) -> bool:
        return self.p.max_depth is None or self.depth[node] < self.p.max_depth

    def grow(self) -> None:
        root = self._new_node(np.arange(self.b.shape[0]), 0)
        max_leaves = self.p.max_leaves
        if self.p.growth == "depth_wise":
            frontier = [root] if self.can_grow(root) else []
            n_leaves = 1
            while frontier:
                nxt = []
                for node in frontier:
                    if max_leaves is not None and n_leaves >= max_leaves:
                        break
                    s = self.best_split(node)
                    if s is None:
                        continue
                    li, ri = self.apply_split(s)
                    n_leaves += 1
                    nxt += [c for c in (li, ri) if self.can_grow(c)]
                frontier = nxt
        else:
            heap: list[_Split] = []
            if self.can_grow(root):
                s = self.best_split(root)
                if s is not None:
                    heap.append(s)
            n_leaves = 1
            while heap and (max_leaves is None or n_leaves < max_leaves):
                s = heapq.heappop(heap)
                li, ri = self.apply_split(s)
                n_leaves += 1
                for c in (li, ri):
                    if self.can_grow(c):
                        cs = self.best_split(c)
                        if cs is not None:
                            heapq.heappush(heap, cs)

    def build(self, params: TreeParams) -> DecisionTree:
        value = np.asarray(self.value, dtype=float)
        cover = np.asarray(self.cover, dtype=float)
        if self.criterion != "newton":
            cover = np.asarray(self.count, dtype=float)
        return DecisionTree(
            feature=np.asarray(self.feature, dtype=np.int64),
            threshold=np.asarray(self.threshold, dtype=float),
            left=np.asarray(self.left, dtype=np.int64),
            right=np.asarray(self.right, dtype=np.int64),
            value=value,
            gain=np.asarray(self.gain, dtype=float),
            cover=cover,
            n_samples=np.asarray(self.count, dtype=np.int64),
            criterion=self.criterion,
            params=params.to_dict(),
        )


def feature_subset(d: int, params: TreeParams, seed: int) -> np.ndarray:
    if params.feature_subsample >= 1.0 or d == 0:
        return np.arange(d)
    k = max(1, int(round(params.feature_subsample * d)))
    return np.sort(rng(seed, "features").choice(d, size=k, replace=False))


def _fit(binned, grad, hess, params, criterion, seed) -> DecisionTree:
    features = feature_subset(binned.shape[1], params, seed)
    grower = _Grower(binned, grad, hess, params, criterion, features)
    grower.grow()
    return grower.build(params)


def _binned(X, params, binned):
    if binned is not None:
        return binned
    return BinnedMatrix(X, params.split_method, params.max_bins)


def fit_newton_tree(X, grad, hess, params: TreeParams | None = None, seed: int = 0,
                    binned: BinnedMatrix | None = None) -> DecisionTree:
    params = params or TreeParams()
    grad = np.asarray(grad, dtype=float)
    hess = np.asarray(hess, dtype=float)
    b = _binned(X, params, binned)
    n = b.shape[0]
    if grad.shape != (n,) or hess.shape != (n,):
        raise InputError("grad and hess must have one entry per row")
    if (hess < 0).any() or not np.isfinite(hess).all() or not np.isfinite(grad).all():
        raise InputError("hessians must be finite and non-negative")
    return _fit(b, grad, hess, params, "newton", seed)


def fit_variance_tree(X, y, params: TreeParams | None = None, seed: int = 0,
                      binned: BinnedMatrix | None = None, criterion: str = "variance") -> DecisionTree:
    """Least-squares CART (``criterion="gini"`` for 0/1 targets)."""
    params = params or TreeParams()
    y = np.asarray(y, dtype=float)
    b = _binned(X, params, binned)
    if y.shape != (b.shape[0],):
        raise InputError("y must have one entry per row")
    if criterion == "gini" and not np.isin(y, (0.0, 1.0)).all():
        raise InputError("gini criterion needs 0/1 targets")
    if criterion not in ("variance", "gini"):
        raise InputError(f"unknown criterion {criterion!r}")
    p = TreeParams(**{**params.to_dict(), "reg_lambda": 0.0, "gamma": 0.0})
    return _fit(b, -y, np.ones_like(y), p, criterion, seed)

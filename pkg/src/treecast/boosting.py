"""Newton gradient-boosting tree engine.

Trees are grown on externally supplied per-observation gradients g and
Hessians h.  Leaf values are second-order steps -G/(H+lambda); splits
maximize the standard proportional gain

    GL^2/(HL+lam) + GR^2/(HR+lam) - (GL+GR)^2/(HL+HR+lam)

with exact (non-histogram) enumeration: numeric candidates are midpoints of
sorted unique values, categorical candidates are prefix groupings of codes
ordered by G/H.  Ties break on lowest feature id, then lowest threshold,
so results are independent of evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, SchemaError

HESS_FLOOR = 1e-6


def floor_hessian(h: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Floor h at HESS_FLOOR on contributing rows; masked rows stay 0."""
    out = np.maximum(h, HESS_FLOOR)
    if mask is not None:
        out = np.where(mask, out, 0.0)
    return out


def leaf_weight(G: float, H: float, lam: float) -> float:
    denom = H + lam
    if denom <= 0.0:
        raise NumericError(f"leaf weight undefined: H+lambda = {denom}")
    return -G / denom


def split_gain(GL: float, HL: float, GR: float, HR: float, lam: float) -> float:
    return (
        GL * GL / (HL + lam)
        + GR * GR / (HR + lam)
        - (GL + GR) ** 2 / (HL + HR + lam)
    )


@dataclass
class TreeParams:
    learning_rate: float = 0.1
    lam: float = 1.0
    max_depth: int = 6
    min_leaf: int = 5
    linear_leaves: bool = False
    linear_ridge: float = 1e-6


class Leaf:
    __slots__ = ("weight", "intercept", "lin_features", "lin_coef")

    def __init__(self, weight, intercept=None, lin_features=None, lin_coef=None):
        self.weight = weight
        self.intercept = intercept          # linear leaf only
        self.lin_features = lin_features    # tuple of feature ids
        self.lin_coef = lin_coef            # tuple of coefficients

    @property
    def is_linear(self):
        return self.intercept is not None

    def value(self, X, idx):
        if not self.is_linear:
            return np.full(len(idx), self.weight)
        out = np.full(len(idx), self.intercept)
        for fid, c in zip(self.lin_features, self.lin_coef):
            out += c * X[idx, fid]
        return out


class Split:
    __slots__ = ("feature", "kind", "threshold", "codes", "left", "right", "gain")

    def __init__(self, feature, kind, threshold, codes, left, right, gain):
        self.feature = feature
        self.kind = kind            # "num" | "cat"
        self.threshold = threshold  # numeric split point
        self.codes = codes          # frozenset of codes routed left
        self.left = left
        self.right = right
        self.gain = gain

    def goes_left(self, X, idx):
        v = X[idx, self.feature]
        if self.kind == "num":
            return v < self.threshold
        return np.isin(v.astype(np.int64), list(self.codes))


def _scan_numeric(v, g, h, c, G, H, C, lam, min_leaf):
    """Best midpoint split of one numeric feature; returns (gain, thr) or None."""
    order = np.argsort(v, kind="stable")
    sv = v[order]
    cg = np.cumsum(g[order])
    ch = np.cumsum(h[order])
    cc = np.cumsum(c[order])
    cut = np.nonzero(sv[:-1] != sv[1:])[0]
    if len(cut) == 0:
        return None
    GL, HL, CL = cg[cut], ch[cut], cc[cut]
    GR, HR, CR = G - GL, H - HL, C - CL
    gains = GL * GL / (HL + lam) + GR * GR / (HR + lam) - G * G / (H + lam)
    ok = (CL >= min_leaf) & (CR >= min_leaf)
    if not ok.any():
        return None
    gains = np.where(ok, gains, -np.inf)
    best = int(np.argmax(gains))  # first occurrence = lowest threshold
    thr = 0.5 * (sv[cut[best]] + sv[cut[best] + 1])
    return float(gains[best]), float(thr)


def _scan_categorical(v, g, h, c, G, H, C, lam, min_leaf):
    """Best prefix grouping of codes ordered by G/H; returns (gain, codes) or None."""
    codes = v.astype(np.int64)
    uniq, inverse = np.unique(codes, return_inverse=True)
    if len(uniq) < 2:
        return None
    Gc = np.bincount(inverse, weights=g)
    Hc = np.bincount(inverse, weights=h)
    Cc = np.bincount(inverse, weights=c)
    ratio = np.where(Hc > 0, Gc / np.maximum(Hc, 1e-300), 0.0)
    order = np.lexsort((uniq, ratio))  # ratio asc, code asc on ties
    GL = np.cumsum(Gc[order])[:-1]
    HL = np.cumsum(Hc[order])[:-1]
    CL = np.cumsum(Cc[order])[:-1]
    GR, HR, CR = G - GL, H - HL, C - CL
    gains = GL * GL / (HL + lam) + GR * GR / (HR + lam) - G * G / (H + lam)
    ok = (CL >= min_leaf) & (CR >= min_leaf)
    if not ok.any():
        return None
    gains = np.where(ok, gains, -np.inf)
    best = int(np.argmax(gains))
    left_codes = frozenset(int(uniq[j]) for j in order[: best + 1])
    return float(gains[best]), left_codes


def fit_linear_leaf(Xn, feature_ids, g, h, lam, ridge):
    """Weighted ridge fit of an affine response in the leaf.

    Minimizes sum_i h_i (g_i/h_i + f(x_i))^2 + ridge*||coef||^2 with
    f(x) = b0 + coef.x; the intercept carries the ensemble lambda so that
    with no usable features it reduces to the constant Newton step.
    Returns (intercept, feature_ids, coef, ok) and falls back to the
    constant leaf on rank deficiency (ok=False).
    """
    G, H = g.sum(), h.sum()
    const = leaf_weight(G, H, lam)
    keep = [j for j in range(Xn.shape[1]) if np.ptp(Xn[:, j]) > 0]
    if not keep or len(g) < 2:
        return const, (), (), True
    Z = np.column_stack([np.ones(len(g))] + [Xn[:, j] for j in keep])
    reg = np.diag([lam] + [ridge] * len(keep))
    A = (Z * h[:, None]).T @ Z + reg
    b = -Z.T @ g
    try:
        beta = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        return const, (), (), False
    if not np.all(np.isfinite(beta)):
        return const, (), (), False
    fids = tuple(feature_ids[j] for j in keep)
    return float(beta[0]), fids, tuple(float(b_) for b_ in beta[1:]), True


def grow_tree(X, kinds, g, h, idx, params: TreeParams, counts=None, log=None):
    """Grow one tree by greedy gain maximization.

    ``idx`` selects the training rows; ``counts`` (0/1 per row) says which
    rows count toward min_leaf (masked rows carry g=h=0 and count 0).
    Splits require positive gain and min_leaf on both children; depth is
    limited by params.max_depth.
    """
    if counts is None:
        counts = np.ones(len(g))
    numeric_fids = [f for f, k in enumerate(kinds) if k == "num"]

    def build(node_idx, depth, path_features):
        gg, hh, cc = g[node_idx], h[node_idx], counts[node_idx]
        G, H, C = gg.sum(), hh.sum(), cc.sum()
        best = None  # (gain, fid, kind, payload)
        if depth < params.max_depth:
            for fid in range(len(kinds)):
                v = X[node_idx, fid]
                if kinds[fid] == "num":
                    found = _scan_numeric(v, gg, hh, cc, G, H, C, params.lam, params.min_leaf)
                    payload_kind = "num"
                else:
                    found = _scan_categorical(v, gg, hh, cc, G, H, C, params.lam, params.min_leaf)
                    payload_kind = "cat"
                if found is None:
                    continue
                gain, payload = found
                if best is None or gain > best[0]:
                    best = (gain, fid, payload_kind, payload)
        if best is None or best[0] <= 0.0:
            return _make_leaf(node_idx, gg, hh, path_features)
        gain, fid, kind, payload = best
        if kind == "num":
            left_sel = X[node_idx, fid] < payload
            split = Split(fid, "num", payload, None, None, None, gain)
        else:
            left_sel = np.isin(X[node_idx, fid].astype(np.int64), list(payload))
            split = Split(fid, "cat", None, payload, None, None, gain)
        child_path = path_features | {fid} if kinds[fid] == "num" else path_features
        split.left = build(node_idx[left_sel], depth + 1, child_path)
        split.right = build(node_idx[~left_sel], depth + 1, child_path)
        return split

    def _make_leaf(node_idx, gg, hh, path_features):
        if params.linear_leaves:
            fids = sorted(path_features)
            Xn = X[np.ix_(node_idx, fids)] if fids else np.zeros((len(node_idx), 0))
            b0, lin_fids, coef, ok = fit_linear_leaf(
                Xn, fids, gg, hh, params.lam, params.linear_ridge
            )
            if not ok and log is not None:
                log.append("linear leaf fell back to constant (singular system)")
            if lin_fids:
                return Leaf(b0, intercept=b0, lin_features=lin_fids, lin_coef=coef)
            return Leaf(b0)
        return Leaf(leaf_weight(gg.sum(), hh.sum(), params.lam))

    return build(np.asarray(idx), 0, set())


def tree_values(node, X, idx=None):
    """Evaluate one tree on rows idx of X."""
    if idx is None:
        idx = np.arange(X.shape[0])
    out = np.empty(len(idx))

    def walk(node, sub, pos):
        if isinstance(node, Leaf):
            out[pos] = node.value(X, sub)
            return
        left = node.goes_left(X, sub)
        if left.any():
            walk(node.left, sub[left], pos[left])
        if not left.all():
            walk(node.right, sub[~left], pos[~left])

    walk(node, np.asarray(idx), np.arange(len(idx)))
    return out


def tree_gain_by_feature(node, acc):
    if isinstance(node, Split):
        acc[node.feature] = acc.get(node.feature, 0.0) + node.gain
        tree_gain_by_feature(node.left, acc)
        tree_gain_by_feature(node.right, acc)
    return acc


class TreeEnsemble:
    """Ordered additive ensemble: prediction = base + sum(lr * tree(x)).

    Appending a tree never mutates earlier trees; a trained ensemble is
    immutable for prediction purposes and shareable across threads.
    """

    def __init__(self, params: TreeParams, base: float = 0.0, n_features: int | None = None):
        self.params = params
        self.base = base
        self.n_features = n_features
        self.trees: list = []

    def predict(self, X: np.ndarray) -> np.ndarray:
        if self.n_features is not None and X.shape[1] != self.n_features:
            raise SchemaError(
                f"ensemble expects {self.n_features} features, got {X.shape[1]}"
            )
        out = np.full(X.shape[0], self.base, dtype=np.float64)
        for tree in self.trees:
            out += self.params.learning_rate * tree_values(tree, X)
        return out

    def boost_round(self, X, kinds, g, h, counts=None, log=None):
        """Append one tree grown on (g, h); g must match current predictions."""
        if self.n_features is None:
            self.n_features = X.shape[1]
        tree = grow_tree(X, kinds, g, h, np.arange(X.shape[0]), self.params, counts, log)
        self.trees.append(tree)
        return tree

    def gain_importances(self) -> dict:
        acc: dict = {}
        for tree in self.trees:
            tree_gain_by_feature(tree, acc)
        return acc

    # -- persistence ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "base": self.base,
            "n_features": self.n_features,
            "learning_rate": self.params.learning_rate,
            "lambda": self.params.lam,
            "max_depth": self.params.max_depth,
            "min_leaf": self.params.min_leaf,
            "linear_leaves": self.params.linear_leaves,
            "linear_ridge": self.params.linear_ridge,
            "trees": [_node_to_dict(t) for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeEnsemble":
        params = TreeParams(
            learning_rate=d["learning_rate"],
            lam=d["lambda"],
            max_depth=d["max_depth"],
            min_leaf=d["min_leaf"],
            linear_leaves=d["linear_leaves"],
            linear_ridge=d["linear_ridge"],
        )
        ens = cls(params, base=d["base"], n_features=d["n_features"])
        ens.trees = [_node_from_dict(t) for t in d["trees"]]
        return ens


def _node_to_dict(node):
    if isinstance(node, Leaf):
        d = {"type": "leaf", "weight": node.weight}
        if node.is_linear:
            d["intercept"] = node.intercept
            d["lin_features"] = list(node.lin_features)
            d["lin_coef"] = list(node.lin_coef)
        return d
    d = {
        "type": "split",
        "feature": node.feature,
        "kind": node.kind,
        "gain": node.gain,
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
    }
    if node.kind == "num":
        d["threshold"] = node.threshold
    else:
        d["codes"] = sorted(node.codes)
    return d


def _node_from_dict(d):
    if d["type"] == "leaf":
        if "intercept" in d:
            return Leaf(
                d["weight"],
                intercept=d["intercept"],
                lin_features=tuple(d["lin_features"]),
                lin_coef=tuple(d["lin_coef"]),
            )
        return Leaf(d["weight"])
    return Split(
        d["feature"],
        d["kind"],
        d.get("threshold"),
        frozenset(d["codes"]) if d["kind"] == "cat" else None,
        _node_from_dict(d["left"]),
        _node_from_dict(d["right"]),
        d["gain"],
    )

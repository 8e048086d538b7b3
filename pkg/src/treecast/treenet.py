"""Hybrid model: tree ensembles emit low-dimensional embeddings, a fixed
random projection expands them, and a shallow MLP decodes them into the
target-model parameters.

The projection matrix is sampled once from a standard Normal and frozen for
the model's lifetime.  Training is joint, full-batch (no batching), under
one of two gradient flows: "separate" (default) updates the network first,
then recomputes the loss in eval mode and grows one tree per embedding
dimension on the loss gradients with respect to the embeddings; "shared"
uses a single training-mode pass for both updates, reusing one dropout
mask.
"""

from __future__ import annotations

import math
import time

import numpy as np

from .boosting import HESS_FLOOR, TreeEnsemble, tree_values
from .data import PanelDataset
from .errors import NumericError, SchemaError
from .hypertree import BoostConfig, FeatureRecipe, TrainLog
from .targets import Objective, TargetSpec, link_slope, link_values


class NetConfig:
    def __init__(self, d=1, k=None, hidden=128, dropout=0.1, lr=1e-3,
                 betas=(0.9, 0.999), flow="separate", use_projection=True,
                 encoder="trees"):
        if flow not in ("separate", "shared"):
            raise ValueError(f"unknown gradient flow {flow!r}")
        if encoder not in ("trees", "features"):
            raise ValueError(f"unknown encoder {encoder!r}")
        self.d = d
        self.k = k
        self.hidden = hidden
        self.dropout = dropout
        self.lr = lr
        self.betas = betas
        self.flow = flow
        self.use_projection = use_projection
        self.encoder = encoder

    def to_dict(self):
        return {
            "d": self.d, "k": self.k, "hidden": self.hidden,
            "dropout": self.dropout, "lr": self.lr, "betas": list(self.betas),
            "flow": self.flow, "use_projection": self.use_projection,
            "encoder": self.encoder,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["betas"] = tuple(d["betas"])
        return cls(**d)


class MlpScratch:
    """Reusable full-batch work buffers (allocation is costly at N x hidden).

    Only one forward cache may be live at a time; the training loops respect
    that by finishing each backward/directional pass before the next forward.
    """

    def __init__(self, n, hidden, out):
        self.a = np.empty((n, hidden))
        self.r = np.empty((n, hidden))
        self.o = np.empty((n, out))
        self.bwd_do = np.empty((n, out))
        self.bwd_dr = np.empty((n, hidden))
        self.bwd_da = np.empty((n, hidden))
        self.dir_dr = np.empty((n, hidden))
        self.dir_do = np.empty((n, out))


class Mlp:
    """linear(k -> hidden) -> ReLU -> linear(hidden -> P) -> dropout.

    Dropout acts on the output layer and only in training mode (inverted
    scaling).  Weights and biases start uniform with fan-in scaling and are
    kept in (in, out) orientation so every matmul output is C-contiguous.
    """

    def __init__(self, k, hidden, out, rng: np.random.Generator):
        s1 = 1.0 / math.sqrt(k)
        s2 = 1.0 / math.sqrt(hidden)
        self.W1 = rng.uniform(-s1, s1, size=(k, hidden))
        self.b1 = rng.uniform(-s1, s1, size=hidden)
        self.W2 = rng.uniform(-s2, s2, size=(hidden, out))
        self.b2 = rng.uniform(-s2, s2, size=out)
        self._adam = None

    def forward(self, z, dropout=0.0, rng=None, scratch: MlpScratch | None = None):
        """Returns (output, cache); pass dropout > 0 only in training mode."""
        if scratch is None:
            a = z @ self.W1 + self.b1
            r = np.maximum(a, 0.0)
            o = r @ self.W2 + self.b2
        else:
            a, r, o = scratch.a, scratch.r, scratch.o
            np.matmul(z, self.W1, out=a)
            np.add(a, self.b1, out=a)
            np.maximum(a, 0.0, out=r)
            np.matmul(r, self.W2, out=o)
            np.add(o, self.b2, out=o)
        drop_scale = None
        if dropout > 0.0:
            keep = (rng.random(o.shape) >= dropout).astype(np.float64)
            drop_scale = keep / (1.0 - dropout)
            if scratch is None:
                o = o * drop_scale
            else:
                np.multiply(o, drop_scale, out=o)
        return o, (z, a, r, drop_scale)

    def backward(self, cache, upstream, scratch: MlpScratch | None = None):
        """Gradients of the scalar loss w.r.t. weights, given dL/d(output)."""
        z, a, r, drop_scale = cache
        if scratch is None:
            do = upstream if drop_scale is None else upstream * drop_scale
            dr = do @ self.W2.T
            da = dr * (a > 0)
        else:
            if drop_scale is None:
                do = upstream
            else:
                do = scratch.bwd_do
                np.multiply(upstream, drop_scale, out=do)
            dr, da = scratch.bwd_dr, scratch.bwd_da
            np.matmul(do, self.W2.T, out=dr)
            np.multiply(dr, a > 0, out=da)
        dW2 = r.T @ do
        db2 = do.sum(axis=0)
        dW1 = z.T @ da
        db1 = da.sum(axis=0)
        return dW1, db1, dW2, db2

    def directional(self, cache, dz, scratch: MlpScratch | None = None):
        """d(output)/d(epsilon) for an input perturbation z + eps*dz per row.

        dz is a (k,) direction shared by all rows; returns (N, P).
        """
        _, a, _, drop_scale = cache
        da = dz @ self.W1
        if scratch is None:
            dr = (a > 0) * da
            do = dr @ self.W2
            if drop_scale is not None:
                do = do * drop_scale
            return do
        dr, do = scratch.dir_dr, scratch.dir_do
        np.multiply(a > 0, da, out=dr)
        np.matmul(dr, self.W2, out=do)
        if drop_scale is not None:
            np.multiply(do, drop_scale, out=do)
        return do

    def adam_step(self, grads, lr, betas=(0.9, 0.999), eps=1e-8):
        params = [self.W1, self.b1, self.W2, self.b2]
        if self._adam is None:
            self._adam = {
                "m": [np.zeros_like(p) for p in params],
                "v": [np.zeros_like(p) for p in params],
                "t": 0,
            }
        st = self._adam
        st["t"] += 1
        b1, b2 = betas
        for p, gr, m, v in zip(params, grads, st["m"], st["v"]):
            m *= b1
            m += (1 - b1) * gr
            v *= b2
            v += (1 - b2) * gr * gr
            mhat = m / (1 - b1 ** st["t"])
            vhat = v / (1 - b2 ** st["t"])
            p -= lr * mhat / (np.sqrt(vhat) + eps)

    def to_dict(self):
        return {
            "W1": self.W1.tolist(), "b1": self.b1.tolist(),
            "W2": self.W2.tolist(), "b2": self.b2.tolist(),
        }

    def load_weights(self, d):
        self.W1 = np.asarray(d["W1"], dtype=np.float64)
        self.b1 = np.asarray(d["b1"], dtype=np.float64)
        self.W2 = np.asarray(d["W2"], dtype=np.float64)
        self.b2 = np.asarray(d["b2"], dtype=np.float64)


class TreeNetModel:
    def __init__(self, spec: TargetSpec, ensembles, projection, mlp, net_cfg: NetConfig,
                 recipe: FeatureRecipe, feature_names, feature_kinds, seed,
                 feat_center=None, feat_scale=None):
        self.spec = spec
        self.ensembles = ensembles          # one per embedding dimension
        self.projection = projection        # (k, d) or None
        self.mlp = mlp
        self.net_cfg = net_cfg
        self.recipe = recipe
        self.feature_names = tuple(feature_names)
        self.feature_kinds = tuple(feature_kinds)
        self.seed = seed
        self.feat_center = feat_center      # feature-encoder mode only
        self.feat_scale = feat_scale

    def check_schema(self, names):
        if tuple(names) != self.feature_names:
            raise SchemaError(
                f"feature schema mismatch: model has {self.feature_names}, data has {tuple(names)}"
            )

    def embeddings(self, X: np.ndarray) -> np.ndarray:
        if self.net_cfg.encoder == "features":
            return (X - self.feat_center) / self.feat_scale
        if not self.ensembles:
            return np.zeros((X.shape[0], 0))
        return np.column_stack([e.predict(X) for e in self.ensembles])

    def project(self, E: np.ndarray) -> np.ndarray:
        return E @ self.projection.T if self.projection is not None else E

    def forward(self, X, training=False, rng=None):
        """(embeddings, raw parameters); dropout active only when training."""
        E = self.embeddings(X)
        z = self.project(E)
        dropout = self.net_cfg.dropout if training else 0.0
        o, cache = self.mlp.forward(z, dropout=dropout, rng=rng)
        return E, o, cache

    def predict_parameters(self, X: np.ndarray):
        _, raw, _ = self.forward(X, training=False)
        return raw, link_values(self.spec, raw)

    def to_dict(self):
        return {
            "family": "treenet",
            "spec": self.spec.to_dict(),
            "net": self.net_cfg.to_dict(),
            "recipe": self.recipe.to_dict(),
            "feature_names": list(self.feature_names),
            "feature_kinds": list(self.feature_kinds),
            "seed": self.seed,
            "projection": None if self.projection is None else self.projection.tolist(),
            "mlp": self.mlp.to_dict(),
            "ensembles": [e.to_dict() for e in self.ensembles],
            "feat_center": None if self.feat_center is None else self.feat_center.tolist(),
            "feat_scale": None if self.feat_scale is None else self.feat_scale.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        spec = TargetSpec.from_dict(d["spec"])
        net_cfg = NetConfig.from_dict(d["net"])
        mlp = Mlp(1, 1, 1, np.random.default_rng(0))
        mlp.load_weights(d["mlp"])
        return cls(
            spec,
            [TreeEnsemble.from_dict(e) for e in d["ensembles"]],
            None if d["projection"] is None else np.asarray(d["projection"], dtype=np.float64),
            mlp,
            net_cfg,
            FeatureRecipe.from_dict(d["recipe"]),
            d["feature_names"],
            d["feature_kinds"],
            d["seed"],
            None if d["feat_center"] is None else np.asarray(d["feat_center"]),
            None if d["feat_scale"] is None else np.asarray(d["feat_scale"]),
        )


def embedding_grad_hess(model: TreeNetModel, objective: Objective, cache,
                        raw, g_theta, h_theta, scratch: MlpScratch | None = None):
    """Loss derivatives with respect to each embedding coordinate.

    Gradient is the exact chain rule through the (frozen) MLP, projection and
    target model.  Curvature is Gauss-Newton: through the fitted values when
    the target is row-local, otherwise transported from the per-parameter
    curvature; floored at HESS_FLOOR on contributing rows.
    """
    d = len(model.ensembles) if model.net_cfg.encoder == "trees" else cache[0].shape[1]
    N = raw.shape[0]
    ge = np.zeros((N, d))
    he = np.zeros((N, d))
    slopes = link_slope(model.spec, raw)
    basis = objective.local_fitted_jacobian(raw)
    if basis is not None:
        basis = basis * slopes
    w = objective.weight
    for j in range(d):
        if model.projection is not None:
            dz = model.projection[:, j]
        else:
            dz = np.zeros(cache[0].shape[1])
            dz[j] = 1.0
        dthetadE = model.mlp.directional(cache, dz, scratch)  # (N, P), raw scale
        ge[:, j] = np.einsum("np,np->n", g_theta, dthetadE)
        if basis is not None:
            dy = np.einsum("np,np->n", basis, dthetadE)
            he[:, j] = 2.0 * dy * dy
        else:
            he[:, j] = np.einsum("np,np->n", h_theta, dthetadE * dthetadE)
    ge = np.where(w[:, None], ge, 0.0)
    he = np.where(w[:, None], np.maximum(he, HESS_FLOOR), 0.0)
    return ge, he


def train(ds: PanelDataset, spec: TargetSpec, boost_cfg: BoostConfig,
          net_cfg: NetConfig, seed: int = 0,
          recipe: FeatureRecipe | None = None) -> tuple[TreeNetModel, TrainLog]:
    """Joint full-batch training of trees and network.

    Every iteration consumes all rows (no batching).  "separate" flow:
    network step in training mode, then tree step against the eval-mode
    loss.  "shared" flow: one training-mode pass feeds both updates.
    """
    recipe = recipe or FeatureRecipe()
    fs = recipe.build(ds)
    objective = Objective(ds, spec)
    P = spec.param_count
    d = net_cfg.d if net_cfg.encoder == "trees" else fs.n_features
    k = net_cfg.k or P
    if not net_cfg.use_projection:
        k = d

    root = np.random.SeedSequence(seed)
    ss_proj, ss_mlp, ss_drop = root.spawn(3)
    projection = None
    if net_cfg.use_projection:
        projection = np.random.default_rng(ss_proj).standard_normal((k, d))
    mlp = Mlp(k, net_cfg.hidden, P, np.random.default_rng(ss_mlp))
    drop_rng = np.random.default_rng(ss_drop)

    params = boost_cfg.tree_params()
    ensembles = []
    feat_center = feat_scale = None
    if net_cfg.encoder == "trees":
        ensembles = [TreeEnsemble(params, base=0.0, n_features=fs.n_features)
                     for _ in range(d)]
        E = np.zeros((ds.n_rows, d))
    else:
        feat_center = fs.X.mean(axis=0)
        feat_scale = np.where(fs.X.std(axis=0) > 0, fs.X.std(axis=0), 1.0)
        E = (fs.X - feat_center) / feat_scale

    model = TreeNetModel(spec, ensembles, projection, mlp, net_cfg, recipe,
                         fs.names, fs.kinds, seed, feat_center, feat_scale)
    counts = objective.weight.astype(np.float64)
    n_w = objective.n_weight
    scratch = MlpScratch(ds.n_rows, net_cfg.hidden, P)
    log = TrainLog()
    t0 = time.perf_counter()

    for it in range(1, boost_cfg.rounds + 1):
        z = model.project(E)
        if net_cfg.flow == "separate":
            # network step (training mode, dropout active)
            o, cache = mlp.forward(z, dropout=net_cfg.dropout, rng=drop_rng,
                                   scratch=scratch)
            loss_net, g_theta, _, _ = objective.evaluate(o)
            if not math.isfinite(loss_net):
                raise NumericError(f"non-finite network loss at iteration {it}")
            grads = mlp.backward(cache, g_theta / n_w, scratch)
            mlp.adam_step(grads, net_cfg.lr, net_cfg.betas)
            # tree step (eval mode, recomputed loss)
            o2, cache2 = mlp.forward(z, scratch=scratch)
            loss, g_theta, h_theta, _ = objective.evaluate(o2)
            tree_cache, tree_raw = cache2, o2
        else:
            o, cache = mlp.forward(z, dropout=net_cfg.dropout, rng=drop_rng,
                                   scratch=scratch)
            loss, g_theta, h_theta, _ = objective.evaluate(o)
            grads = mlp.backward(cache, g_theta / n_w, scratch)
            ge_he = embedding_grad_hess(model, objective, cache, o,
                                        g_theta, h_theta, scratch)
            mlp.adam_step(grads, net_cfg.lr, net_cfg.betas)
            tree_cache, tree_raw = cache, o
        if not math.isfinite(loss):
            raise NumericError(f"non-finite training loss at iteration {it}")
        if net_cfg.encoder == "trees":
            if net_cfg.flow == "separate":
                ge, he = embedding_grad_hess(model, objective, tree_cache,
                                             tree_raw, g_theta, h_theta, scratch)
            else:
                ge, he = ge_he
            for j in range(d):
                tree = ensembles[j].boost_round(fs.X, fs.kinds, ge[:, j], he[:, j],
                                                counts, log.notes)
                E[:, j] += boost_cfg.learning_rate * tree_values(tree, fs.X)
        log.append(it, loss / n_w, time.perf_counter() - t0)
    return model, log

"""One-vs-all trainer: one boosted ensemble per target-model parameter.

Each round evaluates the target model once, takes the per-parameter
gradients/Hessians of the loss with respect to the raw parameters, and
grows one tree per parameter against that shared start-of-round state
(synchronous updates).  Prediction for parameter j is
base_raw[j] + ensembles[j](x), chained through the link.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .boosting import TreeEnsemble, TreeParams, tree_values
from .data import PanelDataset, feature_matrix, future_panel
from .errors import NumericError, SchemaError
from .targets import Objective, TargetSpec, default_base_raw, link_values


@dataclass
class BoostConfig:
    rounds: int = 100
    learning_rate: float = 0.1
    lam: float = 1.0
    max_depth: int = 6
    min_leaf: int = 5
    linear_leaves: bool = False
    linear_ridge: float = 1e-6

    def tree_params(self) -> TreeParams:
        return TreeParams(
            learning_rate=self.learning_rate,
            lam=self.lam,
            max_depth=self.max_depth,
            min_leaf=self.min_leaf,
            linear_leaves=self.linear_leaves,
            linear_ridge=self.linear_ridge,
        )


@dataclass
class FeatureRecipe:
    """How the model feature matrix is assembled from a panel."""

    calendar: tuple = ("month", "quarter", "year", "day_of_week")
    include_time: bool = False

    def build(self, ds: PanelDataset):
        return feature_matrix(ds, calendar=self.calendar, include_time=self.include_time)

    def to_dict(self):
        return {"calendar": list(self.calendar), "include_time": self.include_time}

    @classmethod
    def from_dict(cls, d):
        return cls(calendar=tuple(d["calendar"]), include_time=d["include_time"])


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)  # (round, mean_loss, seconds)
    notes: list = field(default_factory=list)

    def append(self, rnd, loss, seconds):
        self.rows.append((rnd, loss, seconds))

    @property
    def losses(self):
        return [r[1] for r in self.rows]


class HyperTreeModel:
    def __init__(self, spec: TargetSpec, ensembles, base_raw, recipe: FeatureRecipe,
                 feature_names, feature_kinds):
        self.spec = spec
        self.ensembles = ensembles
        self.base_raw = np.asarray(base_raw, dtype=np.float64)
        self.recipe = recipe
        self.feature_names = tuple(feature_names)
        self.feature_kinds = tuple(feature_kinds)

    def check_schema(self, names):
        if tuple(names) != self.feature_names:
            raise SchemaError(
                f"feature schema mismatch: model has {self.feature_names}, data has {tuple(names)}"
            )

    def predict_raw(self, X: np.ndarray) -> np.ndarray:
        cols = [self.base_raw[j] + self.ensembles[j].predict(X)
                for j in range(len(self.ensembles))]
        return np.column_stack(cols)

    def predict_parameters(self, X: np.ndarray):
        """(raw, linked values), both (N, P)."""
        raw = self.predict_raw(X)
        return raw, link_values(self.spec, raw)

    def gain_importances(self) -> list:
        return [ens.gain_importances() for ens in self.ensembles]

    def to_dict(self) -> dict:
        return {
            "family": "hypertree",
            "spec": self.spec.to_dict(),
            "base_raw": [float(b) for b in self.base_raw],
            "recipe": self.recipe.to_dict(),
            "feature_names": list(self.feature_names),
            "feature_kinds": list(self.feature_kinds),
            "ensembles": [e.to_dict() for e in self.ensembles],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HyperTreeModel":
        return cls(
            TargetSpec.from_dict(d["spec"]),
            [TreeEnsemble.from_dict(e) for e in d["ensembles"]],
            np.asarray(d["base_raw"], dtype=np.float64),
            FeatureRecipe.from_dict(d["recipe"]),
            d["feature_names"],
            d["feature_kinds"],
        )


def train(ds: PanelDataset, spec: TargetSpec, config: BoostConfig,
          recipe: FeatureRecipe | None = None) -> tuple[HyperTreeModel, TrainLog]:
    """Fit one ensemble per parameter by Newton boosting on the target loss."""
    recipe = recipe or FeatureRecipe()
    fs = recipe.build(ds)
    objective = Objective(ds, spec)
    P = spec.param_count
    base = default_base_raw(spec, ds)
    params = config.tree_params()
    ensembles = [TreeEnsemble(params, base=0.0, n_features=fs.n_features) for _ in range(P)]
    raw = np.tile(base, (ds.n_rows, 1))
    counts = objective.weight.astype(np.float64)
    log = TrainLog()

    t0 = time.perf_counter()
    loss, g, h, _ = objective.evaluate(raw)
    for rnd in range(1, config.rounds + 1):
        if not math.isfinite(loss):
            raise NumericError(f"non-finite training loss at round {rnd}")
        for j in range(P):
            tree = ensembles[j].boost_round(fs.X, fs.kinds, g[:, j], h[:, j],
                                            counts, log.notes)
            raw[:, j] += config.learning_rate * tree_values(tree, fs.X)
        loss, g, h, _ = objective.evaluate(raw)
        log.append(rnd, loss / objective.n_weight, time.perf_counter() - t0)

    model = HyperTreeModel(spec, ensembles, base, recipe, fs.names, fs.kinds)
    return model, log


def average_parameters(values: np.ndarray) -> np.ndarray:
    """Replace per-step parameters with their horizon mean (held constant)."""
    mean = values.mean(axis=0)
    return np.tile(mean, (values.shape[0], 1))


def forecast(model, ds: PanelDataset, h: int, average: bool = False) -> dict:
    """Per-series h-step forecasts from any parameter-producing model.

    ``model`` needs predict_parameters / recipe / spec / check_schema, which
    both the per-parameter and the embedding-decoder models provide.  With
    ``average`` the horizon's parameters are averaged and held constant
    (autoregressive targets only).
    """
    from .targets import ar_forecast_recursive, ets_filter, ets_forecast, stl_components

    if h == 0:
        return {s.series_id: (np.empty(0), []) for s in ds.series}
    spec = model.spec
    fut = future_panel(ds, h)
    fs_future = model.recipe.build(fut)
    model.check_schema(fs_future.names)
    _, values_f = model.predict_parameters(fs_future.X)
    out = {}

    if spec.kind in ("ets", "ets_linear"):
        fs_train = model.recipe.build(ds)
        _, values_t = model.predict_parameters(fs_train.X)
        objective = Objective(ds, spec)

    for i, s in enumerate(ds.series):
        rows = ds.rows_of(i)
        frows = fut.rows_of(i)
        vals_f = values_f[frows]
        if average:
            if spec.kind != "ar":
                raise NumericError("parameter averaging applies to autoregressive targets only")
            vals_f = average_parameters(vals_f)
        if spec.kind == "ar":
            history = ds.y[rows][ds.mask[rows]]
            fc = ar_forecast_recursive(vals_f, history, h)
        elif spec.kind in ("ets", "ets_linear"):
            _, state = ets_filter(ds.y[rows], values_t[rows], spec,
                                  objective._inits[i], ds.mask[rows], s.series_id)
            phi = vals_f[:, 3] if spec.kind == "ets" else np.ones(h)
            fc = ets_forecast(state, phi, h, spec)
        elif spec.kind == "stl":
            _, _, fc = stl_components(vals_f, fut.time_index[frows], spec)
        else:  # direct
            fc = vals_f[:, 0]
        out[s.series_id] = (fc, list(fut.series[i].timestamps))
    return out

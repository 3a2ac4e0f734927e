"""Uniform fit / predict wrappers over the baseline, forest and INR regressors."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from .. import inr
from . import forest as rf
from .baselines import fit_baseline
from .forest import ForestConfig, UncertainPrediction

MODEL_KINDS = ("linear", "polynomial", "forest", "inr")

# RUL regressor: full-batch training needs a larger step than the per-curve default
DEFAULT_REGRESSOR_INR = inr.InrConfig(
    variant="mlp_posenc",
    posenc_frequencies=2,
    epochs=inr.RUL_EPOCHS,
    learning_rate=1e-2,
)
PATIENCE = 10
MC_PASSES = 50


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "forest"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelSpec":
        unknown = set(doc) - {"kind", "params"}
        if unknown:
            raise ValueError(f"unknown model spec keys: {sorted(unknown)}")
        return cls(doc.get("kind", "forest"), dict(doc.get("params", {})))

    def with_seed(self, seed: int) -> "ModelSpec":
        if self.kind in ("forest", "inr") and "seed" not in self.params:
            return ModelSpec(self.kind, {**self.params, "seed": seed})
        return self


def _config(cls, base, params: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(params) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return replace(base, **params)


@dataclass
class InrRegressor:
    model: inr.InrModel
    report: inr.TrainingReport

    def predict(self, X) -> np.ndarray:
        return inr.forward(self.model, X)[:, 0]

    def predict_uncertain(self, X, passes: int = MC_PASSES, seed: int = 0) -> UncertainPrediction:
        mean, var = inr.mc_dropout_predict(self.model, X, passes, seed)
        return UncertainPrediction(mean[:, 0], np.sqrt(var[:, 0]), "mc_dropout")


def fit_inr_regressor(X, y, cfg: inr.InrConfig = DEFAULT_REGRESSOR_INR, groups=None, patience: int = PATIENCE) -> InrRegressor:
    """Feature vector -> target INR with early stopping on held-out groups.

    With ``groups`` (cell ids) given, a fifth of the groups, chosen from the
    config seed, forms the validation set; otherwise every fifth row does.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1, 1)
    cfg = replace(cfg, input_dim=X.shape[1], output_dim=1)
    n = len(X)
    if groups is not None:
        uniq = list(dict.fromkeys(groups))
        rng = np.random.default_rng([cfg.seed, 2])
        n_val = max(1, len(uniq) // 5) if len(uniq) >= 5 else 0
        held = set(rng.permutation(len(uniq))[:n_val].tolist())
        val = np.array([uniq.index(g) in held for g in groups]) if n_val else np.zeros(n, bool)
    else:
        _, vi = inr.interleaved_split(n, 0.2)
        val = np.zeros(n, bool)
        val[vi] = True
    if val.all() or not val.any():
        model, report = inr.train(inr.init_model(cfg), (X, y))
    else:
        model, report = inr.train(inr.init_model(cfg), (X[~val], y[~val]), (X[val], y[val]), patience=patience)
    return InrRegressor(model, report)


@dataclass
class FittedModel:
    spec: ModelSpec
    impl: object

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.spec.kind == "forest":
            return rf.predict(self.impl, X)
        return self.impl.predict(X)

    def predict_uncertain(self, X) -> UncertainPrediction:
        if self.spec.kind == "forest":
            return rf.predict_with_variance(self.impl, X)
        if self.spec.kind == "inr":
            return self.impl.predict_uncertain(X)
        raise ValueError(f"{self.spec.kind} models have no uncertainty estimate")


def fit_model(spec: ModelSpec, X, y, groups=None) -> FittedModel:
    p = dict(spec.params)
    if spec.kind == "linear":
        return FittedModel(spec, fit_baseline(X, y, "linear"))
    if spec.kind == "polynomial":
        return FittedModel(spec, fit_baseline(X, y, "polynomial", int(p.get("degree", 2))))
    if spec.kind == "forest":
        return FittedModel(spec, rf.fit_forest(X, y, _config(ForestConfig, ForestConfig(), p)))
    patience = int(p.pop("patience", PATIENCE))
    cfg = _config(inr.InrConfig, DEFAULT_REGRESSOR_INR, {k: v for k, v in p.items() if k not in ("input_dim", "output_dim")})
    return FittedModel(spec, fit_inr_regressor(X, y, cfg, groups, patience))

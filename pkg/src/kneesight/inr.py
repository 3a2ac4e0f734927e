"""Coordinate-based surrogate networks for degradation signals.

Four encoding variants share one MLP trunk: ``mlp_posenc`` (deterministic
sin/cos octaves plus the raw input), ``siren`` (sine activations with
frequency ``omega0``), ``fourier`` (frozen Gaussian random features) and
``rbf`` (Gaussian bumps on a fixed grid). Non-siren trunks use ``tanh`` so
every variant is smooth enough for second derivatives.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from ._io import atomic_write_text

log = logging.getLogger(__name__)

VARIANTS = ("mlp_posenc", "siren", "fourier", "rbf")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"non-finite training loss at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class InrConfig:
    variant: str = "mlp_posenc"
    input_dim: int = 1
    output_dim: int = 1
    hidden_layers: int = 3
    hidden_width: int = 64
    omega0: float = 30.0
    posenc_frequencies: int = 6
    fourier_features: int = 64
    fourier_scale: float = 10.0
    rbf_centers: int = 64
    dropout_p: float = 0.1
    epochs: int = 50
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be >= 1")
        if self.hidden_layers < 1 or self.hidden_width < 1:
            raise ValueError("hidden_layers and hidden_width must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


# Epoch budgets per task.
CAPACITY_EPOCHS = 50
VOLTAGE_EPOCHS = 30
RUL_EPOCHS = 80


@dataclass
class InrModel:
    config: InrConfig
    theta: np.ndarray
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    in_shift: np.ndarray | None = None
    in_scale: np.ndarray | None = None
    out_shift: np.ndarray | None = None
    out_scale: np.ndarray | None = None

    def __post_init__(self):
        d, c = self.config.input_dim, self.config.output_dim
        if self.in_shift is None:
            self.in_shift = np.zeros(d)
        if self.in_scale is None:
            self.in_scale = np.ones(d)
        if self.out_shift is None:
            self.out_shift = np.zeros(c)
        if self.out_scale is None:
            self.out_scale = np.ones(c)
        if self.theta.size != parameter_count(self.config):
            raise ValueError("theta length does not match the architecture")

    def copy(self) -> "InrModel":
        return InrModel(
            self.config,
            self.theta.copy(),
            {k: v.copy() for k, v in self.buffers.items()},
            self.in_shift.copy(),
            self.in_scale.copy(),
            self.out_shift.copy(),
            self.out_scale.copy(),
        )


@dataclass
class TrainingReport:
    train_loss: list[float]
    val_loss: list[float]
    final_epoch: int
    seed: int
    best_epoch: int | None = None


# ---------------------------------------------------------------------------
# architecture


def _rbf_grid(cfg: InrConfig) -> tuple[np.ndarray, float]:
    d = cfg.input_dim
    per_axis = int(round(cfg.rbf_centers ** (1.0 / d)))
    if per_axis >= 2:
        axis = np.linspace(-1.0, 1.0, per_axis)
        mesh = np.meshgrid(*([axis] * d), indexing="ij")
        centers = np.stack([m.ravel() for m in mesh], axis=1)
        spacing = 2.0 / (per_axis - 1)
    else:
        # too many dimensions for a grid: fall back to a Halton point set
        centers = 2.0 * _halton(cfg.rbf_centers, d) - 1.0
        spacing = 2.0 / cfg.rbf_centers ** (1.0 / d)
    return centers, 2.0 * spacing


def _halton(n: int, d: int) -> np.ndarray:
    primes = []
    k = 2
    while len(primes) < d:
        if all(k % p for p in primes):
            primes.append(k)
        k += 1
    out = np.empty((n, d))
    for j, base in enumerate(primes):
        for i in range(n):
            f, r, idx = 1.0, 0.0, i + 1
            while idx > 0:
                f /= base
                r += f * (idx % base)
                idx //= base
            out[i, j] = r
    return out


def encoded_dim(cfg: InrConfig) -> int:
    d = cfg.input_dim
    if cfg.variant == "mlp_posenc":
        return d + 2 * cfg.posenc_frequencies * d
    if cfg.variant == "fourier":
        return 2 * cfg.fourier_features
    if cfg.variant == "rbf":
        return _rbf_grid(cfg)[0].shape[0]
    return d


def layer_shapes(cfg: InrConfig) -> list[tuple[int, int]]:
    w = cfg.hidden_width
    shapes = [(encoded_dim(cfg), w)]
    shapes += [(w, w)] * (cfg.hidden_layers - 1)
    shapes.append((w, cfg.output_dim))
    return shapes


def parameter_count(cfg: InrConfig) -> int:
    return sum(i * o + o for i, o in layer_shapes(cfg))


def _unpack(cfg: InrConfig, theta):
    """Split the flat vector into ``[(W, b), ...]`` views."""
    layers = []
    pos = 0
    for fan_in, fan_out in layer_shapes(cfg):
        W = theta[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = theta[pos : pos + fan_out]
        pos += fan_out
        layers.append((W, b))
    return layers


def init_model(cfg: InrConfig) -> InrModel:
    """Draw initial parameters (and frozen encoding tables) from ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    buffers: dict[str, np.ndarray] = {}
    if cfg.variant == "fourier":
        buffers["freqs"] = rng.normal(0.0, cfg.fourier_scale, size=(cfg.input_dim, cfg.fourier_features))
    elif cfg.variant == "rbf":
        centers, width = _rbf_grid(cfg)
        buffers["centers"] = centers
        buffers["width"] = np.array([width])

    chunks = []
    shapes = layer_shapes(cfg)
    for i, (fan_in, fan_out) in enumerate(shapes):
        if cfg.variant == "siren":
            bound = 1.0 / fan_in if i == 0 else math.sqrt(6.0 / fan_in) / cfg.omega0
            W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            bb = 1.0 / math.sqrt(fan_in)
            b = rng.uniform(-bb, bb, size=fan_out)
        else:
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            b = np.zeros(fan_out)
        chunks += [W.ravel(), b]
    return InrModel(cfg, np.concatenate(chunks), buffers)


def _encode(model: InrModel, xn):
    cfg = model.config
    if cfg.variant == "mlp_posenc":
        freqs = (2.0 ** np.arange(cfg.posenc_frequencies)) * np.pi
        # block-diagonal map so column (i, j) holds freq_j * x_i
        F = np.kron(np.eye(cfg.input_dim), freqs[None, :])
        z = xn @ F
        return ad.concat([xn, ad.sin(z), ad.cos(z)], axis=1)
    if cfg.variant == "fourier":
        z = xn @ (2.0 * np.pi * model.buffers["freqs"])
        return ad.concat([ad.sin(z), ad.cos(z)], axis=1)
    if cfg.variant == "rbf":
        C = model.buffers["centers"]
        w = float(model.buffers["width"][0])
        sq = (xn * xn).sum(axis=1, keepdims=True) - 2.0 * (xn @ C.T) + (C * C).sum(axis=1)[None, :]
        return ad.exp(sq * (-0.5 / w**2))
    return xn


def _network(model: InrModel, xn, layers, masks=None):
    """Normalised-space forward pass, generic over array / Var / Jet inputs."""
    cfg = model.config
    h = _encode(model, xn)
    for i, (W, b) in enumerate(layers[:-1]):
        z = h @ W + b
        h = ad.sin(cfg.omega0 * z) if cfg.variant == "siren" else ad.tanh(z)
        if masks is not None:
            h = h * masks[i]
    W, b = layers[-1]
    return h @ W + b


def _as_rows(model: InrModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    d = model.config.input_dim
    if x.ndim == 0 or (x.ndim == 1 and d > 1 and x.shape[0] == d):
        x = x.reshape(1, d)
    elif x.ndim == 1:
        x = x.reshape(-1, d)
    if x.ndim != 2 or x.shape[1] != d:
        raise ValueError(f"expected coordinates with {d} columns, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input coordinates")
    return x


def _normalise(model: InrModel, x: np.ndarray) -> np.ndarray:
    return (x - model.in_shift) * model.in_scale


def forward(model: InrModel, x) -> np.ndarray:
    """Deterministic prediction in target units; returns shape ``(n, c)``."""
    xs = _as_rows(model, x)
    yn = _network(model, _normalise(model, xs), _unpack(model.config, model.theta))
    return yn * model.out_scale + model.out_shift


def derivatives(model: InrModel, x, wrt: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Output and its exact first/second derivatives w.r.t. raw input ``wrt``."""
    d = model.config.input_dim
    if not 0 <= wrt < d:
        raise ValueError(f"wrt must index one of {d} inputs")
    xs = _as_rows(model, x)
    direction = np.zeros(d)
    direction[wrt] = model.in_scale[wrt]
    jet = ad.Jet.seed(_normalise(model, xs), direction)
    out = _network(model, jet, _unpack(model.config, model.theta))
    s = model.out_scale
    return out.v * s + model.out_shift, out.d1 * s, out.d2 * s


def derivative(model: InrModel, x, order: int = 1, wrt: int = 0) -> np.ndarray:
    if order not in (1, 2):
        raise ValueError("only first and second derivatives are supported")
    _, d1, d2 = derivatives(model, x, wrt)
    return d1 if order == 1 else d2


def _dropout_masks(model: InrModel, n: int, rng: np.random.Generator) -> list[np.ndarray]:
    p = model.config.dropout_p
    w = model.config.hidden_width
    return [(rng.random((n, w)) >= p) / (1.0 - p) for _ in range(model.config.hidden_layers)]


def mc_dropout_predict(model: InrModel, x, passes: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Predictive mean and population variance over ``passes`` dropout draws."""
    if passes < 1:
        raise ValueError("passes must be >= 1")
    xs = _as_rows(model, x)
    if model.config.dropout_p == 0.0:
        y = forward(model, xs)
        return y, np.zeros_like(y)
    rng = np.random.default_rng(seed)
    layers = _unpack(model.config, model.theta)
    xn = _normalise(model, xs)
    draws = np.stack(
        [_network(model, xn, layers, _dropout_masks(model, len(xs), rng)) for _ in range(passes)]
    )
    draws = draws * model.out_scale + model.out_shift
    mean = draws.mean(axis=0)
    if passes == 1:
        return draws[0], np.zeros_like(mean)
    return mean, ((draws - mean) ** 2).mean(axis=0)


# ---------------------------------------------------------------------------
# training


def _fit_norms(model: InrModel, x: np.ndarray, y: np.ndarray) -> None:
    lo, hi = x.min(axis=0), x.max(axis=0)
    half = (hi - lo) / 2.0
    model.in_shift = (hi + lo) / 2.0
    model.in_scale = np.where(half > 0, 1.0 / np.where(half > 0, half, 1.0), 1.0)
    mu = y.mean(axis=0)
    sd = y.std(axis=0)
    model.out_shift = mu
    model.out_scale = np.where(sd > 0, sd, 1.0)


def loss_and_grad(model: InrModel, x: np.ndarray, y: np.ndarray, masks=None) -> tuple[float, np.ndarray]:
    """Mean squared error in normalised target space and its gradient w.r.t. theta.

    ``x`` and ``y`` are raw (un-normalised) arrays.
    """
    cfg = model.config
    leaves = []
    layers = []
    for W, b in _unpack(cfg, model.theta):
        vw, vb = ad.Var(W), ad.Var(b)
        leaves += [vw, vb]
        layers.append((vw, vb))
    yn = (y - model.out_shift) / model.out_scale
    pred = _network(model, _normalise(model, x), layers, masks)
    resid = pred - yn
    loss = (resid * resid).mean()
    loss.backward()
    grad = np.concatenate([leaf.grad.ravel() for leaf in leaves])
    return float(loss.value), grad


def _mse(model: InrModel, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean((forward(model, x) - y) ** 2))


def _as_xy(model: InrModel, samples) -> tuple[np.ndarray, np.ndarray]:
    x, y = samples
    x = _as_rows(model, x)
    y = np.asarray(y, dtype=float).reshape(len(x), -1)
    if y.shape[1] != model.config.output_dim:
        raise ValueError("target width does not match output_dim")
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite targets")
    return x, y


def train(
    model: InrModel,
    train_set,
    val_set=None,
    *,
    patience: int | None = None,
    fit_norms: bool = True,
) -> tuple[InrModel, TrainingReport]:
    """Full-batch Adam on mean squared error.

    ``train_set`` / ``val_set`` are ``(x, y)`` pairs. Reported losses are MSE in
    target units, evaluated with dropout off after each update. With
    ``patience`` set, training stops once the validation loss has not improved
    for that many epochs and the best parameters are restored.
    """
    cfg = model.config
    model = model.copy()
    x, y = _as_xy(model, train_set)
    if len(x) == 0:
        raise ValueError("empty training set")
    has_val = val_set is not None and len(np.asarray(val_set[0])) > 0
    if has_val:
        xv, yv = _as_xy(model, val_set)
    if fit_norms:
        _fit_norms(model, x, y)

    rng = np.random.default_rng([cfg.seed, 1])
    m = np.zeros_like(model.theta)
    v = np.zeros_like(model.theta)
    b1, b2, eps = 0.9, 0.999, 1e-8
    train_hist: list[float] = []
    val_hist: list[float] = []
    best = (math.inf, -1, model.theta.copy())
    epoch = 0
    for epoch in range(1, cfg.epochs + 1):
        masks = _dropout_masks(model, len(x), rng) if cfg.dropout_p > 0 else None
        loss, g = loss_and_grad(model, x, y, masks)
        if not (math.isfinite(loss) and np.all(np.isfinite(g))):
            raise TrainingDiverged(epoch)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**epoch)
        vhat = v / (1 - b2**epoch)
        model.theta = model.theta - cfg.learning_rate * mhat / (np.sqrt(vhat) + eps)

        tl = _mse(model, x, y)
        if not math.isfinite(tl):
            raise TrainingDiverged(epoch)
        train_hist.append(tl)
        if has_val:
            vl = _mse(model, xv, yv)
            val_hist.append(vl)
            if vl < best[0]:
                best = (vl, epoch, model.theta.copy())
            elif patience is not None and epoch - best[1] >= patience:
                log.debug("early stop at epoch %d (best %d)", epoch, best[1])
                break
    best_epoch = None
    if patience is not None and has_val and best[1] > 0:
        model.theta = best[2]
        best_epoch = best[1]
    return model, TrainingReport(train_hist, val_hist, epoch, cfg.seed, best_epoch)


def interleaved_split(n: int, val_fraction: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    """Hold out every k-th point (by cycle order) so validation stays in-domain."""
    idx = np.arange(n)
    if n < 3 or val_fraction <= 0:
        return idx, idx[:0]
    step = max(2, int(round(1.0 / val_fraction)))
    val = idx[(idx % step) == step // 2]
    val = val[(val > 0) & (val < n - 1)]
    return np.setdiff1d(idx, val), val


def fit_curve(
    x,
    y,
    cfg: InrConfig,
    val_fraction: float = 0.2,
) -> tuple[InrModel, TrainingReport]:
    """Fit a 1-D signal (e.g. SOH vs cycle) with an interleaved validation split."""
    x = np.asarray(x, dtype=float).reshape(-1, 1)
    y = np.asarray(y, dtype=float).reshape(-1, 1)
    tr, va = interleaved_split(len(x), val_fraction)
    cfg = replace(cfg, input_dim=1, output_dim=1)
    return train(init_model(cfg), (x[tr], y[tr]), (x[va], y[va]) if len(va) else None)


# ---------------------------------------------------------------------------
# persistence


def to_dict(model: InrModel) -> dict:
    return {
        "config": asdict(model.config),
        "theta": [float(t) for t in model.theta],
        "buffers": {k: {"shape": list(v.shape), "data": [float(a) for a in v.ravel()]} for k, v in model.buffers.items()},
        "input_norm": {"shift": model.in_shift.tolist(), "scale": model.in_scale.tolist()},
        "output_norm": {"shift": model.out_shift.tolist(), "scale": model.out_scale.tolist()},
    }


def from_dict(doc: dict) -> InrModel:
    cfg = InrConfig(**doc["config"])
    buffers = {k: np.array(b["data"], dtype=float).reshape(b["shape"]) for k, b in doc["buffers"].items()}
    return InrModel(
        cfg,
        np.array(doc["theta"], dtype=float),
        buffers,
        np.array(doc["input_norm"]["shift"], dtype=float),
        np.array(doc["input_norm"]["scale"], dtype=float),
        np.array(doc["output_norm"]["shift"], dtype=float),
        np.array(doc["output_norm"]["scale"], dtype=float),
    )


def save_model(model: InrModel, path) -> None:
    atomic_write_text(path, json.dumps(to_dict(model), sort_keys=True))


def load_model(path) -> InrModel:
    return from_dict(json.loads(Path(path).read_text()))

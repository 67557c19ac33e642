"""Training pipeline: noise augmentation, windowing, chronological split,
MSE + Adam with early stopping, and denormalized forecasting."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import lstm
from .errors import (
    EmptySplitError,
    InvalidConfigError,
    MissingCheckpointError,
    NonFiniteGradientError,
    SeriesTooShortError,
    ShapeMismatchError,
)
from .features import BOUNDED_COLUMNS, DENORMALIZE, FeatureMatrix

logger = logging.getLogger(__name__)

DEFAULT_SEED = 42


@dataclass(frozen=True)
class TrainConfig:
    seq_length: int = 7
    prediction_steps: int = 7
    train_size: float = 0.6
    validation_size: float = 0.2
    test_size: float = 0.2
    learning_rate: float = 5e-5
    batch_size: int = 32
    noise_level: float = 0.05
    multiplier: int = 10
    max_epochs: int = 1000
    patience: int = 100
    delta: float = 0.0
    seed: int = DEFAULT_SEED
    hidden_dim: int = 32
    layer_dim: int = 2
    clip_norm: float | None = 5.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_columns: tuple[str, ...] = ("na",)

    def __post_init__(self):
        fr = (self.train_size, self.validation_size, self.test_size)
        if any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise InvalidConfigError(f"split fractions {fr} must be non-negative and sum to 1")
        if self.seq_length < 1 or self.prediction_steps < 1:
            raise InvalidConfigError("seq_length and prediction_steps must be >= 1")
        if self.noise_level < 0 or self.multiplier < 0:
            raise InvalidConfigError("noise_level and multiplier must be >= 0")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise InvalidConfigError("batch_size, max_epochs and patience must be >= 1")
        object.__setattr__(self, "eval_columns", tuple(self.eval_columns))

    @property
    def fractions(self) -> tuple[float, float, float]:
        return self.train_size, self.validation_size, self.test_size

    @classmethod
    def preset(cls, horizon: str, **overrides) -> "TrainConfig":
        """Reference hyperparameters for ``weekly``, ``biweekly``, ``monthly`` or ``seasonal``."""
        table = {
            "weekly": dict(seq_length=7, prediction_steps=7, max_epochs=1000),
            "biweekly": dict(seq_length=14, prediction_steps=14, max_epochs=10000),
            "monthly": dict(seq_length=30, prediction_steps=30, max_epochs=10000),
            "seasonal": dict(seq_length=90, prediction_steps=90, max_epochs=10000),
        }
        try:
            base = table[horizon.replace("-", "").replace("_", "").lower()]
        except KeyError:
            raise InvalidConfigError(f"unknown preset {horizon!r}") from None
        return cls(**{**base, **overrides})

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        preset = doc.pop("preset", None)
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise InvalidConfigError(f"unknown config keys: {sorted(unknown)}")
        if preset:
            return cls.preset(preset, **doc)
        return cls(**doc)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["eval_columns"] = list(self.eval_columns)
        return d


@dataclass(frozen=True, eq=False)
class Samples:
    """Stacked windows: ``x`` is (n, s, F), ``y`` is (n, h, F)."""

    x: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.x)

    def __getitem__(self, idx) -> "Samples":
        return Samples(self.x[idx], self.y[idx])


def _values(data) -> np.ndarray:
    return np.asarray(data.values if isinstance(data, FeatureMatrix) else data, dtype=float)


def augment_with_noise(data, sigma: float, multiplier: int, seed: int,
                       bounded: tuple[int, ...] | None = None) -> np.ndarray:
    """Original rows followed by ``multiplier`` noisy copies.

    Each copy adds independent N(0, sigma^2) noise to every element; the
    ``bounded`` column indices are clipped back to [0, 1]. For a
    FeatureMatrix the bounded columns are inferred from the column names.
    """
    if sigma < 0 or multiplier < 0:
        raise ValueError("sigma and multiplier must be non-negative")
    base = _values(data)
    if bounded is None:
        cols = data.columns if isinstance(data, FeatureMatrix) else ()
        bounded = tuple(i for i, c in enumerate(cols) if c in BOUNDED_COLUMNS)
    rng = np.random.default_rng(seed)
    copies = [base]
    for _ in range(multiplier):
        noisy = base + rng.normal(0.0, sigma, size=base.shape) if sigma > 0 else base.copy()
        if bounded:
            b = list(bounded)
            noisy[:, b] = np.clip(noisy[:, b], 0.0, 1.0)
        copies.append(noisy)
    return np.concatenate(copies, axis=0)


def make_sequences(data, s: int, h: int, segment_length: int | None = None) -> Samples:
    """Sliding windows: ``x`` ends at row t, ``y`` covers rows t+1 .. t+h.

    With ``segment_length`` the rows are treated as back-to-back
    independent segments and no window crosses a segment boundary.
    """
    values = _values(data)
    total = len(values)
    seg = segment_length or total
    if total % seg:
        raise ValueError(f"{total} rows do not split into segments of {seg}")
    if seg < s + h:
        raise SeriesTooShortError(f"segment of {seg} rows is shorter than s + h = {s + h}")
    starts = [k * seg + j for k in range(total // seg) for j in range(seg - s - h + 1)]
    idx_x = np.array(starts)[:, None] + np.arange(s)
    idx_y = np.array(starts)[:, None] + s + np.arange(h)
    return Samples(values[idx_x], values[idx_y])


def split_sizes(n: int, fractions) -> tuple[int, int, int]:
    n_train = math.floor(fractions[0] * n + 1e-9)
    n_val = math.floor(fractions[1] * n + 1e-9)
    return n_train, n_val, n - n_train - n_val


def split_data(samples: Samples, fractions=(0.6, 0.2, 0.2)):
    """Chronological split; train and validation sizes round down, test takes the rest."""
    n_train, n_val, n_test = split_sizes(len(samples), fractions)
    if min(n_train, n_val, n_test) < 1:
        raise EmptySplitError(f"{len(samples)} samples give split sizes {n_train}/{n_val}/{n_test}")
    return (samples[:n_train], samples[n_train:n_train + n_val], samples[n_train + n_val:])


def prepare_samples(features: FeatureMatrix, config: TrainConfig):
    """Augment, window and split a feature matrix according to ``config``."""
    data = augment_with_noise(features, config.noise_level, config.multiplier, config.seed)
    samples = make_sequences(data, config.seq_length, config.prediction_steps, segment_length=len(features))
    return split_data(samples, config.fractions)


def mse_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"pred {pred.shape} vs target {target.shape}")
    return float(np.mean((pred - target) ** 2))


def backward(x, y, params: lstm.ModelParams) -> tuple[float, lstm.ModelParams]:
    """MSE loss of the batch and its gradient w.r.t. every parameter."""
    cache = lstm.ForwardCache()
    pred, _ = lstm.forward(x, params, cache=cache)
    y = np.asarray(y, dtype=float)
    if pred.shape != y.shape:
        raise ShapeMismatchError(f"prediction {pred.shape} vs target {y.shape}")
    resid = pred - y
    grads = lstm.backward(cache, 2.0 * resid / resid.size, params)
    for name, g in grads.named_tensors():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient in {name}")
    return float(np.mean(resid ** 2)), grads


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: lstm.ModelParams, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        ts = params.tensors()
        return cls([np.zeros_like(t) for t in ts], [np.zeros_like(t) for t in ts], 0, beta1, beta2, eps)


def adam_step(params: lstm.ModelParams, grads: lstm.ModelParams, state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update, applied in place to ``params`` and ``state``."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params.tensors(), grads.tensors(), state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def clip_by_global_norm(grads: lstm.ModelParams, max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.tensors()))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.tensors():
            g *= scale
    return norm


@dataclass
class Checkpoint:
    params: lstm.ModelParams
    epoch: int
    val_loss: float
    is_best: bool = True
    config: TrainConfig | None = None
    columns: tuple[str, ...] = ()
    normalization_maxima: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "model": self.params.to_dict(),
            "epoch": self.epoch,
            "val_loss": self.val_loss,
            "is_best": self.is_best,
            "config": self.config.to_dict() if self.config else None,
            "columns": list(self.columns),
            "normalization_maxima": self.normalization_maxima,
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Checkpoint":
        doc = json.loads(text)
        return cls(
            params=lstm.ModelParams.from_dict(doc["model"]),
            epoch=doc["epoch"],
            val_loss=doc["val_loss"],
            is_best=doc["is_best"],
            config=TrainConfig.from_dict(doc["config"]) if doc.get("config") else None,
            columns=tuple(doc.get("columns", ())),
            normalization_maxima=doc.get("normalization_maxima", {}),
        )


@dataclass
class TrainResult:
    best: Checkpoint
    history: list[tuple[int, float, float]]  # (epoch, train_loss, val_loss)
    stopped_early: bool

    @property
    def best_epoch(self) -> int:
        return self.best.epoch

    def history_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss"]
        lines += [f"{e},{tr!r},{va!r}" for e, tr, va in self.history]
        return "\n".join(lines) + "\n"


def evaluate_loss(samples: Samples, params: lstm.ModelParams) -> float:
    return mse_loss(lstm.predict(samples.x, params), samples.y)


def train_loop(train: Samples, val: Samples, config: TrainConfig,
               params: lstm.ModelParams | None = None, progress=None) -> TrainResult:
    """Mini-batch Adam with per-epoch validation and early stopping.

    The returned checkpoint is the one with the lowest validation loss,
    not the last one trained.
    """
    if len(train) == 0 or len(val) == 0:
        raise EmptySplitError("training and validation sets must be non-empty")
    if params is None:
        dims = lstm.Dims(
            input_dim=train.x.shape[2],
            hidden_dim=config.hidden_dim,
            layer_dim=config.layer_dim,
            output_dim=train.y.shape[2],
            prediction_steps=train.y.shape[1],
        )
        params = lstm.init_params(dims, config.seed)
    else:
        params = params.copy()
    state = AdamState.for_params(params, config.beta1, config.beta2, config.adam_eps)
    rng = np.random.default_rng(config.seed + 1)

    best: Checkpoint | None = None
    best_loss = math.inf
    waited = 0
    history = []
    stopped_early = False
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            try:
                loss, grads = backward(train.x[batch], train.y[batch], params)
            except NonFiniteGradientError as exc:
                raise NonFiniteGradientError(f"epoch {epoch}, batch at {start}: {exc}") from None
            if config.clip_norm:
                clip_by_global_norm(grads, config.clip_norm)
            adam_step(params, grads, state, config.learning_rate)
            total += loss * len(batch)
        train_loss = total / len(order)
        val_loss = evaluate_loss(val, params)
        history.append((epoch, train_loss, val_loss))
        if progress is not None:
            progress(epoch, train_loss, val_loss)

        if val_loss < best_loss - config.delta:
            best_loss = val_loss
            best = Checkpoint(params.copy(), epoch, val_loss, True, config)
            waited = 0
        else:
            waited += 1
            if waited >= config.patience:
                logger.info("early stop at epoch %d (best %d, val %.6g)", epoch, best.epoch, best_loss)
                stopped_early = True
                break
    if best is None:
        raise NonFiniteGradientError("validation loss never became finite")
    return TrainResult(best, history, stopped_early)


def predict_future(tail, checkpoint: Checkpoint | None, normalization_maxima: dict | None = None,
                   columns: tuple[str, ...] | None = None) -> np.ndarray:
    """Forecast the next ``prediction_steps`` rows from the last ``seq_length`` rows.

    nnc/na/nm are multiplied back by their stored maxima; every other
    column is returned as predicted.
    """
    if checkpoint is None:
        raise MissingCheckpointError("no trained checkpoint available")
    maxima = normalization_maxima if normalization_maxima is not None else checkpoint.normalization_maxima
    columns = tuple(columns or checkpoint.columns)
    tail = np.asarray(tail, dtype=float)
    pred = lstm.predict(tail[None, :, :], checkpoint.params)[0]
    for col, key in DENORMALIZE.items():
        if col in columns and key in maxima:
            pred[:, columns.index(col)] *= maxima[key]
    return pred

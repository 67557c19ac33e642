"""Stacked LSTM with a fully connected multi-step output head, in numpy.

Gate pre-activations for one layer are computed in a single matmul against
weights stored side by side in the order input, forget, output, candidate
(``i, f, o, c``). The per-gate matrices (``w_xi``, ``w_hf``, ...) are views
into those blocks.

Shapes: inputs are ``(batch, seq_len, input_dim)`` and outputs are
``(batch, prediction_steps, output_dim)``. The head reads only the last
time step of the top layer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import InvalidDimsError, NonFiniteInputError, ShapeMismatchError

CHECKPOINT_FORMAT = "evload-lstm"
CHECKPOINT_VERSION = 1
GATES = ("i", "f", "o", "c")


def sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class Dims:
    input_dim: int
    hidden_dim: int
    layer_dim: int = 2
    output_dim: int = 1
    prediction_steps: int = 1

    def __post_init__(self):
        for name, value in vars(self).items():
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise InvalidDimsError(f"{name} must be a positive integer, got {value!r}")


@dataclass
class LayerParams:
    w_x: np.ndarray  # (d_in, 4h)
    w_h: np.ndarray  # (h, 4h)
    b: np.ndarray  # (1, 4h)

    @property
    def hidden_dim(self) -> int:
        return self.w_h.shape[0]

    def _block(self, arr, gate):
        h = self.hidden_dim
        k = GATES.index(gate)
        return arr[:, k * h:(k + 1) * h]

    # per-gate views, writable
    w_xi = property(lambda self: self._block(self.w_x, "i"))
    w_xf = property(lambda self: self._block(self.w_x, "f"))
    w_xo = property(lambda self: self._block(self.w_x, "o"))
    w_xc = property(lambda self: self._block(self.w_x, "c"))
    w_hi = property(lambda self: self._block(self.w_h, "i"))
    w_hf = property(lambda self: self._block(self.w_h, "f"))
    w_ho = property(lambda self: self._block(self.w_h, "o"))
    w_hc = property(lambda self: self._block(self.w_h, "c"))
    b_i = property(lambda self: self._block(self.b, "i"))
    b_f = property(lambda self: self._block(self.b, "f"))
    b_o = property(lambda self: self._block(self.b, "o"))
    b_c = property(lambda self: self._block(self.b, "c"))

    @classmethod
    def from_gates(cls, **gates) -> "LayerParams":
        """Build from the twelve per-gate arrays (``w_xi=..., b_c=...``)."""
        w_x = np.hstack([np.atleast_2d(gates[f"w_x{g}"]) for g in GATES])
        w_h = np.hstack([np.atleast_2d(gates[f"w_h{g}"]) for g in GATES])
        b = np.hstack([np.atleast_2d(gates[f"b_{g}"]) for g in GATES])
        return cls(w_x.astype(float), w_h.astype(float), b.astype(float))


@dataclass
class ModelParams:
    dims: Dims
    layers: list[LayerParams]
    fc_weight: np.ndarray  # (h, output_dim * prediction_steps)
    fc_bias: np.ndarray  # (1, output_dim * prediction_steps)
    seed: int | None = None

    def named_tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        for k, layer in enumerate(self.layers):
            yield f"layers.{k}.w_x", layer.w_x
            yield f"layers.{k}.w_h", layer.w_h
            yield f"layers.{k}.b", layer.b
        yield "fc_weight", self.fc_weight
        yield "fc_bias", self.fc_bias

    def tensors(self) -> list[np.ndarray]:
        return [t for _, t in self.named_tensors()]

    def zeros_like(self) -> "ModelParams":
        return ModelParams(
            self.dims,
            [LayerParams(np.zeros_like(l.w_x), np.zeros_like(l.w_h), np.zeros_like(l.b)) for l in self.layers],
            np.zeros_like(self.fc_weight),
            np.zeros_like(self.fc_bias),
            self.seed,
        )

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.dims,
            [LayerParams(l.w_x.copy(), l.w_h.copy(), l.b.copy()) for l in self.layers],
            self.fc_weight.copy(),
            self.fc_bias.copy(),
            self.seed,
        )

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "dims": vars(self.dims).copy(),
            "seed": self.seed,
            "tensors": {
                name: {"shape": list(t.shape), "data": [float(v) for v in t.ravel(order="C")]}
                for name, t in self.named_tensors()
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelParams":
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not an LSTM checkpoint")
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
        dims = Dims(**doc["dims"])
        t = {name: np.array(v["data"], dtype=float).reshape(v["shape"]) for name, v in doc["tensors"].items()}
        layers = [
            LayerParams(t[f"layers.{k}.w_x"], t[f"layers.{k}.w_h"], t[f"layers.{k}.b"])
            for k in range(dims.layer_dim)
        ]
        params = cls(dims, layers, t["fc_weight"], t["fc_bias"], doc.get("seed"))
        params.validate()
        return params

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        return cls.from_dict(json.loads(text))

    def validate(self) -> None:
        d = self.dims
        if len(self.layers) != d.layer_dim:
            raise ShapeMismatchError(f"expected {d.layer_dim} layers, got {len(self.layers)}")
        h4 = 4 * d.hidden_dim
        for k, layer in enumerate(self.layers):
            d_in = d.input_dim if k == 0 else d.hidden_dim
            expected = {"w_x": (d_in, h4), "w_h": (d.hidden_dim, h4), "b": (1, h4)}
            for name, shape in expected.items():
                if getattr(layer, name).shape != shape:
                    raise ShapeMismatchError(
                        f"layer {k} {name} has shape {getattr(layer, name).shape}, expected {shape}")
        n_out = d.output_dim * d.prediction_steps
        if self.fc_weight.shape != (d.hidden_dim, n_out) or self.fc_bias.shape != (1, n_out):
            raise ShapeMismatchError("fully connected head does not match dims")
        for name, arr in self.named_tensors():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")


def init_params(dims: Dims, seed: int) -> ModelParams:
    """Uniform(-1/sqrt(h), 1/sqrt(h)) weights, forget-gate bias 1, other biases 0."""
    rng = np.random.default_rng(seed)
    h = dims.hidden_dim
    bound = 1.0 / np.sqrt(h)
    layers = []
    for k in range(dims.layer_dim):
        d_in = dims.input_dim if k == 0 else h
        w_x = rng.uniform(-bound, bound, size=(d_in, 4 * h))
        w_h = rng.uniform(-bound, bound, size=(h, 4 * h))
        b = np.zeros((1, 4 * h))
        b[:, h:2 * h] = 1.0
        layers.append(LayerParams(w_x, w_h, b))
    n_out = dims.output_dim * dims.prediction_steps
    fc_weight = rng.uniform(-bound, bound, size=(h, n_out))
    fc_bias = np.zeros((1, n_out))
    return ModelParams(dims, layers, fc_weight, fc_bias, seed)


@dataclass
class HiddenState:
    h: list[np.ndarray]  # one (batch, hidden) array per layer
    c: list[np.ndarray]

    @classmethod
    def zeros(cls, dims: Dims, batch: int) -> "HiddenState":
        return cls([np.zeros((batch, dims.hidden_dim)) for _ in range(dims.layer_dim)],
                   [np.zeros((batch, dims.hidden_dim)) for _ in range(dims.layer_dim)])


def _gates(z, h):
    i = sigmoid(z[:, :h])
    f = sigmoid(z[:, h:2 * h])
    o = sigmoid(z[:, 2 * h:3 * h])
    g = np.tanh(z[:, 3 * h:])
    return i, f, o, g


def cell_forward(x_t, h_prev, c_prev, p: LayerParams):
    """One LSTM step. Returns ``(h_t, c_t)``."""
    x_t = np.atleast_2d(np.asarray(x_t, dtype=float))
    if not np.all(np.isfinite(x_t)):
        raise NonFiniteInputError("input contains NaN or inf")
    h = p.hidden_dim
    if x_t.shape[1] != p.w_x.shape[0] or h_prev.shape != (x_t.shape[0], h) or c_prev.shape != h_prev.shape:
        raise ShapeMismatchError(
            f"x {x_t.shape}, h {h_prev.shape}, c {c_prev.shape} incompatible with w_x {p.w_x.shape}")
    z = x_t @ p.w_x + h_prev @ p.w_h + p.b
    i, f, o, g = _gates(z, h)
    c_t = f * c_prev + i * g
    return o * np.tanh(c_t), c_t


@dataclass
class _LayerTrace:
    inputs: np.ndarray  # (n, T, d_in)
    h: np.ndarray  # (n, T+1, h), index 0 is the initial state
    c: np.ndarray  # (n, T+1, h)
    gates: np.ndarray  # (n, T, 4h) post-activation i, f, o, g


@dataclass
class ForwardCache:
    layers: list[_LayerTrace] = field(default_factory=list)
    top: np.ndarray | None = None  # (n, h) last hidden state of the top layer


def _check_input(x, dims: Dims) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 3 or x.shape[2] != dims.input_dim or x.shape[1] < 1:
        raise ShapeMismatchError(f"expected (batch, seq_len>=1, {dims.input_dim}) input, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInputError("input contains NaN or inf")
    return x


def forward(x, params: ModelParams, initial_state: HiddenState | None = None, cache: ForwardCache | None = None):
    """Run the stacked LSTM and the output head.

    Returns ``(y, final_state)`` with ``y`` of shape
    ``(batch, prediction_steps, output_dim)``. Pass a :class:`ForwardCache`
    to keep the activations needed by :func:`backward`.
    """
    dims = params.dims
    x = _check_input(x, dims)
    n, T, _ = x.shape
    hd = dims.hidden_dim
    state = initial_state or HiddenState.zeros(dims, n)
    final = HiddenState([], [])
    seq = x
    for k, p in enumerate(params.layers):
        zx = (seq.reshape(n * T, -1) @ p.w_x).reshape(n, T, 4 * hd) + p.b
        hs = np.empty((n, T + 1, hd))
        cs = np.empty((n, T + 1, hd))
        gs = np.empty((n, T, 4 * hd))
        hs[:, 0] = state.h[k]
        cs[:, 0] = state.c[k]
        for t in range(T):
            z = zx[:, t] + hs[:, t] @ p.w_h
            i, f, o, g = _gates(z, hd)
            cs[:, t + 1] = f * cs[:, t] + i * g
            hs[:, t + 1] = o * np.tanh(cs[:, t + 1])
            gs[:, t, :hd], gs[:, t, hd:2 * hd], gs[:, t, 2 * hd:3 * hd], gs[:, t, 3 * hd:] = i, f, o, g
        if cache is not None:
            cache.layers.append(_LayerTrace(seq, hs, cs, gs))
        final.h.append(hs[:, -1].copy())
        final.c.append(cs[:, -1].copy())
        seq = hs[:, 1:]
    top = final.h[-1]
    if cache is not None:
        cache.top = top
    y = top @ params.fc_weight + params.fc_bias
    return y.reshape(n, dims.prediction_steps, dims.output_dim), final


def predict(x, params: ModelParams) -> np.ndarray:
    return forward(x, params)[0]


def backward(cache: ForwardCache, dy, params: ModelParams) -> ModelParams:
    """Reverse-mode pass: gradients of ``sum(dy * y)`` w.r.t. every parameter.

    ``dy`` is the upstream gradient with the shape of the forward output.
    """
    dims = params.dims
    hd = dims.hidden_dim
    n = cache.top.shape[0]
    dy = np.asarray(dy, dtype=float).reshape(n, -1)
    grads = params.zeros_like()
    grads.fc_weight[...] = cache.top.T @ dy
    grads.fc_bias[...] = dy.sum(axis=0, keepdims=True)

    trace = cache.layers[-1]
    T = trace.gates.shape[1]
    dh_seq = np.zeros((n, T, hd))
    dh_seq[:, -1] = dy @ params.fc_weight.T

    for k in range(dims.layer_dim - 1, -1, -1):
        p, trace, g = params.layers[k], cache.layers[k], grads.layers[k]
        dz = np.empty((n, T, 4 * hd))
        dh_next = np.zeros((n, hd))
        dc_next = np.zeros((n, hd))
        for t in range(T - 1, -1, -1):
            gt = trace.gates[:, t]
            i, f, o, gg = gt[:, :hd], gt[:, hd:2 * hd], gt[:, 2 * hd:3 * hd], gt[:, 3 * hd:]
            c_t = trace.c[:, t + 1]
            c_prev = trace.c[:, t]
            tc = np.tanh(c_t)
            dh = dh_seq[:, t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz[:, t, :hd] = dc * gg * i * (1.0 - i)
            dz[:, t, hd:2 * hd] = dc * c_prev * f * (1.0 - f)
            dz[:, t, 2 * hd:3 * hd] = dh * tc * o * (1.0 - o)
            dz[:, t, 3 * hd:] = dc * i * (1.0 - gg * gg)
            dc_next = dc * f
            dh_next = dz[:, t] @ p.w_h.T
        flat_dz = dz.reshape(n * T, 4 * hd)
        g.w_x[...] = trace.inputs.reshape(n * T, -1).T @ flat_dz
        g.w_h[...] = trace.h[:, :-1].reshape(n * T, hd).T @ flat_dz
        g.b[...] = flat_dz.sum(axis=0, keepdims=True)
        if k > 0:
            dh_seq = (flat_dz @ p.w_x.T).reshape(n, T, hd)
    return grads

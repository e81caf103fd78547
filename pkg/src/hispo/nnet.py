"""Dense tanh MLP over a flat parameter vector, with hand-written backprop.

Parameters of every layer are packed into one 1-D float64 array in the
order ``W, b[, gain, offset]`` per layer; ``W`` is stored row-major with
shape ``(fan_in, fan_out)``. Layer normalization (when enabled) and dropout
apply to hidden layers only. The policy head is a fixed unit-variance
Gaussian, so its negative log-likelihood reduces to half the squared error.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

LN_EPS = 1e-5


@dataclass(frozen=True)
class NetShape:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    use_layernorm: bool = True
    dropout_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "input_dim", int(self.input_dim))
        object.__setattr__(self, "output_dim", int(self.output_dim))
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(d < 1 for d in dims):
            raise ValueError(f"all dims must be >= 1, got {dims}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "output_dim": self.output_dim,
            "use_layernorm": self.use_layernorm,
            "dropout_rate": self.dropout_rate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetShape":
        return cls(d["input_dim"], tuple(d["hidden_dims"]), d["output_dim"],
                   bool(d["use_layernorm"]), float(d["dropout_rate"]))


@dataclass(frozen=True)
class LayerSlots:
    """Offsets of one layer's tensors inside the flat vector."""

    fan_in: int
    fan_out: int
    w: slice
    b: slice
    gain: slice | None = None
    offset: slice | None = None
    hidden: bool = field(default=False)


@lru_cache(maxsize=None)
def layer_slots(shape: NetShape) -> tuple[LayerSlots, ...]:
    slots = []
    pos = 0
    dims = shape.dims
    n_layers = len(dims) - 1
    for i in range(n_layers):
        n, m = dims[i], dims[i + 1]
        hidden = i < n_layers - 1
        w = slice(pos, pos + n * m)
        pos += n * m
        b = slice(pos, pos + m)
        pos += m
        gain = offset = None
        if hidden and shape.use_layernorm:
            gain = slice(pos, pos + m)
            pos += m
            offset = slice(pos, pos + m)
            pos += m
        slots.append(LayerSlots(n, m, w, b, gain, offset, hidden))
    return tuple(slots)


def param_count(shape: NetShape) -> int:
    return layer_slots(shape)[-1].b.stop


def init_params(shape: NetShape, seed) -> np.ndarray:
    """Glorot-uniform weights, zero biases and offsets, unit layernorm gains."""
    rng = np.random.default_rng(seed)
    theta = np.zeros(param_count(shape))
    for s in layer_slots(shape):
        limit = np.sqrt(6.0 / (s.fan_in + s.fan_out))
        theta[s.w] = rng.uniform(-limit, limit, size=s.fan_in * s.fan_out)
        if s.gain is not None:
            theta[s.gain] = 1.0
    return theta


def _check(shape: NetShape, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    if params.ndim != 1 or params.size != param_count(shape):
        raise ValueError(f"expected {param_count(shape)} params, got shape {params.shape}")
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != shape.input_dim:
        raise ValueError(f"input dim {x.shape[-1]} != {shape.input_dim}")
    return x


def _forward(shape, params, x, train, rng, keep_cache, extra=None):
    """Returns output and (optionally) the per-layer cache for backprop.

    ``extra[i]``, when given, is added to layer ``i``'s pre-activation
    (lateral inputs of progressive networks).
    """
    slots = layer_slots(shape)
    p = shape.dropout_rate
    if train and p > 0.0 and rng is None:
        raise ValueError("train mode with dropout needs an rng")
    h = x
    cache = []
    for i, s in enumerate(slots):
        W = params[s.w].reshape(s.fan_in, s.fan_out)
        z = h @ W + params[s.b]
        if extra is not None and extra[i] is not None:
            z = z + extra[i]
        if not s.hidden:
            cache.append((h, None, None, None, None))
            h = z
            break
        zn = inv_std = None
        if s.gain is not None:
            mu = z.mean(axis=-1, keepdims=True)
            var = z.var(axis=-1, keepdims=True)
            inv_std = 1.0 / np.sqrt(var + LN_EPS)
            zn = (z - mu) * inv_std
            u = zn * params[s.gain] + params[s.offset]
        else:
            u = z
        a = np.tanh(u)
        mask = None
        if train and p > 0.0:
            mask = (rng.random(a.shape) >= p) / (1.0 - p)
            out = a * mask
        else:
            out = a
        if keep_cache:
            cache.append((h, zn, inv_std, a, mask))
        h = out
    return h, cache


def forward(shape: NetShape, params: np.ndarray, x, mode: str = "eval", rng=None) -> np.ndarray:
    """Mean head output for a single input vector or a (batch, input_dim) matrix."""
    x = _check(shape, params, x)
    y, _ = _forward(shape, params, x, mode == "train", rng, keep_cache=False)
    return y


def nll_loss(shape: NetShape, params: np.ndarray, inputs, targets, mode: str = "eval", rng=None) -> float:
    inputs = _check(shape, params, np.atleast_2d(inputs))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if inputs.shape[0] == 0:
        raise ValueError("empty batch")
    if targets.shape != (inputs.shape[0], shape.output_dim):
        raise ValueError(f"targets shape {targets.shape} mismatches batch")
    y, _ = _forward(shape, params, inputs, mode == "train", rng, keep_cache=False)
    return float(0.5 * np.sum((y - targets) ** 2) / inputs.shape[0])


def backward(shape: NetShape, params: np.ndarray, cache, dy: np.ndarray,
             pre_grads: list | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Backprop ``dy = dL/d output`` through a cached pass; returns (dparams, dinputs).

    If ``pre_grads`` is a list it receives dL/d(pre-activation) of every
    layer, first layer first.
    """
    slots = layer_slots(shape)
    g = np.zeros_like(params)
    delta = dy
    for s, (h, zn, inv_std, a, mask) in zip(reversed(slots), reversed(cache)):
        if s.hidden:
            if mask is not None:
                delta = delta * mask
            du = delta * (1.0 - a * a)
            if s.gain is not None:
                g[s.gain] = np.sum(du * zn, axis=0)
                g[s.offset] = np.sum(du, axis=0)
                dzn = du * params[s.gain]
                delta = inv_std * (dzn - dzn.mean(axis=-1, keepdims=True)
                                   - zn * np.mean(dzn * zn, axis=-1, keepdims=True))
            else:
                delta = du
        W = params[s.w].reshape(s.fan_in, s.fan_out)
        g[s.w] = (h.T @ delta).ravel()
        g[s.b] = delta.sum(axis=0)
        if pre_grads is not None:
            pre_grads.insert(0, delta)
        delta = delta @ W.T
    return g, delta


def loss_and_grad(shape: NetShape, params: np.ndarray, inputs, targets, mode: str = "eval", rng=None):
    """NLL loss and its gradient w.r.t. the flat parameters.

    In train mode one dropout mask is drawn per call and shared by the
    forward and backward pass.
    """
    inputs = _check(shape, params, np.atleast_2d(inputs))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    n = inputs.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if targets.shape != (n, shape.output_dim):
        raise ValueError(f"targets shape {targets.shape} mismatches batch")
    y, cache = _forward(shape, params, inputs, mode == "train", rng, keep_cache=True)
    resid = y - targets
    loss = float(0.5 * np.sum(resid**2) / n)
    g, _ = backward(shape, params, cache, resid / n)
    return loss, g


def grad(shape: NetShape, params: np.ndarray, inputs, targets, mode: str = "eval", rng=None) -> np.ndarray:
    return loss_and_grad(shape, params, inputs, targets, mode, rng)[1]


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))


def adam_step(state: AdamState, params: np.ndarray, g: np.ndarray, lr: float = 3e-4):
    """One bias-corrected Adam update. Returns ``(new_state, new_params)``."""
    if state.m.shape != params.shape or g.shape != params.shape:
        raise ValueError("optimizer state, params and gradient must share a shape")
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return AdamState(m, v, t, state.beta1, state.beta2, state.eps), new_params

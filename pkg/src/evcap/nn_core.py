"""Minimal numpy kernel: GRU/BiGRU, dense, batch norm, dropout, softmax/CE and Adam.

Every layer exposes a ``*_forward`` function returning ``(output, cache)`` and a
matching ``*_backward`` function computing exact analytic gradients from the
cache.  Arrays are float64 throughout.  Recurrent layers accept either a single
sequence of shape ``(T, D)`` or a time-major batch ``(T, B, D)`` with an
optional ``(T, B)`` mask; masked steps carry the previous hidden state through
unchanged, so the state after the last step equals the state at each
sequence's true last frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .errors import InvalidArgument, InvalidState

LEAKY_SLOPE = 0.3
ACTIVATIONS = ("linear", "leaky_relu", "softmax")


def seeded_rng(seed: int) -> np.random.Generator:
    """Return the package-wide PRNG (PCG64) for ``seed``.

    PCG64 streams are specified bit-for-bit by numpy and identical on every
    platform, so a seed fully determines every random draw made from it.
    """
    return np.random.Generator(np.random.PCG64(int(seed)))


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


# ---------------------------------------------------------------------------
# GRU
# ---------------------------------------------------------------------------


@dataclass
class GruCellParams:
    W_z: np.ndarray
    W_r: np.ndarray
    W_h: np.ndarray
    U_z: np.ndarray
    U_r: np.ndarray
    U_h: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b_h: np.ndarray

    NAMES = ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")

    def __post_init__(self):
        i, h = self.W_z.shape
        for name in ("W_z", "W_r", "W_h"):
            if getattr(self, name).shape != (i, h):
                raise InvalidArgument(f"{name} must be {(i, h)}, got {getattr(self, name).shape}")
        for name in ("U_z", "U_r", "U_h"):
            if getattr(self, name).shape != (h, h):
                raise InvalidArgument(f"{name} must be {(h, h)}, got {getattr(self, name).shape}")
        for name in ("b_z", "b_r", "b_h"):
            if getattr(self, name).shape != (h,):
                raise InvalidArgument(f"{name} must be {(h,)}, got {getattr(self, name).shape}")

    @property
    def input_dim(self) -> int:
        return self.W_z.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.W_z.shape[1]

    @staticmethod
    def count(input_dim: int, hidden_dim: int) -> int:
        return 3 * (input_dim * hidden_dim + hidden_dim * hidden_dim + hidden_dim)

    @property
    def n_params(self) -> int:
        return self.count(self.input_dim, self.hidden_dim)

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.NAMES}

    @classmethod
    def from_arrays(cls, arrays) -> "GruCellParams":
        return cls(**{name: arrays[name] for name in cls.NAMES})

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "GruCellParams":
        i, h = input_dim, hidden_dim
        return cls(*(np.zeros((i, h)) for _ in range(3)),
                   *(np.zeros((h, h)) for _ in range(3)),
                   *(np.zeros(h) for _ in range(3)))

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator) -> "GruCellParams":
        """Glorot-uniform weights, zero biases."""
        i, h = input_dim, hidden_dim
        return cls(*(glorot_uniform(rng, i, h) for _ in range(3)),
                   *(glorot_uniform(rng, h, h) for _ in range(3)),
                   *(np.zeros(h) for _ in range(3)))


class GruCache(NamedTuple):
    params: GruCellParams
    x: np.ndarray
    h_prev: np.ndarray
    z: np.ndarray
    r: np.ndarray
    h_tilde: np.ndarray
    squeeze: bool


def gru_cell_forward(p: GruCellParams, x_t, h_prev):
    """One GRU step.

    z = σ(xW_z + hU_z + b_z), r = σ(xW_r + hU_r + b_r),
    h̃ = tanh(xW_h + (r⊙h)U_h + b_h), h_t = (1 − z)⊙h + z⊙h̃.
    Accepts a vector or a ``(B, dim)`` batch.
    """
    x = np.asarray(x_t, dtype=np.float64)
    h = np.asarray(h_prev, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x, h = x[None, :], h[None, :]
    if x.ndim != 2 or x.shape[1] != p.input_dim:
        raise InvalidArgument(f"x_t must have {p.input_dim} features, got shape {np.shape(x_t)}")
    if h.shape != (x.shape[0], p.hidden_dim):
        raise InvalidArgument(f"h_prev must have shape {(x.shape[0], p.hidden_dim)}, got {np.shape(h_prev)}")
    z = expit(x @ p.W_z + h @ p.U_z + p.b_z)
    r = expit(x @ p.W_r + h @ p.U_r + p.b_r)
    h_tilde = np.tanh(x @ p.W_h + (r * h) @ p.U_h + p.b_h)
    h_t = (1.0 - z) * h + z * h_tilde
    cache = GruCache(p, x, h, z, r, h_tilde, squeeze)
    return (h_t[0] if squeeze else h_t), cache


def gru_cell_backward(cache: GruCache, grad_h_t):
    """Gradients of a GRU step; returns ``(grad_params, grad_x_t, grad_h_prev)``."""
    if not isinstance(cache, GruCache):
        raise InvalidState("gru_cell_backward needs the cache returned by gru_cell_forward")
    g = np.asarray(grad_h_t, dtype=np.float64)
    if cache.squeeze:
        g = g[None, :] if g.ndim == 1 else g
    if g.shape != cache.h_prev.shape:
        raise InvalidState(f"gradient shape {np.shape(grad_h_t)} does not match the cached step "
                           f"{cache.h_prev.shape}")
    p, x, h, z, r, hh = cache.params, cache.x, cache.h_prev, cache.z, cache.r, cache.h_tilde
    d_ah = g * z * (1.0 - hh * hh)
    d_z = g * (hh - h)
    d_az = d_z * z * (1.0 - z)
    d_rh = d_ah @ p.U_h.T
    d_ar = d_rh * h * r * (1.0 - r)
    rh = r * h
    grads = GruCellParams(
        W_z=x.T @ d_az, W_r=x.T @ d_ar, W_h=x.T @ d_ah,
        U_z=h.T @ d_az, U_r=h.T @ d_ar, U_h=rh.T @ d_ah,
        b_z=d_az.sum(0), b_r=d_ar.sum(0), b_h=d_ah.sum(0),
    )
    grad_x = d_az @ p.W_z.T + d_ar @ p.W_r.T + d_ah @ p.W_h.T
    grad_h = g * (1.0 - z) + d_rh * r + d_az @ p.U_z.T + d_ar @ p.U_r.T
    if cache.squeeze:
        return grads, grad_x[0], grad_h[0]
    return grads, grad_x, grad_h


def _add_gru_grads(acc: GruCellParams | None, g: GruCellParams) -> GruCellParams:
    if acc is None:
        return g
    for name in GruCellParams.NAMES:
        getattr(acc, name).__iadd__(getattr(g, name))
    return acc


class GruLayerCache(NamedTuple):
    steps: list
    mask: np.ndarray | None
    squeeze: bool


def _prep_sequence(seq, mask):
    s = np.asarray(seq, dtype=np.float64)
    squeeze = s.ndim == 2
    if squeeze:
        s = s[:, None, :]
    if s.ndim != 3:
        raise InvalidArgument(f"sequence must be (T, D) or (T, B, D), got shape {s.shape}")
    if s.shape[0] < 1:
        raise InvalidArgument("sequence must contain at least one step")
    m = None
    if mask is not None:
        m = np.asarray(mask, dtype=np.float64)
        if squeeze and m.ndim == 1:
            m = m[:, None]
        if m.shape != s.shape[:2]:
            raise InvalidArgument(f"mask must have shape {s.shape[:2]}, got {m.shape}")
    return s, m, squeeze


def gru_layer_forward(p: GruCellParams, seq, h0=None, mask=None):
    """Run a GRU over time; returns ``(outputs, cache)`` with one row per step."""
    s, m, squeeze = _prep_sequence(seq, mask)
    T, B, _ = s.shape
    if h0 is None:
        h = np.zeros((B, p.hidden_dim))
    else:
        h = np.asarray(h0, dtype=np.float64).reshape(B, p.hidden_dim)
    out = np.empty((T, B, p.hidden_dim))
    steps = []
    for t in range(T):
        h_new, c = gru_cell_forward(p, s[t], h)
        if m is not None:
            keep = m[t][:, None]
            h_new = keep * h_new + (1.0 - keep) * h
        out[t] = h_new
        steps.append(c)
        h = h_new
    cache = GruLayerCache(steps, m, squeeze)
    return (out[:, 0, :] if squeeze else out), cache


def gru_layer_backward(cache: GruLayerCache, grad_out, grad_h_last=None):
    """Backprop through time; returns ``(grad_params, grad_seq, grad_h0)``."""
    g_out = np.asarray(grad_out, dtype=np.float64)
    if cache.squeeze:
        g_out = g_out[:, None, :]
    T = len(cache.steps)
    if g_out.shape[0] != T:
        raise InvalidState("gradient length does not match the cached sequence")
    carry = np.zeros_like(cache.steps[0].h_prev)
    if grad_h_last is not None:
        carry = carry + np.asarray(grad_h_last, dtype=np.float64).reshape(carry.shape)
    grad_seq = np.empty((T,) + cache.steps[0].x.shape)
    acc = None
    for t in range(T - 1, -1, -1):
        g = g_out[t] + carry
        if cache.mask is not None:
            keep = cache.mask[t][:, None]
            g_cell, passthrough = keep * g, (1.0 - keep) * g
        else:
            g_cell, passthrough = g, 0.0
        gp, gx, gh = gru_cell_backward(cache.steps[t], g_cell)
        acc = _add_gru_grads(acc, gp)
        grad_seq[t] = gx
        carry = gh + passthrough
    if cache.squeeze:
        return acc, grad_seq[:, 0, :], carry[0]
    return acc, grad_seq, carry


class BiGruCache(NamedTuple):
    fwd: GruLayerCache
    bwd: GruLayerCache
    squeeze: bool


def bigru_layer_forward(fwd: GruCellParams, bwd: GruCellParams, seq, mask=None):
    """Bidirectional GRU; row t is ``concat(forward h_t, backward h_t)``.

    The backward direction runs on the time-reversed sequence and its outputs
    are reversed back.  With right-padded masked batches the reversed pass
    idles through the padding (state stays zero) before reaching real frames.
    """
    if fwd.hidden_dim != bwd.hidden_dim or fwd.input_dim != bwd.input_dim:
        raise InvalidArgument("forward and backward cells must have identical dimensions")
    s, m, squeeze = _prep_sequence(seq, mask)
    out_f, cf = gru_layer_forward(fwd, s, mask=m)
    out_b, cb = gru_layer_forward(bwd, s[::-1], mask=None if m is None else m[::-1])
    out = np.concatenate([out_f, out_b[::-1]], axis=-1)
    cache = BiGruCache(cf, cb, squeeze)
    return (out[:, 0, :] if squeeze else out), cache


def bigru_layer_backward(cache: BiGruCache, grad_out, grad_final_fwd=None, grad_first_bwd=None):
    """Returns ``(grad_fwd_params, grad_bwd_params, grad_seq)``.

    ``grad_final_fwd``/``grad_first_bwd`` are extra gradients on the forward
    state after the last step and on the backward state at time 0; these are
    the states a sequence summary reads.
    """
    g = np.asarray(grad_out, dtype=np.float64)
    if cache.squeeze:
        g = g[:, None, :]
    H = g.shape[-1] // 2
    gf, gsf, _ = gru_layer_backward(cache.fwd, g[..., :H], grad_final_fwd)
    gb, gsb, _ = gru_layer_backward(cache.bwd, g[::-1, :, H:], grad_first_bwd)
    grad_seq = gsf + gsb[::-1]
    if cache.squeeze:
        grad_seq = grad_seq[:, 0, :]
    return gf, gb, grad_seq


# ---------------------------------------------------------------------------
# Dense, softmax, loss
# ---------------------------------------------------------------------------


@dataclass
class DenseParams:
    W: np.ndarray
    b: np.ndarray
    activation: str = "linear"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise InvalidArgument(f"unknown activation {self.activation!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[1],):
            raise InvalidArgument(f"inconsistent dense shapes W{self.W.shape} b{self.b.shape}")

    @classmethod
    def init(cls, n_in: int, n_out: int, rng, activation="linear") -> "DenseParams":
        return cls(glorot_uniform(rng, n_in, n_out), np.zeros(n_out), activation)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b}


def leaky_relu(v, alpha: float = LEAKY_SLOPE):
    v = np.asarray(v, dtype=np.float64)
    return np.where(v >= 0, v, alpha * v)


def softmax(v):
    """Numerically stable softmax along the last axis."""
    v = np.asarray(v, dtype=np.float64)
    e = np.exp(v - v.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs, target_index):
    """``-log probs[target]``; vectorised over leading axes when targets is an array."""
    probs = np.asarray(probs, dtype=np.float64)
    t = np.asarray(target_index)
    n = probs.shape[-1]
    if np.any(t < 0) or np.any(t >= n):
        raise InvalidArgument(f"target index out of range for {n} classes")
    if probs.ndim == 1:
        return float(-np.log(probs[int(t)]))
    picked = np.take_along_axis(probs, t[..., None].astype(np.intp), axis=-1)[..., 0]
    return -np.log(picked)


def softmax_cross_entropy(logits, targets):
    """Mean cross entropy of ``softmax(logits)`` and the gradient w.r.t. ``logits``."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.intp)
    n, k = logits.shape
    if np.any(targets < 0) or np.any(targets >= k):
        raise InvalidArgument(f"target index out of range for {k} classes")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_z - shifted[rows, targets]))
    grad = np.exp(shifted - log_z[:, None])
    grad[rows, targets] -= 1.0
    return loss, grad / n


class DenseCache(NamedTuple):
    params: DenseParams
    x: np.ndarray
    pre: np.ndarray
    y: np.ndarray


def dense_forward(p: DenseParams, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != p.W.shape[0]:
        raise InvalidArgument(f"dense expects {p.W.shape[0]} inputs, got shape {x.shape}")
    pre = x @ p.W + p.b
    if p.activation == "leaky_relu":
        y = leaky_relu(pre)
    elif p.activation == "softmax":
        y = softmax(pre)
    else:
        y = pre
    return y, DenseCache(p, x, pre, y)


def dense_backward(cache: DenseCache, grad_y):
    """Returns ``(grad_params, grad_x)`` where grad_params is a DenseParams."""
    g = np.asarray(grad_y, dtype=np.float64)
    if g.shape != cache.y.shape:
        raise InvalidState("gradient shape does not match the cached dense output")
    act = cache.params.activation
    if act == "leaky_relu":
        g = np.where(cache.pre >= 0, g, LEAKY_SLOPE * g)
    elif act == "softmax":
        y = cache.y
        g = y * (g - (g * y).sum(axis=-1, keepdims=True))
    x2 = cache.x.reshape(-1, cache.x.shape[-1])
    g2 = g.reshape(-1, g.shape[-1])
    grads = DenseParams(x2.T @ g2, g2.sum(0), act)
    return grads, g @ cache.params.W.T


# ---------------------------------------------------------------------------
# Batch normalisation and dropout
# ---------------------------------------------------------------------------


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.99
    epsilon: float = 1e-5

    @classmethod
    def init(cls, dim: int, momentum: float = 0.99, epsilon: float = 1e-5) -> "BatchNormParams":
        return cls(np.ones(dim), np.zeros(dim), np.zeros(dim), np.ones(dim), momentum, epsilon)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"gamma": self.gamma, "beta": self.beta}


class BatchNormCache(NamedTuple):
    params: BatchNormParams
    x_hat: np.ndarray
    inv_std: np.ndarray
    train: bool


def batchnorm_forward(p: BatchNormParams, batch, mode: str = "train", update_stats: bool = True):
    """Normalise a ``(B, dim)`` batch.  Train mode also updates the running statistics."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != p.gamma.shape[0]:
        raise InvalidArgument(f"batch must be (B, {p.gamma.shape[0]}), got {x.shape}")
    if mode == "train":
        if x.shape[0] < 2:
            raise InvalidArgument("batch norm in train mode needs at least 2 rows")
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        if update_stats:
            p.running_mean *= p.momentum
            p.running_mean += (1.0 - p.momentum) * mean
            p.running_var *= p.momentum
            p.running_var += (1.0 - p.momentum) * var
    elif mode == "infer":
        mean, var = p.running_mean, p.running_var
    else:
        raise InvalidArgument(f"mode must be 'train' or 'infer', got {mode!r}")
    inv_std = 1.0 / np.sqrt(var + p.epsilon)
    x_hat = (x - mean) * inv_std
    return p.gamma * x_hat + p.beta, BatchNormCache(p, x_hat, inv_std, mode == "train")


def batchnorm_backward(cache: BatchNormCache, grad_y):
    """Returns ``(grad_gamma, grad_beta, grad_x)``."""
    g = np.asarray(grad_y, dtype=np.float64)
    x_hat = cache.x_hat
    d_gamma = (g * x_hat).sum(0)
    d_beta = g.sum(0)
    d_xhat = g * cache.params.gamma
    if not cache.train:
        return d_gamma, d_beta, d_xhat * cache.inv_std
    n = g.shape[0]
    d_x = cache.inv_std / n * (n * d_xhat - d_xhat.sum(0) - x_hat * (d_xhat * x_hat).sum(0))
    return d_gamma, d_beta, d_x


def dropout(x, rate: float = 0.5, mode: str = "train", rng: np.random.Generator | None = None):
    """Inverted dropout; returns ``(output, mask)`` with ``mask`` the per-entry scale."""
    if not 0.0 <= rate < 1.0:
        raise InvalidArgument(f"dropout rate must lie in [0, 1), got {rate}")
    x = np.asarray(x, dtype=np.float64)
    if mode == "infer" or rate == 0.0:
        return x.copy(), np.ones_like(x)
    if mode != "train":
        raise InvalidArgument(f"mode must be 'train' or 'infer', got {mode!r}")
    if rng is None:
        raise InvalidArgument("train-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState):
    """Bias-corrected Adam update applied in place to every array in ``params``."""
    if set(grads) - set(params):
        raise InvalidArgument(f"gradients for unknown parameters: {sorted(set(grads) - set(params))}")
    for name, g in grads.items():
        if np.shape(g) != params[name].shape:
            raise InvalidArgument(f"gradient for {name} has shape {np.shape(g)}, "
                                  f"parameter has {params[name].shape}")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, g in grads.items():
        m = state.m.setdefault(name, np.zeros_like(params[name]))
        v = state.v.setdefault(name, np.zeros_like(params[name]))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        params[name] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params, state


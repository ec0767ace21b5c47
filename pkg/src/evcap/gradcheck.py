"""Finite-difference verification of every analytic backward pass.

Each check builds a tiny random layer, reduces its output to a scalar with a
fixed random projection and compares analytic gradients against central
differences (step 1e-5) for every parameter and input coordinate.
"""

from __future__ import annotations

import numpy as np

from . import nn_core as nn
from .captioner import ModelConfig, build_model, forward_backward, make_batch
from .embeddings import sgns_loss_and_grads

FD_STEP = 1e-5
TOLERANCE = 1e-4


def numerical_gradient(f, arr: np.ndarray, h: float = FD_STEP, indices=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``arr``, perturbed in place.

    With ``indices`` only those coordinates are differenced (others stay 0).
    """
    grad = np.zeros_like(arr, dtype=np.float64)
    for idx in (np.ndindex(arr.shape) if indices is None else indices):
        old = arr[idx]
        arr[idx] = old + h
        fp = f()
        arr[idx] = old - h
        fm = f()
        arr[idx] = old
        grad[idx] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic, numeric, floor: float = 1e-6) -> float:
    """max |a − n| / max(|a| + |n|, floor) over all coordinates.

    Central differences carry round-off of order eps·|f|/h ≈ 1e-11 for O(1)
    losses; the floor keeps near-zero coordinates from turning that noise
    into a spurious relative error (an absolute check at ~1e-10).
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor)))


def _worst(pairs) -> float:
    return max(relative_error(a, n) for a, n in pairs)


def check_gru_cell(seed: int, input_dim=4, hidden_dim=8, batch=3) -> float:
    rng = nn.seeded_rng(seed)
    p = nn.GruCellParams.init(input_dim, hidden_dim, rng)
    for b in (p.b_z, p.b_r, p.b_h):
        b[:] = rng.normal(0, 0.5, b.shape)
    x = rng.normal(size=(batch, input_dim))
    h = rng.uniform(-0.9, 0.9, size=(batch, hidden_dim))
    w = rng.normal(size=(batch, hidden_dim))

    def f():
        return float(np.sum(w * nn.gru_cell_forward(p, x, h)[0]))

    _, cache = nn.gru_cell_forward(p, x, h)
    gp, gx, gh = nn.gru_cell_backward(cache, w)
    pairs = [(getattr(gp, k), numerical_gradient(f, getattr(p, k))) for k in p.NAMES]
    pairs += [(gx, numerical_gradient(f, x)), (gh, numerical_gradient(f, h))]
    return _worst(pairs)


def check_gru_layer(seed: int, input_dim=3, hidden_dim=4, T=5, batch=2) -> float:
    """BPTT through a masked GRU layer with a nonzero initial state."""
    rng = nn.seeded_rng(seed)
    p = nn.GruCellParams.init(input_dim, hidden_dim, rng)
    seq = rng.normal(size=(T, batch, input_dim))
    h0 = rng.uniform(-0.5, 0.5, size=(batch, hidden_dim))
    mask = np.ones((T, batch))
    mask[T - 2:, 1] = 0.0
    w = rng.normal(size=(T, batch, hidden_dim))

    def f():
        return float(np.sum(w * nn.gru_layer_forward(p, seq, h0, mask)[0]))

    _, cache = nn.gru_layer_forward(p, seq, h0, mask)
    gp, gs, gh0 = nn.gru_layer_backward(cache, w)
    pairs = [(getattr(gp, k), numerical_gradient(f, getattr(p, k))) for k in p.NAMES]
    pairs += [(gs, numerical_gradient(f, seq)), (gh0, numerical_gradient(f, h0))]
    return _worst(pairs)


def check_bigru(seed: int, input_dim=3, hidden_dim=4, T=4, batch=2) -> float:
    rng = nn.seeded_rng(seed)
    fwd = nn.GruCellParams.init(input_dim, hidden_dim, rng)
    bwd = nn.GruCellParams.init(input_dim, hidden_dim, rng)
    seq = rng.normal(size=(T, batch, input_dim))
    mask = np.ones((T, batch))
    mask[T - 1, 0] = 0.0
    w = rng.normal(size=(T, batch, 2 * hidden_dim))

    def f():
        return float(np.sum(w * nn.bigru_layer_forward(fwd, bwd, seq, mask)[0]))

    _, cache = nn.bigru_layer_forward(fwd, bwd, seq, mask)
    gf, gb, gs = nn.bigru_layer_backward(cache, w)
    pairs = [(getattr(gf, k), numerical_gradient(f, getattr(fwd, k))) for k in fwd.NAMES]
    pairs += [(getattr(gb, k), numerical_gradient(f, getattr(bwd, k))) for k in bwd.NAMES]
    pairs.append((gs, numerical_gradient(f, seq)))
    return _worst(pairs)


def check_dense(seed: int, n_in=5, n_out=4, batch=3) -> float:
    rng = nn.seeded_rng(seed)
    worst = 0.0
    for act in nn.ACTIVATIONS:
        p = nn.DenseParams.init(n_in, n_out, rng, act)
        p.b[:] = rng.normal(0, 0.5, n_out)
        x = rng.normal(size=(batch, n_in))
        w = rng.normal(size=(batch, n_out))

        def f():
            return float(np.sum(w * nn.dense_forward(p, x)[0]))

        _, cache = nn.dense_forward(p, x)
        gp, gx = nn.dense_backward(cache, w)
        worst = max(worst, _worst([(gp.W, numerical_gradient(f, p.W)), (gp.b, numerical_gradient(f, p.b)),
                                   (gx, numerical_gradient(f, x))]))
    return worst


def check_softmax_ce(seed: int, n=4, k=6) -> float:
    rng = nn.seeded_rng(seed)
    logits = rng.normal(size=(n, k))
    targets = rng.integers(0, k, size=n)

    def f():
        return nn.softmax_cross_entropy(logits, targets)[0]

    _, g = nn.softmax_cross_entropy(logits, targets)
    return relative_error(g, numerical_gradient(f, logits))


def check_batchnorm(seed: int, batch=6, dim=4) -> float:
    rng = nn.seeded_rng(seed)
    worst = 0.0
    for mode in ("train", "infer"):
        p = nn.BatchNormParams.init(dim)
        p.gamma[:] = rng.uniform(0.5, 1.5, dim)
        p.beta[:] = rng.normal(size=dim)
        p.running_mean[:] = rng.normal(size=dim)
        p.running_var[:] = rng.uniform(0.5, 2.0, dim)
        x = rng.normal(size=(batch, dim))
        w = rng.normal(size=(batch, dim))

        def f():
            return float(np.sum(w * nn.batchnorm_forward(p, x, mode, update_stats=False)[0]))

        _, cache = nn.batchnorm_forward(p, x, mode, update_stats=False)
        gg, gb, gx = nn.batchnorm_backward(cache, w)
        worst = max(worst, _worst([(gg, numerical_gradient(f, p.gamma)), (gb, numerical_gradient(f, p.beta)),
                                   (gx, numerical_gradient(f, x))]))
    return worst


def check_sgns(seed: int, dim=6, k=3) -> float:
    rng = nn.seeded_rng(seed)
    v = rng.normal(0, 0.5, dim)
    u_o = rng.normal(0, 0.5, dim)
    u_n = rng.normal(0, 0.5, (k, dim))

    def f():
        return sgns_loss_and_grads(v, u_o, u_n)[0]

    _, gv, go, gn = sgns_loss_and_grads(v, u_o, u_n)
    return _worst([(gv, numerical_gradient(f, v)), (go, numerical_gradient(f, u_o)),
                   (gn, numerical_gradient(f, u_n))])


TINY_CONFIG = dict(feature_dim=4, event_dim=3, bigru1_cells=4, bigru2_cells=4, caption_gru_cells=8,
                   decoder_gru_cells=8, embed_dim=4, vocab_size=7, leaky_dense_units=16,
                   trainable_embeddings=True, dropout=0.5)


def check_captioner(seed: int, coords_per_array: int | None = 8, **overrides) -> float:
    """End-to-end: train-mode loss of a 2-clip batch w.r.t. every parameter group.

    Dropout masks are replayed from a fixed seed so the loss is a
    deterministic function of the parameters.  Each parameter array is checked
    on ``coords_per_array`` random coordinates (all of them when None).
    """
    cfg = ModelConfig(**{**TINY_CONFIG, **overrides})
    rng = nn.seeded_rng(seed)
    model = build_model(cfg, rng)
    for name, arr in model.params.items():
        if name.endswith(("b_z", "b_r", "b_h", ".b", "beta")):
            arr[:] = rng.normal(0, 0.3, arr.shape)
    examples = [
        (rng.normal(size=(3, cfg.feature_dim)), (rng.random(cfg.event_dim) > 0.5).astype(float), [1, 4, 5, 2]),
        (rng.normal(size=(2, cfg.feature_dim)), (rng.random(cfg.event_dim) > 0.5).astype(float), [1, 6, 2]),
    ]
    batch = make_batch(examples)

    def f():
        return forward_backward(model, batch, "train", nn.seeded_rng(seed + 7),
                                update_stats=False, need_grads=False)[0]

    _, grads = forward_backward(model, batch, "train", nn.seeded_rng(seed + 7), update_stats=False)
    worst = 0.0
    for name in sorted(model.params):
        arr = model.params[name]
        if coords_per_array is None or arr.size <= coords_per_array:
            idx = None
            analytic = grads[name]
        else:
            flat = rng.choice(arr.size, size=coords_per_array, replace=False)
            idx = [np.unravel_index(i, arr.shape) for i in flat]
            analytic = np.zeros_like(arr)
            for i in idx:
                analytic[i] = grads[name][i]
        worst = max(worst, relative_error(analytic, numerical_gradient(f, arr, indices=idx)))
    return worst


CHECKS = {
    "gru_cell": check_gru_cell,
    "gru_layer": check_gru_layer,
    "bigru": check_bigru,
    "dense": check_dense,
    "softmax_ce": check_softmax_ce,
    "batchnorm": check_batchnorm,
    "sgns": check_sgns,
    "captioner": check_captioner,
}


def run_gradcheck(seed: int = 42, n_seeds: int = 20) -> dict[str, float]:
    """Worst relative error per layer over ``n_seeds`` consecutive seeds."""
    return {name: max(fn(seed + s) for s in range(n_seeds)) for name, fn in CHECKS.items()}

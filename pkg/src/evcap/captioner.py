"""Event-conditioned BiGRU/GRU captioner: model, training loop, greedy decoding, ACM1 files.

Wiring (per clip)::

    frames  = concat(x_t, events)            event multi-hot tiled over time
    frames  = batchnorm(frames)
    h1      = BiGRU(bigru1_cells)(frames)     dropout on every step
    h2      = BiGRU(bigru2_cells)(h1)
    audio   = concat(final fwd state, final bwd state of h2)
    prefix  = GRU(caption_gru_cells)(embeddings[prefix ids])[-1]
    dec     = GRU(decoder_gru_cells) one step from zero state on concat(audio, prefix)
    probs   = softmax(dense(dropout(leaky_dense(dec))))

Training is teacher-forced.  Running the caption GRU once over a whole caption
yields the encoding of every prefix at once (the encoder is causal and starts
from zero), so all partial-caption pairs of a caption share one pass.
"""

from __future__ import annotations

import json
import logging
import math
import struct
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import nn_core as nn
from .errors import FormatError, InvalidArgument, NumericError
from .features_io import Manifest, atomic_write_bytes
from .sound_events import DEFAULT_THRESHOLD, EventCorpus, clip_event_vector
from .text_prep import EOS_ID, PAD_ID, SOS_ID, Vocabulary, normalize_caption

log = logging.getLogger(__name__)

MODEL_MAGIC = b"ACM1"
FORMAT_VERSION = 1
GRU_LAYERS = ("enc1_fwd", "enc1_bwd", "enc2_fwd", "enc2_bwd", "cap", "dec")


@dataclass
class ModelConfig:
    feature_dim: int = 2048
    event_dim: int = 600
    bigru1_cells: int = 32
    bigru2_cells: int = 64
    caption_gru_cells: int = 128
    decoder_gru_cells: int = 128
    embed_dim: int = 256
    vocab_size: int = 4300
    dropout: float = 0.5
    max_decode_len: int = 30
    use_leaky_dense: bool = True
    leaky_dense_units: int = 128
    trainable_embeddings: bool = False
    bn_momentum: float = 0.99
    bn_epsilon: float = 1e-5

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.type in ("int",) and (not isinstance(v, int) or v < 1):
                raise InvalidArgument(f"{f.name} must be a positive integer, got {v!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidArgument(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def encoder_input_dim(self) -> int:
        return self.feature_dim + self.event_dim

    @property
    def decoder_input_dim(self) -> int:
        return 2 * self.bigru2_cells + self.caption_gru_cells


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 42

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidArgument("epochs must be >= 1")
        if self.batch_size < 2:
            raise InvalidArgument("batch_size must be >= 2 (batch normalisation)")


def count_parameters(config: ModelConfig) -> dict[str, int]:
    """Closed-form trainable parameter counts per layer group."""
    c = config
    gru = nn.GruCellParams.count
    counts = {
        "bn": 2 * c.encoder_input_dim,
        "enc1": 2 * gru(c.encoder_input_dim, c.bigru1_cells),
        "enc2": 2 * gru(2 * c.bigru1_cells, c.bigru2_cells),
        "cap": gru(c.embed_dim, c.caption_gru_cells),
        "dec": gru(c.decoder_input_dim, c.decoder_gru_cells),
    }
    head_in = c.decoder_gru_cells
    if c.use_leaky_dense:
        counts["hid"] = head_in * c.leaky_dense_units + c.leaky_dense_units
        head_in = c.leaky_dense_units
    counts["out"] = head_in * c.vocab_size + c.vocab_size
    if c.trainable_embeddings:
        counts["embed"] = c.vocab_size * c.embed_dim
    counts["total"] = sum(counts.values())
    return counts


class CaptionerModel:
    """Trainable arrays live in ``params``; non-trainable state in ``buffers``.

    ``vocab``, ``event_labels`` and ``event_corpus`` travel with the model so
    a saved file is enough to caption raw manifests.
    """

    version = f"ACM1/{FORMAT_VERSION}"

    def __init__(self, config: ModelConfig, params: dict, buffers: dict,
                 vocab: Vocabulary | None = None, event_labels=None, event_corpus=None,
                 threshold: float = DEFAULT_THRESHOLD):
        self.config = config
        self.params = params
        self.buffers = buffers
        self.vocab = vocab
        self.event_labels = list(event_labels) if event_labels is not None else None
        self.event_corpus = event_corpus
        self.threshold = threshold

    def gru(self, name: str) -> nn.GruCellParams:
        return nn.GruCellParams.from_arrays({k: self.params[f"{name}.{k}"] for k in nn.GruCellParams.NAMES})

    def dense(self, name: str, activation: str) -> nn.DenseParams:
        return nn.DenseParams(self.params[f"{name}.W"], self.params[f"{name}.b"], activation)

    def batchnorm(self) -> nn.BatchNormParams:
        return nn.BatchNormParams(self.params["bn.gamma"], self.params["bn.beta"],
                                  self.buffers["bn.running_mean"], self.buffers["bn.running_var"],
                                  self.config.bn_momentum, self.config.bn_epsilon)

    @property
    def embeddings(self) -> np.ndarray:
        return self.params["embed"] if "embed" in self.params else self.buffers["embed"]

    @property
    def n_params(self) -> int:
        return int(sum(a.size for a in self.params.values()))

    def copy(self) -> "CaptionerModel":
        return CaptionerModel(self.config,
                              {k: v.copy() for k, v in self.params.items()},
                              {k: v.copy() for k, v in self.buffers.items()},
                              self.vocab, self.event_labels, self.event_corpus, self.threshold)

    def events_for(self, probs) -> np.ndarray:
        """Multi-hot event vector for a 527-probability vector, using the model's corpus."""
        if self.event_labels is None or self.event_corpus is None:
            raise InvalidArgument("model carries no event label table / corpus")
        return clip_event_vector(probs, self.event_labels, self.event_corpus, self.threshold)


def build_model(config: ModelConfig, rng: np.random.Generator, embeddings=None, vocab=None,
                event_labels=None, event_corpus=None, threshold=DEFAULT_THRESHOLD) -> CaptionerModel:
    """Glorot-uniform weights, zero biases, unit BN scale."""
    c = config
    if vocab is not None and len(vocab) != c.vocab_size:
        raise InvalidArgument(f"vocab has {len(vocab)} tokens, config says {c.vocab_size}")
    if event_corpus is not None and len(event_corpus) != c.event_dim:
        raise InvalidArgument(f"event corpus has {len(event_corpus)} tokens, config says {c.event_dim}")
    params: dict[str, np.ndarray] = {}
    bn = nn.BatchNormParams.init(c.encoder_input_dim)
    params["bn.gamma"], params["bn.beta"] = bn.gamma, bn.beta
    dims = {
        "enc1_fwd": (c.encoder_input_dim, c.bigru1_cells),
        "enc1_bwd": (c.encoder_input_dim, c.bigru1_cells),
        "enc2_fwd": (2 * c.bigru1_cells, c.bigru2_cells),
        "enc2_bwd": (2 * c.bigru1_cells, c.bigru2_cells),
        "cap": (c.embed_dim, c.caption_gru_cells),
        "dec": (c.decoder_input_dim, c.decoder_gru_cells),
    }
    for name in GRU_LAYERS:
        for k, v in nn.GruCellParams.init(*dims[name], rng).arrays().items():
            params[f"{name}.{k}"] = v
    head_in = c.decoder_gru_cells
    if c.use_leaky_dense:
        d = nn.DenseParams.init(head_in, c.leaky_dense_units, rng)
        params["hid.W"], params["hid.b"] = d.W, d.b
        head_in = c.leaky_dense_units
    d = nn.DenseParams.init(head_in, c.vocab_size, rng)
    params["out.W"], params["out.b"] = d.W, d.b

    if embeddings is None:
        emb = rng.uniform(-0.5 / c.embed_dim, 0.5 / c.embed_dim, size=(c.vocab_size, c.embed_dim))
    else:
        emb = np.array(embeddings, dtype=np.float64)
        if emb.shape != (c.vocab_size, c.embed_dim):
            raise InvalidArgument(f"embeddings must be {(c.vocab_size, c.embed_dim)}, got {emb.shape}")
    buffers = {"bn.running_mean": bn.running_mean, "bn.running_var": bn.running_var}
    if c.trainable_embeddings:
        params["embed"] = emb
    else:
        buffers["embed"] = emb
    model = CaptionerModel(c, params, buffers, vocab, event_labels, event_corpus, threshold)
    log.info("built captioner with %d trainable parameters", model.n_params)
    return model


# ---------------------------------------------------------------------------
# Batched teacher-forced forward / backward
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    feats: np.ndarray     # (T, B, feature_dim), zero padded
    frame_mask: np.ndarray  # (T, B)
    events: np.ndarray    # (B, event_dim)
    ids: np.ndarray       # (L, B) caption ids incl. markers, PAD padded
    id_mask: np.ndarray   # (L, B)

    @property
    def n_tokens(self) -> int:
        return int(self.id_mask[1:].sum())


def make_batch(examples) -> Batch:
    """``examples``: sequence of ``(features (T, D), events (E,), caption ids)``."""
    B = len(examples)
    T = max(len(f) for f, _, _ in examples)
    L = max(len(ids) for _, _, ids in examples)
    D = examples[0][0].shape[1]
    feats = np.zeros((T, B, D))
    fmask = np.zeros((T, B))
    ids = np.full((L, B), PAD_ID, dtype=np.int64)
    imask = np.zeros((L, B))
    for b, (f, _, cap) in enumerate(examples):
        if len(cap) < 2:
            raise InvalidArgument("captions need at least <sos> and <eos>")
        feats[: len(f), b] = f
        fmask[: len(f), b] = 1.0
        ids[: len(cap), b] = cap
        imask[: len(cap), b] = 1.0
    events = np.stack([np.asarray(e, dtype=np.float64) for _, e, _ in examples])
    return Batch(feats, fmask, events, ids, imask)


def _encode_audio_batch(model, feats, fmask, events, mode, rng, update_stats=True):
    c = model.config
    T, B, D = feats.shape
    if D != c.feature_dim:
        raise InvalidArgument(f"features have {D} columns, model expects {c.feature_dim}")
    if events.shape != (B, c.event_dim):
        raise InvalidArgument(f"event vectors must be (B, {c.event_dim}), got {events.shape}")
    x = np.concatenate([feats, np.broadcast_to(events, (T, B, c.event_dim))], axis=2)
    valid = fmask.astype(bool)
    y, bn_cache = nn.batchnorm_forward(model.batchnorm(), x[valid], mode, update_stats=update_stats)
    xn = np.zeros_like(x)
    xn[valid] = y
    h1, c1 = nn.bigru_layer_forward(model.gru("enc1_fwd"), model.gru("enc1_bwd"), xn, mask=fmask)
    h1d, m1 = nn.dropout(h1, c.dropout, mode, rng)
    h2, c2 = nn.bigru_layer_forward(model.gru("enc2_fwd"), model.gru("enc2_bwd"), h1d, mask=fmask)
    k = c.bigru2_cells
    audio = np.concatenate([h2[-1, :, :k], h2[0, :, k:]], axis=1)
    return audio, (valid, bn_cache, c1, m1, c2, h2.shape)


def _head_forward(model, dec_in, mode, rng):
    c = model.config
    n = dec_in.shape[0]
    hd, cd = nn.gru_cell_forward(model.gru("dec"), dec_in, np.zeros((n, c.decoder_gru_cells)))
    ch = None
    z = hd
    if c.use_leaky_dense:
        z, ch = nn.dense_forward(model.dense("hid", "leaky_relu"), hd)
    zd, m2 = nn.dropout(z, c.dropout, mode, rng)
    logits, co = nn.dense_forward(model.dense("out", "linear"), zd)
    return logits, (cd, ch, m2, co)


def forward_backward(model: CaptionerModel, batch: Batch, mode="train", rng=None,
                     update_stats=True, need_grads=True):
    """Mean per-token cross entropy over the batch and (optionally) its gradients."""
    c = model.config
    audio, acache = _encode_audio_batch(model, batch.feats, batch.frame_mask, batch.events,
                                        mode, rng, update_stats)
    inputs, targets = batch.ids[:-1], batch.ids[1:]
    tmask = batch.id_mask[1:]
    emb = model.embeddings[inputs]
    C, cc = nn.gru_layer_forward(model.gru("cap"), emb, mask=tmask)
    idx_k, idx_b = np.nonzero(tmask)
    dec_in = np.concatenate([audio[idx_b], C[idx_k, idx_b]], axis=1)
    logits, hcache = _head_forward(model, dec_in, mode, rng)
    loss, g_logits = nn.softmax_cross_entropy(logits, targets[idx_k, idx_b])
    if not need_grads:
        return loss, None

    grads: dict[str, np.ndarray] = {}
    cd, ch, m2, co = hcache
    g_out, g_zd = nn.dense_backward(co, g_logits)
    grads["out.W"], grads["out.b"] = g_out.W, g_out.b
    g_z = g_zd * m2
    if ch is not None:
        g_hid, g_hd = nn.dense_backward(ch, g_z)
        grads["hid.W"], grads["hid.b"] = g_hid.W, g_hid.b
    else:
        g_hd = g_z
    g_dec, g_dec_in, _ = nn.gru_cell_backward(cd, g_hd)
    _store_gru(grads, "dec", g_dec)

    k2 = 2 * c.bigru2_cells
    g_audio = np.zeros_like(audio)
    np.add.at(g_audio, idx_b, g_dec_in[:, :k2])
    g_C = np.zeros_like(C)
    g_C[idx_k, idx_b] = g_dec_in[:, k2:]
    g_cap, g_emb, _ = nn.gru_layer_backward(cc, g_C)
    _store_gru(grads, "cap", g_cap)
    if "embed" in model.params:
        g_e = np.zeros_like(model.params["embed"])
        np.add.at(g_e, inputs, g_emb)
        grads["embed"] = g_e

    valid, bn_cache, c1, m1, c2, h2_shape = acache
    k = c.bigru2_cells
    g2f, g2b, g_h1d = nn.bigru_layer_backward(c2, np.zeros(h2_shape), g_audio[:, :k], g_audio[:, k:])
    _store_gru(grads, "enc2_fwd", g2f)
    _store_gru(grads, "enc2_bwd", g2b)
    g1f, g1b, g_xn = nn.bigru_layer_backward(c1, g_h1d * m1)
    _store_gru(grads, "enc1_fwd", g1f)
    _store_gru(grads, "enc1_bwd", g1b)
    grads["bn.gamma"], grads["bn.beta"], _ = nn.batchnorm_backward(bn_cache, g_xn[valid])
    return loss, grads


def _store_gru(grads, name, g: nn.GruCellParams):
    for k, v in g.arrays().items():
        grads[f"{name}.{k}"] = v


# ---------------------------------------------------------------------------
# Single-clip inference API
# ---------------------------------------------------------------------------


def encode_audio(model: CaptionerModel, feats, events, mode="infer", rng=None) -> np.ndarray:
    """128-dim (2·bigru2_cells) summary of one clip's frames and event vector."""
    f = np.asarray(feats, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 1:
        raise InvalidArgument(f"features must be a non-empty (T, D) matrix, got {f.shape}")
    e = np.asarray(events, dtype=np.float64)
    audio, _ = _encode_audio_batch(model, f[:, None, :], np.ones((f.shape[0], 1)), e[None, :],
                                   mode, rng, update_stats=False)
    return audio[0]


def encode_partial_caption(model: CaptionerModel, prefix_ids) -> np.ndarray:
    ids = np.asarray(prefix_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise InvalidArgument("prefix must be a non-empty id sequence")
    if ids[0] != SOS_ID:
        raise InvalidArgument("prefix must start with <sos>")
    out, _ = nn.gru_layer_forward(model.gru("cap"), model.embeddings[ids])
    return out[-1]


def decode_step(model: CaptionerModel, audio_ctx, caption_ctx, mode="infer", rng=None) -> np.ndarray:
    """Next-token distribution given audio and partial-caption encodings."""
    c = model.config
    a = np.asarray(audio_ctx, dtype=np.float64)
    p = np.asarray(caption_ctx, dtype=np.float64)
    if a.shape != (2 * c.bigru2_cells,) or p.shape != (c.caption_gru_cells,):
        raise InvalidArgument(f"contexts must be ({2 * c.bigru2_cells},) and ({c.caption_gru_cells},)")
    logits, _ = _head_forward(model, np.concatenate([a, p])[None, :], mode, rng)
    return nn.softmax(logits[0])


def greedy_caption(model: CaptionerModel, feats, events, vocab: Vocabulary | None = None,
                   max_len: int | None = None) -> list[str]:
    """Argmax decoding from ``<sos>`` until ``<eos>`` or ``max_len`` generated tokens.

    Ties resolve to the lowest id.  The caption encoder state is advanced one
    token at a time, which equals re-encoding the whole prefix.
    """
    vocab = vocab or model.vocab
    max_len = model.config.max_decode_len if max_len is None else max_len
    audio = encode_audio(model, feats, events)
    cap = model.gru("cap")
    h = np.zeros(model.config.caption_gru_cells)
    ids = [SOS_ID]
    for _ in range(max_len):
        h, _ = nn.gru_cell_forward(cap, model.embeddings[ids[-1]], h)
        probs = decode_step(model, audio, h)
        nxt = int(np.argmax(probs))
        ids.append(nxt)
        if nxt == EOS_ID:
            break
    return vocab.decode(ids) if vocab is not None else ids


# ---------------------------------------------------------------------------
# Data preparation and training
# ---------------------------------------------------------------------------


@dataclass
class Example:
    clip_id: str
    feats: np.ndarray
    events: np.ndarray
    captions: list  # id lists incl. markers


def prepare_examples(manifest: Manifest, model: CaptionerModel, zero_events=False) -> list[Example]:
    """Load features, encode events and captions for every clip in ``manifest``."""
    if model.vocab is None:
        raise InvalidArgument("model carries no vocabulary")
    out = []
    for rec in manifest.records:
        feats = rec.features().astype(np.float64)
        events = model.events_for(rec.probs())
        if zero_events:
            events = np.zeros_like(events)
        caps = [model.vocab.encode(normalize_caption(c)) for c in rec.captions]
        out.append(Example(rec.clip_id, feats, events, caps))
    return out


def _items(examples):
    return [(ex, k) for ex in examples for k in range(len(ex.captions))]


def _batches(items, size):
    for i in range(0, len(items), size):
        yield make_batch([(ex.feats, ex.events, ex.captions[k]) for ex, k in items[i:i + size]])


def evaluate_loss(model: CaptionerModel, examples, batch_size=128) -> float:
    """Inference-mode mean cross entropy per token over every (clip, caption) item."""
    total, n = 0.0, 0
    for batch in _batches(_items(examples), batch_size):
        loss, _ = forward_backward(model, batch, mode="infer", need_grads=False)
        total += loss * batch.n_tokens
        n += batch.n_tokens
    return total / n


def train(model: CaptionerModel, train_data, val_data, tcfg: TrainConfig, log_fn=None):
    """Teacher-forced Adam training; returns ``(best_model, history)``.

    ``train_data``/``val_data`` are manifests or prepared example lists.  The
    returned model is the checkpoint with the lowest validation loss (earliest
    epoch on ties).  Each history row has epoch, train_loss (train-mode,
    per token), val_loss and seconds.
    """
    if isinstance(train_data, Manifest):
        train_data = prepare_examples(train_data, model)
    if isinstance(val_data, Manifest):
        val_data = prepare_examples(val_data, model)
    if not train_data:
        raise InvalidArgument("training set is empty")
    if val_data is not None and not val_data:
        raise InvalidArgument("validation set is empty")
    rng = nn.seeded_rng(tcfg.seed)
    state = nn.AdamState(lr=tcfg.lr, beta1=tcfg.beta1, beta2=tcfg.beta2, epsilon=tcfg.epsilon)
    items = _items(train_data)
    best, best_loss = None, math.inf
    history = []
    for epoch in range(1, tcfg.epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(len(items))
        shuffled = [items[i] for i in order]
        total, n = 0.0, 0
        for b, batch in enumerate(_batches(shuffled, tcfg.batch_size)):
            loss, grads = forward_backward(model, batch, mode="train", rng=rng)
            gmax = max(float(np.max(np.abs(g))) for g in grads.values())
            if not (math.isfinite(loss) and math.isfinite(gmax)):
                raise NumericError(f"non-finite training step at epoch {epoch}, batch {b}: "
                                   f"loss={loss}, max|grad|={gmax}")
            nn.adam_step(model.params, grads, state)
            total += loss * batch.n_tokens
            n += batch.n_tokens
        train_loss = total / n
        val_loss = evaluate_loss(model, val_data, tcfg.batch_size) if val_data is not None else train_loss
        row = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
               "seconds": time.perf_counter() - start}
        history.append(row)
        if log_fn is not None:
            log_fn(row)
        if val_loss < best_loss:
            best_loss, best = val_loss, model.copy()
    return best, history


# ---------------------------------------------------------------------------
# ACM1 serialisation
# ---------------------------------------------------------------------------
#
#   b"ACM1"  u32 version  u32 n  n bytes UTF-8 JSON header
#   u32 count, then per array: u16 name length, name, u8 ndim, ndim × u32 dims,
#   prod(dims) little-endian f32.  Arrays appear in sorted name order with
#   trainable parameters first, then buffers.


def _array_order(model):
    return ([("param", k) for k in sorted(model.params)] +
            [("buffer", k) for k in sorted(model.buffers)])


def encode_model(model: CaptionerModel) -> bytes:
    header = {
        "config": asdict(model.config),
        "vocab": model.vocab.tokens if model.vocab is not None else None,
        "event_labels": model.event_labels,
        "event_corpus": model.event_corpus.tokens if model.event_corpus is not None else None,
        "threshold": model.threshold,
    }
    hjson = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    parts = [MODEL_MAGIC, struct.pack("<II", FORMAT_VERSION, len(hjson)), hjson]
    order = _array_order(model)
    parts.append(struct.pack("<I", len(order)))
    for kind, name in order:
        arr = (model.params if kind == "param" else model.buffers)[name]
        tag = f"{kind}:{name}".encode("utf-8")
        parts.append(struct.pack("<H", len(tag)) + tag + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def save_model(model: CaptionerModel, path) -> None:
    atomic_write_bytes(path, encode_model(model))


def decode_model(data: bytes, source="<bytes>") -> CaptionerModel:
    def need(pos, n):
        if pos + n > len(data):
            raise FormatError(f"{source}: truncated model file", offset=len(data))

    need(0, 12)
    if data[:4] != MODEL_MAGIC:
        raise FormatError(f"{source}: bad magic {data[:4]!r}, expected {MODEL_MAGIC!r}", offset=0)
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{source}: unsupported model version {version}", offset=4)
    pos = 12
    need(pos, hlen)
    try:
        header = json.loads(data[pos:pos + hlen].decode("utf-8"))
        config = ModelConfig(**header["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{source}: bad model header ({exc})", offset=pos) from exc
    pos += hlen
    need(pos, 4)
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    params, buffers = {}, {}
    for _ in range(count):
        need(pos, 2)
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        need(pos, nlen + 1)
        kind, _, name = data[pos:pos + nlen].decode("utf-8").partition(":")
        pos += nlen
        ndim = data[pos]
        pos += 1
        need(pos, 4 * ndim)
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        need(pos, 4 * size)
        arr = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 4 * size
        if kind not in ("param", "buffer"):
            raise FormatError(f"{source}: unknown array kind {kind!r}", offset=pos)
        (params if kind == "param" else buffers)[name] = arr
    if pos != len(data):
        raise FormatError(f"{source}: {len(data) - pos} trailing bytes", offset=pos)
    vocab = Vocabulary(header["vocab"]) if header.get("vocab") is not None else None
    corpus = EventCorpus(header["event_corpus"]) if header.get("event_corpus") is not None else None
    model = CaptionerModel(config, params, buffers, vocab, header.get("event_labels"), corpus,
                           header.get("threshold", DEFAULT_THRESHOLD))
    expected = count_parameters(config)["total"]
    if model.n_params != expected:
        raise FormatError(f"{source}: parameter count {model.n_params} does not match config ({expected})")
    return model


def load_model(path) -> CaptionerModel:
    return decode_model(Path(path).read_bytes(), source=str(path))

"""Skip-gram with negative sampling (word2vec) trained on the caption corpus.

Embedding files use the EMB1 layout (little-endian): magic ``b"EMB1"``, u32
vocabulary size V, u32 dimension, then V*dim float32 values, row-major with
rows in vocabulary id order.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, log_expit

from .errors import FormatError, InvalidArgument
from .nn_core import seeded_rng
from .text_prep import EOS_ID, PAD_ID, RESERVED, SOS_ID

log = logging.getLogger(__name__)

EMB_MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sII")
SKIP_IDS = (PAD_ID, SOS_ID, EOS_ID)


@dataclass
class SkipGramConfig:
    dim: int = 256
    window: int = 5
    negatives: int = 5
    epochs: int = 30
    lr: float = 0.025
    min_lr: float = 0.0001
    seed: int = 42

    def __post_init__(self):
        if self.window < 1 or self.negatives < 1:
            raise InvalidArgument("window and negatives must be >= 1")
        if self.dim < 1 or self.epochs < 1:
            raise InvalidArgument("dim and epochs must be >= 1")


@dataclass
class EmbeddingMatrix:
    vectors: np.ndarray
    context: np.ndarray | None = None
    loss_history: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return self.vectors.shape[0]


def generate_pairs(corpus, window: int, skip=SKIP_IDS) -> list[tuple[int, int]]:
    """(center, context) pairs within ±window inside each sentence.

    ``corpus`` holds sentences as id lists; ids in ``skip`` are removed before
    windowing so markers never act as centers or contexts.
    """
    if window < 1:
        raise InvalidArgument("window must be >= 1")
    skip = set(skip)
    pairs = []
    for sent in corpus:
        toks = [int(t) for t in sent if int(t) not in skip]
        n = len(toks)
        for i, c in enumerate(toks):
            for j in range(max(0, i - window), min(n, i + window + 1)):
                if j != i:
                    pairs.append((c, toks[j]))
    return pairs


def token_counts(corpus, vocab_size: int) -> np.ndarray:
    counts = np.zeros(vocab_size)
    for sent in corpus:
        for t in sent:
            counts[int(t)] += 1
    return counts


def negative_distribution(counts) -> np.ndarray:
    """Unigram^0.75 over non-reserved tokens."""
    w = np.asarray(counts, dtype=np.float64) ** 0.75
    w[: len(RESERVED)] = 0.0
    total = w.sum()
    if total <= 0:
        raise InvalidArgument("no non-reserved token has a positive count")
    return w / total


def sgns_loss_and_grads(v_c, u_o, u_neg):
    """SGNS loss for one (center, context, negatives) triple and its gradients.

    loss = −log σ(u_o·v_c) − Σ_n log σ(−u_n·v_c); returns
    ``(loss, grad_v_c, grad_u_o, grad_u_neg)``.
    """
    s_pos = float(u_o @ v_c)
    s_neg = u_neg @ v_c
    loss = -log_expit(s_pos) - np.sum(log_expit(-s_neg))
    g_pos = expit(s_pos) - 1.0
    g_neg = expit(s_neg)
    grad_v = g_pos * u_o + g_neg @ u_neg
    return float(loss), grad_v, g_pos * v_c, np.outer(g_neg, v_c)


def sgns_objective(vectors, context, pairs, negs) -> float:
    """Mean SGNS loss over ``pairs`` with a fixed negative table ``negs`` (len(pairs) × k)."""
    p = np.asarray(pairs)
    v = vectors[p[:, 0]]
    pos = np.einsum("ij,ij->i", context[p[:, 1]], v)
    neg = np.einsum("ikj,ij->ik", context[negs], v)
    return float(np.mean(-log_expit(pos) - log_expit(-neg).sum(1)))


def train_skipgram(pairs, config: SkipGramConfig, vocab, counts=None) -> EmbeddingMatrix:
    """Plain SGD on the SGNS objective with a linearly decaying learning rate.

    ``counts`` feeds the negative-sampling distribution; when omitted it is
    taken from how often each id occurs as a center.  ``loss_history`` holds
    the objective after every epoch, measured on a fixed negative table so the
    values are comparable across epochs.
    """
    pairs = np.asarray(list(pairs), dtype=np.int64)
    if pairs.size == 0:
        raise InvalidArgument("cannot train embeddings on an empty pair stream")
    V = len(vocab)
    if counts is None:
        counts = np.bincount(pairs[:, 0], minlength=V).astype(np.float64)
    dist = negative_distribution(counts)
    rng = seeded_rng(config.seed)
    eval_rng = seeded_rng(config.seed + 1)
    k, dim = config.negatives, config.dim
    vectors = rng.uniform(-0.5 / dim, 0.5 / dim, size=(V, dim))
    context = np.zeros((V, dim))
    eval_negs = eval_rng.choice(V, size=(len(pairs), k), p=dist)

    total = config.epochs * len(pairs)
    step = 0
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(pairs))
        negs = rng.choice(V, size=(len(pairs), k), p=dist)
        for row, idx in enumerate(order):
            lr = max(config.min_lr, config.lr * (1.0 - step / total))
            c, o = pairs[idx]
            neg = negs[row]
            _, g_v, g_o, g_n = sgns_loss_and_grads(vectors[c], context[o], context[neg])
            context[o] -= lr * g_o
            np.subtract.at(context, neg, lr * g_n)
            vectors[c] -= lr * g_v
            step += 1
        history.append(sgns_objective(vectors, context, pairs, eval_negs))
        log.debug("skip-gram epoch %d loss %.6f", epoch + 1, history[-1])
    return EmbeddingMatrix(vectors, context, history)


def train_embeddings(captions, vocab, config: SkipGramConfig) -> EmbeddingMatrix:
    """Encode normalised captions, generate pairs and train."""
    corpus = [vocab.encode(c) for c in captions]
    pairs = generate_pairs(corpus, config.window)
    return train_skipgram(pairs, config, vocab, counts=token_counts(corpus, len(vocab)))


def lookup(matrix, token_id: int) -> np.ndarray:
    vecs = matrix.vectors if isinstance(matrix, EmbeddingMatrix) else np.asarray(matrix)
    if not 0 <= int(token_id) < vecs.shape[0]:
        raise InvalidArgument(f"token id {token_id} out of range for {vecs.shape[0]} rows")
    return vecs[int(token_id)]


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise InvalidArgument("cosine is undefined for a zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def encode_embeddings(vectors) -> bytes:
    m = np.ascontiguousarray(vectors, dtype="<f4")
    if m.ndim != 2:
        raise ValueError("embedding matrix must be 2-D")
    return _HEADER.pack(EMB_MAGIC, m.shape[0], m.shape[1]) + m.tobytes()


def save_embeddings(path, matrix) -> None:
    from .features_io import atomic_write_bytes

    vecs = matrix.vectors if isinstance(matrix, EmbeddingMatrix) else matrix
    atomic_write_bytes(path, encode_embeddings(vecs))


def load_embeddings(path) -> np.ndarray:
    """Read an EMB1 file as a float32 ``(V, dim)`` array."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: header needs {_HEADER.size} bytes, file has {len(data)}", offset=len(data))
    magic, n, dim = _HEADER.unpack_from(data)
    if magic != EMB_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {EMB_MAGIC!r}", offset=0)
    expected = _HEADER.size + 4 * n * dim
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for V={n}, dim={dim}, found {len(data)}",
                          offset=min(len(data), expected))
    return np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(n, dim).copy()

"""Sound-event conditioning: threshold AudioSet probabilities, tokenise labels, multi-hot encode.

A clip's 527 class probabilities are thresholded (strictly greater than
``tau``), the selected class labels are split into word tokens, and the clip is
represented by a binary vector over the event corpus, the sorted set of all
tokens appearing in any label.
"""

from __future__ import annotations

import logging
import re
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgument
from .text_prep import strip_punctuation

log = logging.getLogger(__name__)

N_CLASSES = 527
DEFAULT_THRESHOLD = 0.1

_SPLIT = re.compile(r"[\s,()\-]+")


def threshold_events(probs, tau: float = DEFAULT_THRESHOLD) -> set[int]:
    """Indices whose probability is strictly greater than ``tau``."""
    p = np.asarray(probs, dtype=np.float64)
    if p.shape != (N_CLASSES,):
        raise InvalidArgument(f"event probability vector must have {N_CLASSES} entries, got {p.shape}")
    if not 0.0 <= tau <= 1.0:
        raise InvalidArgument(f"threshold must lie in [0, 1], got {tau}")
    return {int(i) for i in np.flatnonzero(p > tau)}


def tokenize_label(label: str) -> list[str]:
    """Split an event label into lowercase word tokens.

    Splits on whitespace, commas, parentheses and hyphens; remaining
    punctuation inside fragments is dropped.

    >>> tokenize_label("Middle Eastern Music")
    ['middle', 'eastern', 'music']
    """
    if not label or not label.strip():
        raise InvalidArgument("event label must be non-empty")
    frags = (strip_punctuation(f) for f in _SPLIT.split(label.lower()))
    return [f for f in frags if f]


class EventLabelTable:
    """The 527 AudioSet display labels, index-aligned with the probability vector."""

    def __init__(self, labels, n_classes: int = N_CLASSES):
        labels = [str(l) for l in labels]
        if len(labels) != n_classes:
            raise InvalidArgument(f"label table must have exactly {n_classes} entries, got {len(labels)}")
        empty = [i for i, l in enumerate(labels) if not l.strip()]
        if empty:
            raise InvalidArgument(f"empty labels at lines {[i + 1 for i in empty]}")
        self.labels = labels

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i):
        return self.labels[i]

    @classmethod
    def load(cls, path) -> "EventLabelTable":
        text = Path(path).read_text(encoding="utf-8")
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if len(lines) != N_CLASSES:
            raise FormatError(f"{path}: label file must have exactly {N_CLASSES} lines, found {len(lines)}")
        return cls([l.rstrip("\r") for l in lines])

    def save(self, path) -> None:
        from .features_io import atomic_write_bytes

        atomic_write_bytes(path, "".join(l + "\n" for l in self.labels).encode("utf-8"))


class EventCorpus:
    """Sorted, deduplicated event tokens with a token→index map."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if len(set(tokens)) != len(tokens):
            raise InvalidArgument("event corpus tokens must be unique")
        if tokens != sorted(tokens):
            raise InvalidArgument("event corpus tokens must be sorted")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, EventCorpus) and self.tokens == other.tokens

    def save(self, path) -> None:
        from .features_io import atomic_write_bytes

        atomic_write_bytes(path, "".join(t + "\n" for t in self.tokens).encode("utf-8"))

    @classmethod
    def load(cls, path) -> "EventCorpus":
        text = Path(path).read_bytes().decode("utf-8")
        if text and not text.endswith("\n"):
            raise FormatError(f"{path}: corpus file must end with a newline")
        try:
            return cls(text.split("\n")[:-1])
        except InvalidArgument as exc:
            raise FormatError(f"{path}: {exc}") from exc


def build_event_corpus(table) -> EventCorpus:
    labels = table.labels if isinstance(table, EventLabelTable) else list(table)
    tokens = set()
    for label in labels:
        tokens.update(tokenize_label(label))
    corpus = EventCorpus(sorted(tokens))
    log.info("event corpus: %d tokens from %d labels", len(corpus), len(labels))
    return corpus


def encode_clip_events(selected, table, corpus: EventCorpus) -> np.ndarray:
    """Binary vector over ``corpus`` marking tokens of every selected label."""
    labels = table.labels if isinstance(table, EventLabelTable) else list(table)
    vec = np.zeros(len(corpus))
    for i in selected:
        if not 0 <= int(i) < len(labels):
            raise InvalidArgument(f"event index {i} out of range for {len(labels)} classes")
        for tok in tokenize_label(labels[int(i)]):
            if tok not in corpus.index:
                raise InvalidArgument(f"token {tok!r} of label {labels[int(i)]!r} is not in the event corpus")
            vec[corpus.index[tok]] = 1.0
    return vec


def clip_event_vector(probs, table, corpus, tau: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """Threshold then encode: probability vector → multi-hot over the corpus."""
    return encode_clip_events(threshold_events(probs, tau), table, corpus)

"""Caption normalisation, vocabulary and partial-caption training pairs."""

from __future__ import annotations

import unicodedata
from pathlib import Path

from .errors import FormatError, InvalidArgument

PAD, SOS, EOS, UNK = "<pad>", "<sos>", "<eos>", "<unk>"
RESERVED = (PAD, SOS, EOS, UNK)
PAD_ID, SOS_ID, EOS_ID, UNK_ID = range(4)


def strip_punctuation(text: str) -> str:
    """Drop every character in a Unicode punctuation category (P*)."""
    return "".join(ch for ch in text if not unicodedata.category(ch).startswith("P"))


def normalize_caption(raw: str) -> list[str]:
    """Lowercase, remove punctuation, split on whitespace, wrap with markers.

    >>> normalize_caption("A Dog barks!")
    ['<sos>', 'a', 'dog', 'barks', '<eos>']
    """
    words = strip_punctuation(raw.lower()).split()
    return [SOS, *words, EOS]


def strip_markers(tokens) -> list[str]:
    return [t for t in tokens if t not in (SOS, EOS, PAD)]


class Vocabulary:
    """Token inventory with reserved ids 0..3 and first-appearance ordering."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[:4]) != RESERVED:
            raise InvalidArgument(f"vocabulary must start with {RESERVED}")
        if len(set(tokens)) != len(tokens):
            raise InvalidArgument("vocabulary tokens must be unique")
        self._tokens = tokens
        self._index = {t: i for i, t in enumerate(tokens)}

    def __len__(self):
        return len(self._tokens)

    def __contains__(self, token):
        return token in self._index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    def __repr__(self):
        return f"Vocabulary(size={len(self)})"

    @property
    def tokens(self) -> list[str]:
        return list(self._tokens)

    def id(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self._tokens[idx]

    def encode(self, tokens) -> list[int]:
        return [self._index.get(t, UNK_ID) for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self._tokens[int(i)] for i in ids]

    def save(self, path) -> None:
        from .features_io import atomic_write_bytes

        atomic_write_bytes(path, "".join(t + "\n" for t in self._tokens).encode("utf-8"))

    @classmethod
    def load(cls, path) -> "Vocabulary":
        data = Path(path).read_bytes().decode("utf-8")
        if data and not data.endswith("\n"):
            raise FormatError(f"{path}: vocabulary file must end with a newline")
        try:
            return cls(data.split("\n")[:-1])
        except InvalidArgument as exc:
            raise FormatError(f"{path}: {exc}") from exc


def build_vocab(captions) -> Vocabulary:
    """Vocabulary over every token of ``captions`` (normalised token lists)."""
    captions = list(captions)
    if not captions:
        raise InvalidArgument("cannot build a vocabulary from an empty corpus")
    tokens = list(RESERVED)
    seen = set(tokens)
    for cap in captions:
        for tok in cap:
            if tok not in seen:
                seen.add(tok)
                tokens.append(tok)
    return Vocabulary(tokens)


def partial_caption_pairs(seq):
    """Teacher-forcing pairs ``(tokens[:k], tokens[k])`` for k = 1..L-1."""
    seq = list(seq)
    if len(seq) < 2:
        raise InvalidArgument("a caption needs at least <sos> and <eos>")
    return [(seq[:k], seq[k]) for k in range(1, len(seq))]

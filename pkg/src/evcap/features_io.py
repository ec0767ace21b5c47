"""Dataset plumbing: AFC1 feature files, JSONL manifests, oversampling, synthetic clips.

AFC1 layout (little-endian)::

    offset 0   4 bytes   magic b"AFC1"
    offset 4   u32       T (frames)
    offset 8   u32       D (feature dimension)
    offset 12  T*D f32   row-major payload

Manifests are JSONL, one clip per line, with keys ``clip_id``, ``feature_path``,
``captions`` (exactly five strings) and either ``event_probs`` (527 numbers) or
``event_probs_path``.  Paths are relative to the manifest's directory.
"""

from __future__ import annotations

import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .nn_core import seeded_rng
from .sound_events import DEFAULT_THRESHOLD, N_CLASSES

log = logging.getLogger(__name__)

FEATURE_MAGIC = b"AFC1"
PANNS_DIM = 2048
CAPTIONS_PER_CLIP = 5
_HEADER = struct.Struct("<4sII")


def atomic_write_bytes(path, data: bytes) -> None:
    """Write ``data`` to a temp file next to ``path`` then rename over it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# AFC1 feature matrices
# ---------------------------------------------------------------------------


def encode_features(matrix) -> bytes:
    m = np.asarray(matrix)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"feature matrix must be a non-empty 2-D array, got shape {m.shape}")
    m32 = np.ascontiguousarray(m, dtype="<f4")
    if not np.all(np.isfinite(m32)):
        raise ValueError("feature matrix contains non-finite values")
    return _HEADER.pack(FEATURE_MAGIC, m32.shape[0], m32.shape[1]) + m32.tobytes()


def decode_features(data: bytes, source="<bytes>") -> np.ndarray:
    if len(data) < _HEADER.size:
        raise FormatError(f"{source}: header needs {_HEADER.size} bytes, file has {len(data)}", offset=len(data))
    magic, t, d = _HEADER.unpack_from(data)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}", offset=0)
    if t == 0:
        raise FormatError(f"{source}: frame count must be >= 1", offset=4)
    if d == 0:
        raise FormatError(f"{source}: feature dimension must be >= 1", offset=8)
    expected = _HEADER.size + 4 * t * d
    if len(data) != expected:
        kind = "truncated" if len(data) < expected else "trailing bytes in"
        raise FormatError(f"{source}: {kind} payload: expected {expected} bytes for T={t}, D={d}, "
                          f"found {len(data)}", offset=min(len(data), expected))
    m = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(t, d).astype(np.float32)
    bad = np.flatnonzero(~np.isfinite(m.ravel()))
    if bad.size:
        raise FormatError(f"{source}: non-finite feature value", offset=_HEADER.size + 4 * int(bad[0]))
    return m


def save_features(path, matrix) -> None:
    atomic_write_bytes(path, encode_features(matrix))


def load_features(path) -> np.ndarray:
    """Read an AFC1 file as a float32 ``(T, D)`` array."""
    return decode_features(Path(path).read_bytes(), source=str(path))


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


@dataclass
class ClipRecord:
    clip_id: str
    feature_path: Path
    captions: list
    event_probs: np.ndarray | None = None
    event_probs_path: Path | None = None

    def features(self) -> np.ndarray:
        return load_features(self.feature_path)

    def probs(self) -> np.ndarray:
        if self.event_probs is not None:
            return self.event_probs
        return load_event_probs(self.event_probs_path)


@dataclass
class Manifest:
    split: str
    records: list

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_id(self) -> dict:
        return {r.clip_id: r for r in self.records}


def load_event_probs(path) -> np.ndarray:
    """Event probabilities from a ``.json`` array or a 1×527 AFC1 file."""
    path = Path(path)
    if path.suffix == ".json":
        probs = np.asarray(json.loads(path.read_text(encoding="utf-8")), dtype=np.float64)
    else:
        probs = load_features(path).astype(np.float64).ravel()
    if probs.shape != (N_CLASSES,):
        raise FormatError(f"{path}: expected {N_CLASSES} event probabilities, found {probs.size}")
    return probs


def _parse_record(obj, base: Path, problems: dict) -> ClipRecord | None:
    cid = obj.get("clip_id")
    if not isinstance(cid, str) or not cid:
        problems.setdefault("<missing clip_id>", []).append("clip_id must be a non-empty string")
        return None
    errs = []
    unknown = set(obj) - {"clip_id", "feature_path", "captions", "event_probs", "event_probs_path", "split"}
    if unknown:
        errs.append(f"unknown keys {sorted(unknown)}")
    caps = obj.get("captions")
    if not isinstance(caps, list) or not all(isinstance(c, str) for c in caps):
        errs.append("captions must be a list of strings")
    elif len(caps) != CAPTIONS_PER_CLIP:
        errs.append(f"has {len(caps)} captions, expected {CAPTIONS_PER_CLIP}")
    fp = obj.get("feature_path")
    feature_path = None
    if not isinstance(fp, str):
        errs.append("feature_path missing")
    else:
        feature_path = base / fp
        if not feature_path.is_file():
            errs.append(f"feature file {fp} not found")
    probs, probs_path = None, None
    if "event_probs" in obj:
        probs = np.asarray(obj["event_probs"], dtype=np.float64)
        if probs.shape != (N_CLASSES,):
            errs.append(f"event_probs must have {N_CLASSES} entries")
        elif np.any(probs < 0) or np.any(probs > 1) or not np.all(np.isfinite(probs)):
            errs.append("event_probs must lie in [0, 1]")
    elif "event_probs_path" in obj:
        probs_path = base / obj["event_probs_path"]
        if not probs_path.is_file():
            errs.append(f"event probability file {obj['event_probs_path']} not found")
    else:
        errs.append("needs event_probs or event_probs_path")
    if errs:
        problems.setdefault(cid, []).extend(errs)
        return None
    return ClipRecord(cid, feature_path, list(caps), probs, probs_path)


def load_manifest(path, split: str | None = None) -> Manifest:
    """Parse and validate a JSONL manifest; every problem is reported at once."""
    path = Path(path)
    base = path.parent
    records, problems, seen = [], {}, set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise FormatError(f"{path}:{lineno}: each line must be a JSON object")
            rec = _parse_record(obj, base, problems)
            if rec is None:
                continue
            if rec.clip_id in seen:
                problems.setdefault(rec.clip_id, []).append("duplicate clip_id")
                continue
            seen.add(rec.clip_id)
            records.append(rec)
    if problems:
        detail = "; ".join(f"{cid}: {', '.join(msgs)}" for cid, msgs in problems.items())
        raise ValidationError(f"{path}: invalid records: {detail}", offenders=list(problems))
    if not records:
        raise ValidationError(f"{path}: manifest is empty")
    name = split or path.stem
    log.info("manifest %s: %d clips, %d captions", name, len(records), len(records) * CAPTIONS_PER_CLIP)
    return Manifest(name, records)


def manifest_lines(manifest: Manifest, base) -> str:
    base = Path(base)
    out = []
    for r in manifest.records:
        obj = {"clip_id": r.clip_id,
               "feature_path": os.path.relpath(r.feature_path, base).replace(os.sep, "/"),
               "captions": list(r.captions)}
        if r.event_probs is not None:
            obj["event_probs"] = [float(v) for v in r.event_probs]
        else:
            obj["event_probs_path"] = os.path.relpath(r.event_probs_path, base).replace(os.sep, "/")
        out.append(json.dumps(obj, ensure_ascii=False) + "\n")
    return "".join(out)


def save_manifest(manifest: Manifest, path) -> None:
    path = Path(path)
    atomic_write_text(path, manifest_lines(manifest, path.parent))


def oversample(manifest: Manifest) -> list[tuple[str, int]]:
    """Every clip once per caption: ``[(clip_id, caption_index), ...]`` in manifest order."""
    return [(r.clip_id, k) for r in manifest.records for k in range(len(r.captions))]


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

# (event label, caption phrase); a synthetic caption lists the phrases of the
# active sources in this order joined by "with".
SYNTH_SOURCES = (
    ("Dog", "dog barking"),
    ("Rain", "heavy rain"),
    ("Engine", "engine idling"),
    ("Piano", "piano music"),
    ("Bird", "birds chirping"),
    ("Speech", "people talking"),
    ("Wind", "strong wind"),
    ("Bell", "church bells"),
)
SYNTH_SILENCE = "quiet room tone"


def synthetic_label_table() -> list[str]:
    """527 labels: the synthetic sources first, then filler classes."""
    labels = [label for label, _ in SYNTH_SOURCES]
    labels += [f"Filler class {i}" for i in range(len(labels), N_CLASSES)]
    return labels


def synthetic_caption(active) -> str:
    phrases = [SYNTH_SOURCES[i][1] for i in sorted(active)]
    return " with ".join(phrases) if phrases else SYNTH_SILENCE


def synthetic_vocabulary() -> set[str]:
    words = set(SYNTH_SILENCE.split()) | {"with"}
    for _, phrase in SYNTH_SOURCES:
        words.update(phrase.split())
    return words


def synth_clip(seed: int, T: int, D: int, n_sources: int = 6, active=None):
    """Deterministic synthetic clip ``(features, event_probs, captions)``.

    Features are uniform in [-1, 1] (float32); ``active`` sources get
    probabilities in (0.5, 1], every other class stays at or below the 0.1
    threshold.  When ``active`` is None one or two of the first ``n_sources``
    sources are drawn from the seed.  All five captions are the template
    caption of the active set, so captions are a function of the events.
    """
    if T < 1 or D < 1:
        raise ValueError("T and D must be >= 1")
    if not 1 <= n_sources <= len(SYNTH_SOURCES):
        raise ValueError(f"n_sources must be in 1..{len(SYNTH_SOURCES)}")
    rng = seeded_rng(seed)
    feats = rng.uniform(-1.0, 1.0, size=(T, D)).astype(np.float32)
    probs = rng.uniform(0.0, DEFAULT_THRESHOLD, size=N_CLASSES)
    if active is None:
        k = int(rng.integers(1, 3))
        active = rng.choice(n_sources, size=min(k, n_sources), replace=False)
    active = sorted(int(a) for a in active)
    probs[active] = rng.uniform(0.5, 1.0, size=len(active))
    caption = synthetic_caption(active)
    return feats, probs, [caption] * CAPTIONS_PER_CLIP


def write_synthetic_split(directory, split: str, clips, T: int = 16, D: int = 32, seed: int = 0) -> Path:
    """Write features and a manifest for ``clips`` (a list of active-source tuples).

    Clip ``i`` is generated from seed ``seed * 100003 + i``.  Returns the manifest path.
    """
    directory = Path(directory)
    feat_dir = directory / "features" / split
    feat_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for i, active in enumerate(clips):
        cid = f"{split}_{i:04d}"
        feats, probs, caps = synth_clip(seed * 100003 + i, T, D, active=active)
        fpath = feat_dir / f"{cid}.afc"
        save_features(fpath, feats)
        records.append(ClipRecord(cid, fpath, caps, probs))
    mpath = directory / f"{split}.jsonl"
    save_manifest(Manifest(split, records), mpath)
    return mpath

"""Caption metrics: corpus BLEU-1..4, ROUGE_L, METEOR (exact + Porter stem), CIDEr, SPIDEr.

All scorers take a list of :class:`EvalPair` whose candidate and references
are token lists without ``<sos>``/``<eos>`` markers.
"""

from __future__ import annotations

import itertools
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

from nltk.stem.porter import PorterStemmer

from .errors import FormatError, InvalidArgument, ValidationError
from .text_prep import normalize_caption, strip_markers

ROUGE_BETA = 1.2
CIDER_MAX_N = 4
METEOR_ALPHA = 0.9  # F_mean = PR / (αP + (1−α)R) = 10PR / (R + 9P)
METEOR_GAMMA = 0.5
METEOR_BETA = 3.0
_ALIGN_SEARCH_CAP = 20000


@dataclass
class EvalPair:
    clip_id: str
    candidate: list
    references: list


def _pairs(pairs) -> list[EvalPair]:
    out = [p if isinstance(p, EvalPair) else EvalPair(str(i), list(p[0]), [list(r) for r in p[1]])
           for i, p in enumerate(pairs)]
    if not out:
        raise InvalidArgument("metric needs at least one candidate/reference pair")
    return out


def ngram_counts(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


# ---------------------------------------------------------------------------
# BLEU
# ---------------------------------------------------------------------------


def modified_precision_counts(pairs, n: int) -> tuple[int, int]:
    """Corpus totals (clipped matches, candidate n-grams) for order ``n``."""
    clipped = total = 0
    for p in _pairs(pairs):
        cand = ngram_counts(p.candidate, n)
        max_ref = Counter()
        for ref in p.references:
            for g, c in ngram_counts(ref, n).items():
                max_ref[g] = max(max_ref[g], c)
        clipped += sum(min(c, max_ref[g]) for g, c in cand.items())
        total += sum(cand.values())
    return clipped, total


def bleu(pairs, n: int = 4) -> float:
    """Corpus BLEU-n: geometric mean of clipped precisions p_1..p_n times brevity penalty.

    The effective reference length sums, per candidate, the reference length
    closest to the candidate's (shorter wins ties).  Any zero precision gives 0.
    """
    if n not in (1, 2, 3, 4):
        raise InvalidArgument(f"BLEU order must be 1..4, got {n}")
    pairs = _pairs(pairs)
    c_len = sum(len(p.candidate) for p in pairs)
    r_len = sum(min((abs(len(r) - len(p.candidate)), len(r)) for r in p.references)[1] for p in pairs)
    if c_len == 0:
        return 0.0
    log_p = 0.0
    for m in range(1, n + 1):
        clipped, total = modified_precision_counts(pairs, m)
        if clipped == 0:
            return 0.0
        log_p += math.log(clipped / total)
    bp = math.exp(min(0.0, 1.0 - r_len / c_len))
    return bp * math.exp(log_p / n)


# ---------------------------------------------------------------------------
# ROUGE_L
# ---------------------------------------------------------------------------


def lcs_length(a, b) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_pair(candidate, references, beta: float = ROUGE_BETA) -> float:
    best = 0.0
    for ref in references:
        lcs = lcs_length(candidate, ref)
        if lcs == 0:
            continue
        p, r = lcs / len(candidate), lcs / len(ref)
        best = max(best, (1 + beta ** 2) * p * r / (r + beta ** 2 * p))
    return best


def rouge_l(pairs) -> float:
    pairs = _pairs(pairs)
    return sum(rouge_l_pair(p.candidate, p.references) for p in pairs) / len(pairs)


# ---------------------------------------------------------------------------
# METEOR (exact + stem stages, no synonyms)
# ---------------------------------------------------------------------------

_stemmer = PorterStemmer(mode=PorterStemmer.ORIGINAL_ALGORITHM)


@lru_cache(maxsize=65536)
def stem(word: str) -> str:
    return _stemmer.stem(word)


def count_chunks(alignment) -> int:
    """Number of runs that are contiguous and identically ordered on both sides."""
    chunks, last = 0, None
    for ci, ri in sorted(alignment):
        if last is None or ci != last[0] + 1 or ri != last[1] + 1:
            chunks += 1
        last = (ci, ri)
    return chunks


def _stage_options(cand_keys, ref_keys, cand_free, ref_free):
    """Per key, every maximum-cardinality matching between free positions sharing that key."""
    by_c, by_r = {}, {}
    for i in cand_free:
        by_c.setdefault(cand_keys[i], []).append(i)
    for j in ref_free:
        by_r.setdefault(ref_keys[j], []).append(j)
    groups = []
    for key, cpos in by_c.items():
        rpos = by_r.get(key)
        if not rpos:
            continue
        k = min(len(cpos), len(rpos))
        groups.append([tuple(zip(cs, rs)) for cs in itertools.combinations(cpos, k)
                       for rs in itertools.permutations(rpos, k)])
    return groups


def _monotone(groups):
    # Fallback: per key, the order-preserving matching (first option is sorted/sorted).
    return [sum((g[0] for g in groups), ())]


def _stage_alignments(cand_keys, ref_keys, cand_free, ref_free):
    groups = _stage_options(cand_keys, ref_keys, cand_free, ref_free)
    size = math.prod(len(g) for g in groups) if groups else 1
    if size > _ALIGN_SEARCH_CAP:
        return _monotone(groups)
    return [sum(combo, ()) for combo in itertools.product(*groups)]


def meteor_alignment(candidate, reference) -> tuple[int, int]:
    """(matches, chunks) of the best two-stage alignment.

    Stage one matches identical words, stage two matches remaining words with
    equal Porter stems.  Matches are maximised first, then chunks minimised.
    """
    c_stems = [stem(w) for w in candidate]
    r_stems = [stem(w) for w in reference]
    best = (0, 0)
    best_key = None
    stage1 = _stage_alignments(candidate, reference, range(len(candidate)), range(len(reference)))
    budget = max(1, _ALIGN_SEARCH_CAP // max(1, len(stage1)))
    for a1 in stage1:
        used_c = {i for i, _ in a1}
        used_r = {j for _, j in a1}
        free_c = [i for i in range(len(candidate)) if i not in used_c]
        free_r = [j for j in range(len(reference)) if j not in used_r]
        stage2 = _stage_alignments(c_stems, r_stems, free_c, free_r)
        if len(stage2) > budget:
            stage2 = stage2[:1]
        for a2 in stage2:
            align = a1 + a2
            key = (len(align), -count_chunks(align))
            if best_key is None or key > best_key:
                best_key = key
                best = (len(align), -key[1])
    return best


def meteor_pair_score(candidate, reference) -> float:
    if not candidate or not reference:
        return 0.0
    matches, chunks = meteor_alignment(candidate, reference)
    if matches == 0:
        return 0.0
    p = matches / len(candidate)
    r = matches / len(reference)
    f_mean = p * r / (METEOR_ALPHA * p + (1 - METEOR_ALPHA) * r)
    penalty = METEOR_GAMMA * (chunks / matches) ** METEOR_BETA
    return f_mean * (1.0 - penalty)


def meteor_lite(pairs) -> float:
    """Mean over pairs of the best per-reference METEOR score."""
    pairs = _pairs(pairs)
    return sum(max(meteor_pair_score(p.candidate, r) for r in p.references) for p in pairs) / len(pairs)


# ---------------------------------------------------------------------------
# CIDEr
# ---------------------------------------------------------------------------


def _tfidf(tokens, n, df, log_n):
    return {g: c * (log_n - math.log(max(1.0, df.get(g, 0)))) for g, c in ngram_counts(tokens, n).items()}


def _cos(u, v) -> float:
    nu = math.sqrt(sum(x * x for x in u.values()))
    nv = math.sqrt(sum(x * x for x in v.values()))
    if nu == 0 or nv == 0:
        return 0.0
    return sum(x * v.get(g, 0.0) for g, x in u.items()) / (nu * nv)


def cider_per_clip(pairs) -> list[float]:
    """Plain CIDEr (no length penalty, no clipping) for every clip.

    Document frequencies count clips whose reference set contains the n-gram.
    Score = 10 × mean over n = 1..4 of the reference-averaged TF-IDF cosine.
    """
    pairs = _pairs(pairs)
    if len(pairs) < 2:
        raise InvalidArgument("CIDEr needs at least two clips for document frequencies")
    log_n = math.log(len(pairs))
    dfs = []
    for n in range(1, CIDER_MAX_N + 1):
        df = Counter()
        for p in pairs:
            df.update({g for ref in p.references for g in ngram_counts(ref, n)})
        dfs.append(df)
    scores = []
    for p in pairs:
        per_n = []
        for n, df in enumerate(dfs, 1):
            vc = _tfidf(p.candidate, n, df, log_n)
            per_n.append(sum(_cos(vc, _tfidf(r, n, df, log_n)) for r in p.references) / len(p.references))
        scores.append(10.0 * sum(per_n) / CIDER_MAX_N)
    return scores


def cider(pairs) -> float:
    s = cider_per_clip(pairs)
    return sum(s) / len(s)


def spider(cider_score: float, spice_score: float | None = None) -> float | None:
    """Mean of CIDEr and SPICE; None when no SPICE score is available."""
    if spice_score is None:
        return None
    if not 0.0 <= spice_score <= 1.0:
        raise ValidationError(f"SPICE score must lie in [0, 1], got {spice_score}")
    return (cider_score + spice_score) / 2.0


# ---------------------------------------------------------------------------
# Corpus evaluation from JSONL files
# ---------------------------------------------------------------------------

TABLE_COLUMNS = (("BLEU-1", "bleu1"), ("BLEU-2", "bleu2"), ("BLEU-3", "bleu3"), ("BLEU-4", "bleu4"),
                 ("METEOR", "meteor"), ("ROUGE_L", "rouge_l"), ("CIDEr", "cider"),
                 ("SPICE", "spice"), ("SPIDEr", "spider"))


@dataclass
class MetricReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    meteor: float
    rouge_l: float
    cider: float
    spice: float | None = None
    spider: float | None = None
    n_clips: int = 0
    per_clip: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def table(self) -> str:
        heads = [h for h, _ in TABLE_COLUMNS]
        vals = []
        for _, key in TABLE_COLUMNS:
            v = getattr(self, key)
            vals.append("n/a" if v is None else f"{v:.3f}")
        widths = [max(len(h), len(v)) for h, v in zip(heads, vals)]
        line = lambda cells: " | ".join(c.rjust(w) for c, w in zip(cells, widths))
        return "\n".join([line(heads), "-+-".join("-" * w for w in widths), line(vals)])


def compute_report(pairs, spice=None) -> MetricReport:
    """All metrics for ``pairs``; ``spice`` is a corpus float or a clip_id → score dict."""
    pairs = _pairs(pairs)
    per_cider = cider_per_clip(pairs)
    per_clip = []
    spice_scores = []
    for p, c in zip(pairs, per_cider):
        row = {"clip_id": p.clip_id,
               "bleu1": bleu([p], 1), "bleu4": bleu([p], 4),
               "rouge_l": rouge_l_pair(p.candidate, p.references),
               "meteor": max(meteor_pair_score(p.candidate, r) for r in p.references),
               "cider": c}
        if isinstance(spice, dict):
            if p.clip_id not in spice:
                raise ValidationError(f"no SPICE score for clip {p.clip_id}", offenders=[p.clip_id])
            row["spice"] = spice[p.clip_id]
            spice_scores.append(spice[p.clip_id])
        per_clip.append(row)
    corpus_spice = sum(spice_scores) / len(spice_scores) if isinstance(spice, dict) else spice
    c = sum(per_cider) / len(per_cider)
    return MetricReport(
        bleu1=bleu(pairs, 1), bleu2=bleu(pairs, 2), bleu3=bleu(pairs, 3), bleu4=bleu(pairs, 4),
        meteor=meteor_lite(pairs), rouge_l=rouge_l(pairs), cider=c,
        spice=corpus_spice, spider=spider(c, corpus_spice), n_clips=len(pairs), per_clip=per_clip,
    )


def _read_jsonl(path):
    rows = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
    return rows


def tokens(text: str) -> list[str]:
    return strip_markers(normalize_caption(text))


def load_spice(path):
    rows = _read_jsonl(path)
    if len(rows) == 1 and "clip_id" not in rows[0]:
        value = float(rows[0]["spice"])
        if not 0.0 <= value <= 1.0:
            raise ValidationError(f"SPICE score must lie in [0, 1], got {value}")
        return value
    scores = {}
    for r in rows:
        value = float(r["spice"])
        if not 0.0 <= value <= 1.0:
            raise ValidationError(f"SPICE score for {r.get('clip_id')} outside [0, 1]", [r.get("clip_id")])
        scores[str(r["clip_id"])] = value
    return scores


def evaluate(predictions_path, references_path, spice_path=None) -> MetricReport:
    """Score a predictions JSONL against a references JSONL (both keyed by clip_id)."""
    preds = _read_jsonl(predictions_path)
    if not preds:
        raise ValidationError(f"{predictions_path}: no predictions")
    refs = {}
    for r in _read_jsonl(references_path):
        caps = r.get("captions")
        if not isinstance(caps, list) or not caps:
            raise ValidationError(f"references for {r.get('clip_id')} need a captions list", [r.get("clip_id")])
        refs[str(r["clip_id"])] = [tokens(c) for c in caps]
    seen, dupes, missing, pairs = set(), [], [], []
    for p in preds:
        cid = str(p.get("clip_id"))
        if cid in seen:
            dupes.append(cid)
            continue
        seen.add(cid)
        if cid not in refs:
            missing.append(cid)
            continue
        pairs.append(EvalPair(cid, tokens(p.get("caption", "")), refs[cid]))
    if dupes:
        raise ValidationError(f"duplicate predictions for clip ids: {', '.join(dupes)}", dupes)
    if missing:
        raise ValidationError(f"no references for clip ids: {', '.join(missing)}", missing)
    spice = load_spice(spice_path) if spice_path is not None else None
    return compute_report(pairs, spice)

"""``evcap`` command line: prep-events, train-embeddings, train, caption, evaluate, gradcheck.

Exit codes: 0 success, 2 validation error, 3 numeric failure, 4 I/O or format error.
Every output file is written to a temporary file and renamed into place.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import captioner as cap
from .embeddings import SkipGramConfig, load_embeddings, save_embeddings, train_embeddings
from .errors import FormatError, InvalidArgument, NumericError, ValidationError
from .features_io import atomic_write_text, load_manifest
from .gradcheck import TOLERANCE, run_gradcheck
from .metrics import evaluate
from .nn_core import seeded_rng
from .sound_events import EventLabelTable, EventCorpus, build_event_corpus
from .text_prep import Vocabulary, build_vocab, normalize_caption, strip_markers

log = logging.getLogger("evcap")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
DEFAULT_SEED = 42

# Model fields derived from data files rather than configured.
_DERIVED_MODEL_FIELDS = {"event_dim", "vocab_size", "embed_dim"}
_CONFIG_SECTIONS = {
    "model": {f.name for f in fields(cap.ModelConfig)} - _DERIVED_MODEL_FIELDS,
    "train": {f.name for f in fields(cap.TrainConfig)} - {"seed"},
    "skipgram": {f.name for f in fields(SkipGramConfig)} - {"seed"},
    "paths": {"labels", "vocab", "history"},
}


def load_run_config(path) -> dict:
    """Read a RunConfig JSON document; unknown sections or keys are rejected."""
    cfg = {"seed": None, "model": {}, "train": {}, "skipgram": {}, "paths": {}}
    if path is None:
        return cfg
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc.msg})") from exc
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    unknown = [k for k in doc if k != "seed" and k not in _CONFIG_SECTIONS]
    for section, allowed in _CONFIG_SECTIONS.items():
        body = doc.get(section, {})
        if not isinstance(body, dict):
            raise ValidationError(f"{path}: section {section!r} must be an object")
        unknown += [f"{section}.{k}" for k in body if k not in allowed]
        cfg[section] = dict(body)
    if unknown:
        raise ValidationError(f"{path}: unknown config keys: {', '.join(unknown)}", unknown)
    cfg["seed"] = doc.get("seed")
    return cfg


def _seed(args, cfg) -> int:
    if args.seed is not None:
        seed = args.seed
    elif cfg.get("seed") is not None:
        seed = int(cfg["seed"])
    else:
        seed = DEFAULT_SEED
        print(f"seed: {seed} (default)", file=sys.stderr)
    return seed


def _sub_seeds(seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


def _vocab_path(emb_path) -> Path:
    return Path(str(emb_path) + ".vocab")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_prep_events(args) -> int:
    table = EventLabelTable.load(args.labels)
    corpus = build_event_corpus(table)
    corpus.save(args.out)
    print(len(corpus))
    return EXIT_OK


def cmd_train_embeddings(args) -> int:
    cfg = load_run_config(args.config)
    seed = _seed(args, cfg)
    manifest = load_manifest(args.manifest)
    captions = [normalize_caption(c) for r in manifest for c in r.captions]
    vocab = build_vocab(captions)
    sg = SkipGramConfig(**cfg["skipgram"], seed=_sub_seeds(seed, 1)[0])
    matrix = train_embeddings(captions, vocab, sg)
    save_embeddings(args.out, matrix)
    vocab.save(args.vocab_out or _vocab_path(args.out))
    print(f"{len(vocab)} x {sg.dim} embeddings")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    seed = _seed(args, cfg)
    paths = cfg["paths"]
    labels_path = args.labels or paths.get("labels")
    if labels_path is None:
        raise ValidationError("an event label table is required (--labels or paths.labels)")
    table = EventLabelTable.load(labels_path)
    corpus = EventCorpus.load(args.corpus)
    vectors = load_embeddings(args.embeddings)
    vocab = Vocabulary.load(args.vocab or paths.get("vocab") or _vocab_path(args.embeddings))
    if len(vocab) != vectors.shape[0]:
        raise ValidationError(f"vocabulary has {len(vocab)} tokens but embeddings have {vectors.shape[0]} rows")
    train_m = load_manifest(args.train)
    val_m = load_manifest(args.val)
    model_kw = dict(cfg["model"])
    feature_dim = train_m.records[0].features().shape[1]
    if model_kw.setdefault("feature_dim", feature_dim) != feature_dim:
        raise ValidationError(f"config feature_dim {model_kw['feature_dim']} but features have {feature_dim} columns")
    mcfg = cap.ModelConfig(**model_kw, event_dim=len(corpus), vocab_size=len(vocab), embed_dim=vectors.shape[1])
    tcfg = cap.TrainConfig(**cfg["train"], seed=_sub_seeds(seed, 2)[1])
    model = cap.build_model(mcfg, seeded_rng(_sub_seeds(seed, 2)[0]), vectors, vocab, table.labels, corpus)
    best, history = cap.train(model, train_m, val_m, tcfg,
                              log_fn=lambda row: log.info("epoch %(epoch)d train %(train_loss).4f "
                                                          "val %(val_loss).4f", row))
    cap.save_model(best, args.out)
    hist_path = args.history or paths.get("history") or str(args.out) + ".history.jsonl"
    atomic_write_text(hist_path, "".join(json.dumps(r, sort_keys=True) + "\n" for r in history))
    best_row = min(history, key=lambda r: (r["val_loss"], r["epoch"]))
    print(f"best epoch {best_row['epoch']} val_loss {best_row['val_loss']:.6f}")
    return EXIT_OK


def cmd_caption(args) -> int:
    model = cap.load_model(args.model)
    manifest = load_manifest(args.manifest)

    def run(rec):
        events = model.events_for(rec.probs())
        tokens = cap.greedy_caption(model, rec.features().astype(np.float64), events)
        return {"clip_id": rec.clip_id, "caption": " ".join(strip_markers(tokens))}

    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        rows = list(pool.map(run, manifest.records))
    atomic_write_text(args.out, "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows))
    print(f"captioned {len(rows)} clips")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    report = evaluate(args.predictions, args.references, args.spice)
    atomic_write_text(args.out, report.to_json())
    print(report.table())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_gradcheck(args.seed if args.seed is not None else DEFAULT_SEED, args.seeds)
    ok = all(v < TOLERANCE for v in results.values())
    if args.json:
        print(json.dumps({"tolerance": TOLERANCE, "max_relative_error": results, "pass": ok}, sort_keys=True))
    else:
        for name, err in results.items():
            print(f"{name:12s} {err:.3e} {'ok' if err < TOLERANCE else 'FAIL'}")
        print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_NUMERIC


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evcap", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=fn)
        return p

    p = add("prep-events", cmd_prep_events, "tokenise the 527 event labels into a corpus file")
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)

    p = add("train-embeddings", cmd_train_embeddings, "train skip-gram embeddings on manifest captions")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--vocab-out", help="vocabulary file (default: OUT.vocab)")
    p.add_argument("--seed", type=int)

    p = add("train", cmd_train, "train the captioner")
    for flag in ("--train", "--val", "--corpus", "--embeddings", "--out"):
        p.add_argument(flag, required=True)
    p.add_argument("--config")
    p.add_argument("--labels")
    p.add_argument("--vocab")
    p.add_argument("--history")
    p.add_argument("--seed", type=int)

    p = add("caption", cmd_caption, "greedy-decode captions for a manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=1)

    p = add("evaluate", cmd_evaluate, "score predictions against references")
    p.add_argument("--predictions", required=True)
    p.add_argument("--references", required=True)
    p.add_argument("--spice")
    p.add_argument("--out", required=True)

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of every backward pass")
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--json", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValidationError, InvalidArgument) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

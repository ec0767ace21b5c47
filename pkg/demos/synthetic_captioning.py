"""Train a small event-conditioned captioner on synthetic clips and caption unseen ones.

Run with ``python demos/synthetic_captioning.py`` (a little over a minute on a laptop).
Each synthetic clip has noise features and a set of active sound sources; its
captions name those sources ("dog barking with heavy rain").  Features carry
no information, so whatever the model gets right it learns from the event vector.
"""

import itertools
import tempfile

from evcap import captioner as cap
from evcap import metrics as mt
from evcap import nn_core as nn
from evcap.embeddings import SkipGramConfig, train_embeddings
from evcap.features_io import load_manifest, synthetic_caption, synthetic_label_table, write_synthetic_split
from evcap.sound_events import build_event_corpus
from evcap.text_prep import build_vocab, normalize_caption, strip_markers

workdir = tempfile.mkdtemp()

# Hold out four source pairs; train on everything else.
held_out = [(0, 3), (1, 4), (2, 5), (1, 5)]
seen = [(i,) for i in range(6)]
seen += [p for p in itertools.combinations(range(6), 2) if p not in held_out]
seen += list(itertools.combinations(range(6), 3))
print(len(seen), "training combinations, e.g.", repr(synthetic_caption(seen[10])))

train = load_manifest(write_synthetic_split(workdir, "train", seen * 2, seed=1))
val = load_manifest(write_synthetic_split(workdir, "val", seen, seed=2))
test = load_manifest(write_synthetic_split(workdir, "test", held_out, seed=3))

# The event corpus is every word of every label; a clip becomes a multi-hot over it.
labels = synthetic_label_table()
corpus = build_event_corpus(labels)
print("event corpus:", len(corpus), "tokens")

captions = [normalize_caption(c) for rec in train for c in rec.captions]
vocab = build_vocab(captions)
emb = train_embeddings(captions, vocab, SkipGramConfig(dim=16, epochs=30, seed=3))
print("vocabulary:", len(vocab), "tokens; skip-gram loss", [round(v, 3) for v in emb.loss_history[::10]])

config = cap.ModelConfig(feature_dim=32, event_dim=len(corpus), vocab_size=len(vocab), embed_dim=16,
                         bigru1_cells=16, bigru2_cells=16, caption_gru_cells=32, decoder_gru_cells=32,
                         leaky_dense_units=32)
model = cap.build_model(config, nn.seeded_rng(0), emb.vectors, vocab, labels, corpus)
print("trainable parameters:", model.n_params)

best, history = cap.train(model, train, val, cap.TrainConfig(epochs=100, batch_size=16, lr=3e-3, seed=5),
                          log_fn=lambda r: r["epoch"] % 20 == 0 and print(
                              f"epoch {r['epoch']:3d}  train {r['train_loss']:.4f}  val {r['val_loss']:.4f}"))

pairs = []
for rec in test:
    words = strip_markers(cap.greedy_caption(best, rec.features(), best.events_for(rec.probs())))
    print(f"{rec.captions[0]!r:40s} -> {' '.join(words)!r}")
    pairs.append(mt.EvalPair(rec.clip_id, words, [c.split() for c in rec.captions]))
print("BLEU-1 on unseen combinations:", round(mt.bleu(pairs, 1), 3))

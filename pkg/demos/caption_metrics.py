"""How the caption metrics react to a few hand-made candidates.

Run with ``python demos/caption_metrics.py``.
"""

from evcap import metrics as mt

refs = [
    "a dog barks at a passing car",
    "a dog is barking loudly",
    "the dog barks while cars drive by",
    "a small dog barks repeatedly",
    "dog barking near a busy road",
]
refs = [r.split() for r in refs]

candidates = {
    "copy of a reference": "a dog is barking loudly",
    "stem variants": "dogs barked at cars",
    "word salad": "barking loudly dog a is",
    "unrelated": "rain falls on a tin roof",
}

# A second clip gives CIDEr something to compute document frequencies against.
other = mt.EvalPair("rain", "rain falls on the roof".split(), [s.split() for s in [
    "rain falls on the roof", "heavy rain on a roof", "rain drips onto metal",
    "steady rainfall on a shed", "water pours on the roof"]])

print(f"{'candidate':22s} {'BLEU-1':>7s} {'BLEU-4':>7s} {'ROUGE_L':>8s} {'METEOR':>7s} {'CIDEr':>6s}")
for name, text in candidates.items():
    pair = mt.EvalPair("dog", text.split(), refs)
    print(f"{name:22s} {mt.bleu([pair], 1):7.3f} {mt.bleu([pair], 4):7.3f} "
          f"{mt.rouge_l([pair]):8.3f} {mt.meteor_lite([pair]):7.3f} {mt.cider_per_clip([pair, other])[0]:6.3f}")

# Clipping: repeating a matching word only earns credit as often as a reference uses it.
rep = [mt.EvalPair("x", ["the"] * 7, ["the cat is on the mat".split()])]
print("clipped unigram precision:", "%d/%d" % mt.modified_precision_counts(rep, 1))

# METEOR's fragmentation penalty: the word salad matches every word but in 4 chunks.
print("salad alignment (matches, chunks):", mt.meteor_alignment("barking loudly dog a is".split(), refs[1]))

# SPIDEr averages CIDEr with an externally computed SPICE score.
print("SPIDEr(0.328, 0.155) =", mt.spider(0.328, 0.155))

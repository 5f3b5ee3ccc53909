"""Writes gibberish.tsv: toy references paired with invented-word hypotheses.

Hypotheses reuse three reference words in total, never two in a row, so the
fixture has a handful of unigram matches and no shared bigram.
"""
import random

rng = random.Random(20240602)
rows = [l.rstrip("\n").split("\t") for l in open("../../../../data/toy/corpus.tsv", encoding="utf-8") if not l.startswith("#")]
syll = ["zu", "vek", "qo", "rax", "mip", "tul", "gre", "yon", "fas", "wib"]
out = ["# reference\thypothesis"]
for i, (_, _, ref) in enumerate(rows[:12]):
    words = ["".join(rng.choice(syll) for _ in range(rng.randint(2, 3))) for _ in range(15)]
    if i in (2, 5, 9):
        words[7] = ref.split()[0]
    out.append(ref + "\t" + " ".join(words))
open("gibberish.tsv", "w", encoding="utf-8").write("\n".join(out) + "\n")

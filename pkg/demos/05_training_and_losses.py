"""Training-data construction and the multi-task loss breakdown.

The factory emits retrieval lists, closed-book pairs, reference/answer pairs
with noise sampling, and four DocID-understanding tasks. Teacher forcing
scores any batch against any scorer; the combined loss is a weighted sum of
the per-task sums, and the RAG term is exactly reference plus answer.
"""
import random
from collections import Counter
from pathlib import Path

from docidlm import ingest_corpus, load_gold
from docidlm.cli import RunConfig, build_training_examples, engine_vocabulary
from docidlm.training import (
    build_bm25_index, build_reference_lm, combined_loss, make_rag_examples,
    sequence_loss,
)

DATA = Path(__file__).parent / "data"

corpus = ingest_corpus(DATA / "corpus.jsonl")
gold = load_gold(DATA / "gold.jsonl")
index = build_bm25_index(corpus)
config = RunConfig(k_retrieve=5, tau=0.2, seed=0, aux_per_task=4)
examples = build_training_examples(corpus, gold, index, config)

print("examples per task:")
for task, count in sorted(Counter(e.task.value for e in examples).items()):
    print(f"  {task:24} {count}")

docs = [corpus.get("Mars # overview"), corpus.get("Mars # moons")]
rng = random.Random(42)
noised = sum(
    make_rag_examples("which planet is red", docs, "mars is the red planet.",
                      "mars", tau=0.2, rng=rng)[1].noise_flag
    for _ in range(2000)
)
print(f"\nnoise sampling at tau=0.2: {noised}/2000 answer examples noised "
      f"({noised / 2000:.3f})")

vocab = engine_vocabulary(corpus, gold)
lm = build_reference_lm(corpus, vocab, examples)

breakdown = combined_loss(lm, examples, lambdas=config.lambdas, tau=config.tau)
print("\nloss breakdown over the whole batch:")
for name, value in breakdown.as_dict().items():
    print(f"  {name:9} {value:10.3f}")
assert breakdown.l_rag == breakdown.l_ref + breakdown.l_ans

one = examples[0]
print(f"\nsingle-example loss for a {one.task.value} pair: "
      f"{sequence_loss(lm, one):.3f} nats")

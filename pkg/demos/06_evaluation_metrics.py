"""The metric suite and the evaluation report harness.

Retrieval quality is R-Precision and recall at fixed cutoffs; generation
quality is exact match, token-bag F1, LCS-based score, or containment,
depending on the task family. Everything shares one answer normalization.
"""
from pathlib import Path

from docidlm import (
    TaskCategory, build_trie, evaluate_run, exact_match, f1, has_answer,
    ingest_corpus, load_gold, normalize_answer, r_precision, recall_at_k,
    rouge_l, generate_docid_list,
)
from docidlm.cli import RunConfig, build_training_examples, engine_vocabulary
from docidlm.training import build_bm25_index, build_reference_lm

print("normalization chain:")
for raw in ["The Answer!", "  An  apple,  a day. "]:
    print(f"  {raw!r:26} -> {normalize_answer(raw)!r}")

print("\nhand-checkable fixtures:")
print(f"  r_precision([A,B,C], {{A}})      = {r_precision(['A', 'B', 'C'], {'A'})}")
print(f"  r_precision([A,C,B], {{A,B}})    = {r_precision(['A', 'C', 'B'], {'A', 'B'})}")
print(f"  recall@1([B,...], {{A,B}})       = {recall_at_k(['B', 'X'], {'A', 'B'}, 1)}")
print(f"  exact_match('The Answer!')      = {exact_match('The Answer!', ['answer'])}")
print(f"  f1('x y' vs 'x z')              = {f1('x y', ['x z'])}")
print(f"  rouge_l('x y z' vs 'x z')       = {rouge_l('x y z', ['x z']):.3f}")
print(f"  has_answer('... is paris')      = {has_answer('the answer is paris', ['Paris'])}")

DATA = Path(__file__).parent / "data"
corpus = ingest_corpus(DATA / "corpus.jsonl")
gold = load_gold(DATA / "gold.jsonl")
index = build_bm25_index(corpus)
examples = build_training_examples(corpus, gold, index, RunConfig(k_retrieve=5, seed=0))
vocab = engine_vocabulary(corpus, gold)
lm = build_reference_lm(corpus, vocab, examples)
trie = build_trie(corpus, vocab)

predictions = [
    {"query_id": g.query_id,
     "docids": list(generate_docid_list(lm, trie, g.input, 5).docids)}
    for g in gold
]
report = evaluate_run(predictions, gold, TaskCategory.RETRIEVAL)
print(f"\nretrieval report over {report.query_count} queries:")
for name, value in report.aggregates.items():
    print(f"  {name:12} {value:.3f}")

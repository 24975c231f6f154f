"""Continuous DocIDs-References-Answer decoding, against the pipeline baseline.

One session does everything: generate the DocID list, pull the documents into
the same context, decode one reference per document, then the answer. The
pipeline variant rebuilds its reading context from scratch, so it re-processes
the query; the cost meters show the difference.

The masks guarantee the structure of the output (valid DocIDs, well-formed
reference and answer spans) for any scorer. The prose quality is a property
of the scorer alone; the bundled n-gram model has a tiny context window, so
its references read like corpus babble, while a served neural model plugged
into the same LmScorer slot would fill the same structure with real content.
"""
from pathlib import Path

from docidlm import (
    build_trie, generate_closed_book, generate_rag, generate_rag_pipeline,
    ingest_corpus, load_gold, parse_rag_trace, train_ngram,
)
from docidlm.cli import RunConfig, build_training_examples, engine_vocabulary
from docidlm.training import (
    build_bm25_index, build_reference_lm, make_closed_book_example,
    render_example_tokens,
)

DATA = Path(__file__).parent / "data"

corpus = ingest_corpus(DATA / "corpus.jsonl")
gold = load_gold(DATA / "gold.jsonl")
index = build_bm25_index(corpus)
examples = build_training_examples(corpus, gold, index, RunConfig(k_retrieve=5, seed=0))
vocab = engine_vocabulary(corpus, gold)
trie = build_trie(corpus, vocab)
lm = build_reference_lm(corpus, vocab, examples)

query = gold[0].input
print(f"query: {query!r}\n")

result = generate_rag(lm, trie, corpus, query, k_retrieve=5, k_context=2)
print("continuous decode:")
print(f"  retrieved: {list(result.docids.docids)}")
print(f"  read:      {list(result.context_docids)}")
for i, reference in enumerate(result.references, 1):
    print(f"  ref {i}:     {reference[:72]!r}...")
print(f"  answer:    {result.answer!r}")

parsed = parse_rag_trace(result.token_trace)
print(f"\ntrace of {len(result.token_trace)} tokens parses as "
      f"{len(parsed.docid_spans)} DocID spans + "
      f"{len(parsed.reference_spans)} references + answer")

pipeline = generate_rag_pipeline(lm, trie, corpus, query, k_retrieve=5, k_context=2)
print("\ncost comparison (same outputs either way):")
for label, res in [("continuous", result), ("pipeline", pipeline)]:
    cost = res.decode_cost
    print(f"  {label:11} scorer_calls={cost.scorer_calls:4d}  "
          f"context_tokens={cost.context_tokens:4d}")
saved = pipeline.decode_cost.context_tokens - result.decode_cost.context_tokens
print(f"  continuous decoding avoids re-processing {saved} context tokens")
assert pipeline.answer == result.answer
assert pipeline.references == result.references

# A scorer trained on exactly one task shows the decode loop is faithful:
# closed-book pairs alone force the memorized continuation.
pairs = [make_closed_book_example(g.input, g.answers[0]) for g in gold]
cb_lm = train_ngram(vocab, [render_example_tokens(vocab, p) for p in pairs])
print("\nclosed-book decoding with a scorer trained only on answer pairs:")
for g in gold:
    answer = generate_closed_book(cb_lm, g.input, max_tokens=8)
    print(f"  {g.input!r:36} -> {answer!r}  (gold {g.answers[0]!r})")

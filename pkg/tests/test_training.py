import math
import random

import pytest

from docidlm.corpus import UnknownDocIdError
from docidlm.lm import UniformLm, train_ngram
from docidlm.tokens import ANSWER_OPEN, EOS, REF_CLOSE, REF_OPEN, build_vocabulary, encode
from docidlm.training import (
    LexicalOverlapReranker,
    Task,
    TrainingExample,
    bm25_retrieve,
    build_bm25_index,
    combined_loss,
    construct_ranked_docid_list,
    docid_list_target,
    example_record,
    extract_reference,
    make_docid_understanding_examples,
    make_rag_examples,
    make_retrieval_example,
    parse_docid_list_target,
    parse_example_record,
    render_example_tokens,
    sequence_loss,
    stopwords,
)

from conftest import corpus_from_rows, random_corpus
from test_decoder import tiny_vocab_of_size


def equal_length_corpus():
    # title(1) + section(1) + body(3) tokens = 5 per document, so avgdl = |d|
    return corpus_from_rows([
        ("1", "d1", "s", "rare alpha beta"),
        ("2", "d2", "s", "gamma delta epsi"),
        ("3", "d3", "s", "zeta eta theta"),
    ])


class TestBm25:
    def test_average_length_is_mean(self):
        corpus = corpus_from_rows([
            ("1", "a", "x", "one two"),        # 2 + 2 body/meta -> 4 terms
            ("2", "b", "y", "one two three"),  # 5 terms
            ("3", "c", "z", "one"),            # 3 terms
        ])
        index = build_bm25_index(corpus)
        assert index.avgdl == pytest.approx((4 + 5 + 3) / 3)

    def test_absent_term_empty_postings(self):
        index = build_bm25_index(equal_length_corpus())
        assert "missing" not in index.postings
        assert bm25_retrieve(index, "missing", 5) == []

    def test_postings_exactly_matching_docs(self):
        corpus = corpus_from_rows([
            ("1", "a", "x", "shared one"),
            ("2", "b", "y", "unrelated"),
            ("3", "c", "z", "shared two"),
        ])
        index = build_bm25_index(corpus)
        assert [d for d, _ in index.postings["shared"]] == ["a # x", "c # z"]

    def test_closed_form_single_hit_at_average_length(self):
        # tf=1, |d|=avgdl collapses length normalization: score = idf = ln(8/3)
        index = build_bm25_index(equal_length_corpus())
        [(doc_id, score)] = bm25_retrieve(index, "rare", 3)
        assert doc_id == "d1 # s"
        assert score == pytest.approx(math.log(8 / 3), abs=1e-9)

    def test_duplicate_query_terms_accumulate(self):
        index = build_bm25_index(equal_length_corpus())
        [(_, single)] = bm25_retrieve(index, "rare", 3)
        [(_, doubled)] = bm25_retrieve(index, "rare rare", 3)
        assert doubled == pytest.approx(2 * single, abs=1e-12)

    def test_descending_scores_ties_by_docid(self):
        corpus = corpus_from_rows([
            ("1", "b", "s", "term x y"),
            ("2", "a", "s", "term x y"),
        ])
        index = build_bm25_index(corpus)
        ranked = bm25_retrieve(index, "term", 2)
        assert [d for d, _ in ranked] == ["a # s", "b # s"]
        assert ranked[0][1] == ranked[1][1]


class StubReranker:
    """Returns a fixed order, restricted to the offered candidates."""

    def __init__(self, order):
        self.order = order

    def rerank(self, query, candidates):
        wanted = [d for d in self.order if d in candidates]
        return wanted + [d for d in candidates if d not in self.order]


class TestMergeRule:
    def corpus(self):
        return corpus_from_rows([
            ("1", "D1", "", "alpha common"),
            ("2", "D2", "", "beta common"),
            ("3", "D3", "", "gamma common"),
        ])

    def test_labeled_then_reranked_no_duplicates(self):
        index = build_bm25_index(self.corpus())
        reranker = StubReranker(["D1 #", "D3 #", "D2 #"])
        merged = construct_ranked_docid_list("common", ["D3 #"], index, reranker, k=3)
        assert merged == ["D3 #", "D1 #", "D2 #"]

    def test_empty_labels_gives_reranked_top_k(self):
        index = build_bm25_index(self.corpus())
        reranker = StubReranker(["D2 #", "D1 #", "D3 #"])
        merged = construct_ranked_docid_list("common", [], index, reranker, k=2)
        assert merged == ["D2 #", "D1 #"]

    def test_labeled_covering_k_truncates(self):
        index = build_bm25_index(self.corpus())
        reranker = StubReranker([])
        merged = construct_ranked_docid_list("common", ["D2 #", "D1 #", "D3 #"],
                                             index, reranker, k=2)
        assert merged == ["D2 #", "D1 #"]

    def test_unknown_labeled_docid_is_an_error(self):
        index = build_bm25_index(self.corpus())
        with pytest.raises(UnknownDocIdError):
            construct_ranked_docid_list("q", ["nope #"], index, StubReranker([]), k=3)

    def test_randomized_merge_properties(self):
        rng = random.Random(89)
        for _ in range(200):
            corpus = random_corpus(rng, rng.randint(2, 25))
            index = build_bm25_index(corpus)
            reranker = LexicalOverlapReranker(corpus)
            doc_ids = sorted(corpus.documents)
            labeled = rng.sample(doc_ids, rng.randint(0, min(4, len(doc_ids))))
            k = rng.randint(max(1, len(labeled)), 10)
            query = " ".join(rng.choices(["alpha", "beta", "kappa", "ant"], k=3))
            merged = construct_ranked_docid_list(query, labeled, index, reranker, k)
            assert len(merged) == len(set(merged))
            assert merged[: len(labeled)] == labeled
            assert len(merged) <= k
            assert all(d in corpus for d in merged)


class TestRetrievalExample:
    def test_single_docid_target(self):
        ex = make_retrieval_example("who", ["a # x"])
        assert ex.target == "<docid> a # x </docid>"
        assert ex.input == "retrieve: who"
        assert ex.task is Task.RETRIEVAL

    def test_two_docids_in_order(self):
        ex = make_retrieval_example("who", ["a # x", "b # y"])
        assert ex.target == "<docid> a # x </docid> <docid> b # y </docid>"

    def test_target_round_trips_through_parser(self):
        rng = random.Random(97)
        corpus = random_corpus(rng, 15)
        ids = sorted(corpus.documents)
        for _ in range(50):
            chosen = rng.sample(ids, rng.randint(1, 5))
            assert parse_docid_list_target(docid_list_target(chosen)) == chosen

    def test_parser_rejects_malformed(self):
        for bad in ["<docid> a", "a </docid>", "<docid> </docid>", "x <docid> a </docid>"]:
            with pytest.raises(ValueError):
                parse_docid_list_target(bad)


class TestRagExamples:
    def docs(self):
        corpus = corpus_from_rows([
            ("1", "t1", "s", "first fact here. second fact there."),
            ("2", "t2", "s", "third fact elsewhere."),
        ])
        return [corpus.get("t1 # s"), corpus.get("t2 # s")]

    def test_tau_zero_never_noised(self):
        rng = random.Random(0)
        for _ in range(50):
            ref, ans = make_rag_examples("q", self.docs(), "gold ref", "gold ans",
                                         tau=0.0, rng=rng)
            assert not ans.noise_flag and not ref.noise_flag
            assert "<ref> gold ref </ref>" in ans.input

    def test_tau_one_always_noised_from_sentences(self):
        rng = random.Random(1)
        sentences = {s for d in self.docs() for s in d.sentences}
        for _ in range(50):
            ref, ans = make_rag_examples("q", self.docs(), "gold ref", "gold ans",
                                         tau=1.0, rng=rng)
            assert ans.noise_flag
            used = ans.input.split("<ref>")[1].split("</ref>")[0].strip()
            assert used in sentences
        assert ref.target == "gold ref"

    def test_reference_example_always_clean(self):
        rng = random.Random(2)
        ref, ans = make_rag_examples("q", self.docs(), "gold ref", "gold ans",
                                     tau=1.0, rng=rng)
        assert ref.task is Task.RAG_REFERENCE and ref.target == "gold ref"
        assert ans.task is Task.RAG_ANSWER and ans.target == "gold ans"

    def test_seeded_determinism(self):
        flags1 = [make_rag_examples("q", self.docs(), "r", "a", 0.5, random.Random(5))[1].noise_flag
                  for _ in range(20)]
        flags2 = [make_rag_examples("q", self.docs(), "r", "a", 0.5, random.Random(5))[1].noise_flag
                  for _ in range(20)]
        assert flags1 == flags2

    def test_no_sentences_with_positive_tau_is_an_error(self):
        with pytest.raises(ValueError):
            make_rag_examples("q", [], "r", "a", tau=0.5, rng=random.Random(0))

    def test_tau_out_of_range(self):
        with pytest.raises(ValueError):
            make_rag_examples("q", self.docs(), "r", "a", tau=1.5, rng=random.Random(0))


class TestDocIdUnderstanding:
    def test_one_sentence_summary_is_that_sentence(self):
        corpus = corpus_from_rows([("1", "t", "s", "only sentence here."),
                                   ("2", "u", "s", "another doc body.")])
        index = build_bm25_index(corpus)
        examples = make_docid_understanding_examples(corpus, index, 2, random.Random(3))
        recite = [e for e in examples if e.task is Task.AUX_DOCID2SUMMARY
                  and e.input == "recite: t # s"]
        assert recite and recite[0].target == "only sentence here."

    def test_pseudo_query_target_leads_with_source(self):
        # unique marker words tie each pseudo query back to its source document
        corpus = corpus_from_rows([
            (str(i), f"title{i}", "s", f"marker{i} words appear. more marker{i} text.")
            for i in range(6)
        ])
        index = build_bm25_index(corpus)
        examples = make_docid_understanding_examples(corpus, index, 6, random.Random(7))
        checked = 0
        for ex in examples:
            if ex.task is not Task.AUX_QUERY2DOCIDS:
                continue
            marker = next(w for w in ex.input.split() if w.startswith("marker"))
            source = f"title{marker[len('marker'):]} # s"
            assert parse_docid_list_target(ex.target)[0] == source
            checked += 1
        assert checked == 6

    def test_pseudo_query_first_docid_is_source_two_doc_case(self):
        corpus = corpus_from_rows([
            ("1", "alpha", "s", "unique alpha words."),
            ("2", "beta", "s", "unique beta words."),
        ])
        index = build_bm25_index(corpus)
        examples = make_docid_understanding_examples(corpus, index, 2, random.Random(11))
        by_task = {}
        for ex in examples:
            by_task.setdefault(ex.task, []).append(ex)
        for ex in by_task[Task.AUX_QUERY2DOCIDS]:
            first = parse_docid_list_target(ex.target)[0]
            # the sampled sentence names its own title, so the source leads
            assert first in ("alpha # s", "beta # s")
        for ex in by_task[Task.AUX_SUMMARY2DOCIDS]:
            docids = parse_docid_list_target(ex.target)
            assert len(docids) == len(set(docids))

    def test_related_on_two_doc_corpus_is_the_other(self):
        corpus = corpus_from_rows([
            ("1", "alpha", "s", "shared words here."),
            ("2", "beta", "s", "shared words there."),
        ])
        index = build_bm25_index(corpus)
        examples = make_docid_understanding_examples(corpus, index, 2, random.Random(13))
        related = {e.input: parse_docid_list_target(e.target)
                   for e in examples if e.task is Task.AUX_DOCID2RELATED}
        assert related["related: alpha # s"] == ["beta # s"]
        assert related["related: beta # s"] == ["alpha # s"]

    def test_stopwords_removed_from_pseudo_queries(self):
        corpus = corpus_from_rows([
            ("1", "topic", "s", "the cat sat on the mat."),
            ("2", "other", "s", "dogs bark at night."),
        ])
        index = build_bm25_index(corpus)
        examples = make_docid_understanding_examples(corpus, index, 2, random.Random(17))
        for ex in examples:
            if ex.task is Task.AUX_QUERY2DOCIDS and "cat" in ex.input:
                assert "the" not in ex.input.split()
                assert "on" not in ex.input.split()

    def test_all_ranked_targets_round_trip(self):
        rng = random.Random(19)
        corpus = random_corpus(rng, 12)
        index = build_bm25_index(corpus)
        for ex in make_docid_understanding_examples(corpus, index, 6, rng):
            if ex.task in (Task.AUX_QUERY2DOCIDS, Task.AUX_SUMMARY2DOCIDS,
                           Task.AUX_DOCID2RELATED):
                docids = parse_docid_list_target(ex.target)
                assert len(docids) == len(set(docids))
                assert all(d in corpus for d in docids)


def test_stopword_list_loads_fixed_file():
    words = stopwords()
    assert 100 <= len(words) <= 150
    assert {"the", "a", "an", "of"} <= words


def test_extract_reference_prefers_answer_overlap():
    corpus = corpus_from_rows([
        ("1", "t", "s", "nothing relevant here. paris is the capital of france. filler.")
    ])
    doc = corpus.get("t # s")
    assert extract_reference([doc], "Paris") == "paris is the capital of france."
    assert extract_reference([], "Paris") == ""


class TestLosses:
    def test_uniform_lm_length_times_log_v(self):
        vocab = tiny_vocab_of_size(10)
        lm = UniformLm(vocab)
        example = TrainingExample(Task.CLOSED_BOOK, "t0", "t1 t2 t3")
        # target tokenizes to 3 ids plus EOS = 4 tokens
        assert sequence_loss(lm, example) == pytest.approx(4 * math.log(10), abs=1e-9)

    def test_loss_positive(self):
        rng = random.Random(23)
        corpus = random_corpus(rng, 5)
        vocab = build_vocabulary(corpus, ["q"])
        lm = train_ngram(vocab, [encode(vocab, d.body) for d in corpus.documents.values()])
        example = TrainingExample(Task.CLOSED_BOOK, "q", next(iter(corpus.documents.values())).body)
        assert sequence_loss(lm, example) > 0

    def test_memorized_pair_beats_uniform(self):
        vocab = build_vocabulary(None, ["answer: q", "yes"])
        example = TrainingExample(Task.CLOSED_BOOK, "answer: q", "yes")
        lm = train_ngram(vocab, [render_example_tokens(vocab, example)] * 4, order=3, alpha=0.1)
        uniform_nll = sequence_loss(UniformLm(vocab), example)
        assert sequence_loss(lm, example) < uniform_nll

    def test_empty_target_rejected(self):
        with pytest.raises(ValueError):
            sequence_loss(UniformLm(tiny_vocab_of_size(5)), TrainingExample(Task.CLOSED_BOOK, "x", "  "))

    def _batch(self):
        return [
            TrainingExample(Task.RETRIEVAL, "retrieve: q", "<docid> t1 </docid>"),
            TrainingExample(Task.CLOSED_BOOK, "answer: q", "t2"),
            TrainingExample(Task.RAG_REFERENCE, "rag: q", "t3"),
            TrainingExample(Task.RAG_ANSWER, "rag: q <ref> t3 </ref>", "t2"),
            TrainingExample(Task.RAG_ANSWER, "rag: q <ref> t4 </ref>", "t2", noise_flag=True),
            TrainingExample(Task.AUX_DOCID2SUMMARY, "recite: t1", "t3 t4"),
        ]

    def test_rag_additivity_exact(self):
        lm = UniformLm(tiny_vocab_of_size(9))
        breakdown = combined_loss(lm, self._batch())
        assert breakdown.l_rag == breakdown.l_ref + breakdown.l_ans

    def test_combined_linear_in_lambda(self):
        lm = UniformLm(tiny_vocab_of_size(9))
        base = combined_loss(lm, self._batch())
        assert base.combined == pytest.approx(
            base.l_rank + base.l_gen + base.l_rag + base.l_aux, abs=1e-12)
        only_rank = combined_loss(lm, self._batch(), lambdas=(1, 0, 0, 0))
        assert only_rank.combined == only_rank.l_rank
        weighted = combined_loss(lm, self._batch(), lambdas=(2, 0.5, 3, 0.25))
        assert weighted.combined == pytest.approx(
            2 * weighted.l_rank + 0.5 * weighted.l_gen
            + 3 * weighted.l_rag + 0.25 * weighted.l_aux, abs=1e-12)

    def test_noise_term_weighted_by_tau(self):
        lm = UniformLm(tiny_vocab_of_size(9))
        noised = TrainingExample(Task.RAG_ANSWER, "rag: q", "t2", noise_flag=True)
        clean = TrainingExample(Task.RAG_ANSWER, "rag: q", "t2")
        tau = 0.3
        breakdown = combined_loss(lm, [clean, noised], tau=tau)
        clean_nll = sequence_loss(lm, clean)
        noised_nll = sequence_loss(lm, noised)
        assert breakdown.l_ans == pytest.approx(clean_nll + tau * noised_nll, abs=1e-12)

    def test_negative_lambda_rejected(self):
        lm = UniformLm(tiny_vocab_of_size(9))
        with pytest.raises(ValueError):
            combined_loss(lm, [], lambdas=(-1, 0, 0, 0))


class TestRendering:
    def test_closed_book_render_shape(self):
        vocab = build_vocabulary(None, ["answer: q", "yes"])
        tokens = render_example_tokens(vocab, TrainingExample(Task.CLOSED_BOOK, "answer: q", "yes"))
        assert tokens == encode(vocab, "answer: q") + [ANSWER_OPEN] + encode(vocab, "yes") + [EOS]

    def test_reference_render_wrapped_in_span(self):
        vocab = build_vocabulary(None, ["rag: q", "ref text"])
        tokens = render_example_tokens(vocab, TrainingExample(Task.RAG_REFERENCE, "rag: q", "ref text"))
        assert tokens[-1] == REF_CLOSE
        assert REF_OPEN in tokens

    def test_docid_list_render_plain(self):
        vocab = build_vocabulary(None, ["retrieve: q", "a # x"])
        ex = make_retrieval_example("q", ["a # x"])
        tokens = render_example_tokens(vocab, ex)
        assert tokens == encode(vocab, ex.input) + encode(vocab, ex.target) + [EOS]


def test_example_record_round_trip():
    ex = TrainingExample(Task.RAG_ANSWER, "in", "out", noise_flag=True)
    assert parse_example_record(example_record(ex)) == ex

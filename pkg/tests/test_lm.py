import json
import math
import random
import threading
import time
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from docidlm.lm import (
    LOG_FLOOR,
    NgramLm,
    RemoteLm,
    RemoteProtocolError,
    RemoteTimeoutError,
    UniformLm,
    VocabularyMismatchError,
    remote_logprobs,
    train_ngram,
)
from docidlm.tokens import build_vocabulary


def small_vocab(n_extra):
    words = [f"w{i:02d}" for i in range(n_extra)]
    return build_vocabulary(None, [" ".join(words)])


class TestUniform:
    def test_every_entry_is_log_inverse_size(self):
        vocab = small_vocab(0)  # size 7
        lm = UniformLm(vocab)
        vector = lm.next_logprobs([])
        assert vector.shape == (7,)
        assert np.allclose(vector, math.log(1 / 7))

    def test_invalid_context_token(self):
        lm = UniformLm(small_vocab(0))
        with pytest.raises(ValueError):
            lm.next_logprobs([99])


class TestNgramArithmetic:
    def test_seen_bigram_counts(self):
        # texts [[a,b],[a,b]], n=2: P(b|a) = (2+alpha) / (2 + alpha*V)
        vocab = small_vocab(2)
        a, b = 7, 8
        alpha = 0.1
        lm = train_ngram(vocab, [[a, b], [a, b]], order=2, alpha=alpha)
        vector = lm.next_logprobs([a])
        v = vocab.size
        assert vector[b] == pytest.approx(math.log((2 + alpha) / (2 + alpha * v)), abs=1e-12)
        assert vector[a] == pytest.approx(math.log(alpha / (2 + alpha * v)), abs=1e-12)

    def test_unseen_context_uniform_fallback(self):
        # with no training data every token gets alpha/(alpha*V) = 1/V
        vocab = small_vocab(0)
        lm = NgramLm(vocab, order=2, alpha=0.1).fit([])
        vector = lm.next_logprobs([0])
        assert np.allclose(vector, math.log(1 / vocab.size))

    def test_unigram_model_matches_frequencies(self):
        # 10-token fixture counted by hand: a x6, b x3, c x1
        vocab = small_vocab(3)
        a, b, c = 7, 8, 9
        text = [a, a, b, a, c, a, b, a, b, a]
        alpha = 0.5
        lm = train_ngram(vocab, [text], order=1, alpha=alpha)
        v = vocab.size
        vector = lm.next_logprobs([b, c])  # context ignored at order 1
        assert vector[a] == pytest.approx(math.log((6 + alpha) / (10 + alpha * v)))
        assert vector[b] == pytest.approx(math.log((3 + alpha) / (10 + alpha * v)))
        assert vector[c] == pytest.approx(math.log((1 + alpha) / (10 + alpha * v)))

    def test_unique_bigram_closed_form(self):
        # every bigram unique: P(next|prev) = (1+alpha)/(1+alpha*V)
        vocab = small_vocab(6)
        seq = [7, 8, 9, 10, 11, 12]
        alpha = 0.25
        lm = train_ngram(vocab, [seq], order=2, alpha=alpha)
        v = vocab.size
        for prev, nxt in zip(seq, seq[1:]):
            vector = lm.next_logprobs([prev])
            assert vector[nxt] == pytest.approx(math.log((1 + alpha) / (1 + alpha * v)))

    def test_longest_match_backoff(self):
        # trigram context seen once wins over bigram statistics
        vocab = small_vocab(4)
        a, b, c, d = 7, 8, 9, 10
        lm = train_ngram(vocab, [[a, b, c], [b, d], [b, d]], order=3, alpha=0.1)
        v = vocab.size
        vector = lm.next_logprobs([a, b])
        # context (a,b) occurred once, followed by c
        assert vector[c] == pytest.approx(math.log(1.1 / (1 + 0.1 * v)))
        # fresh context (d, b) backs off to (b,) where d followed twice, c never
        vector = lm.next_logprobs([d, b])
        assert vector[d] > vector[c]

    def test_parameter_validation(self):
        vocab = small_vocab(1)
        with pytest.raises(ValueError):
            NgramLm(vocab, order=0)
        with pytest.raises(ValueError):
            NgramLm(vocab, alpha=0.0)


class TestScorerContract:
    @pytest.mark.parametrize("order", [1, 2, 3])
    def test_normalization_on_random_contexts(self, order):
        rng = random.Random(order)
        vocab = small_vocab(12)
        texts = [[rng.randrange(7, vocab.size) for _ in range(rng.randint(1, 30))]
                 for _ in range(20)]
        lm = train_ngram(vocab, texts, order=order, alpha=0.1)
        for _ in range(50):
            context = [rng.randrange(0, vocab.size) for _ in range(rng.randint(0, 6))]
            total = np.exp(lm.next_logprobs(context)).sum()
            assert abs(total - 1.0) < 1e-6

    def test_determinism_bitwise(self):
        vocab = small_vocab(5)
        lm = train_ngram(vocab, [[7, 8, 9]], order=3)
        v1 = lm.next_logprobs([7, 8])
        v2 = lm.next_logprobs([7, 8])
        assert np.array_equal(v1, v2)

    def test_floor_respected(self):
        vocab = small_vocab(5)
        lm = train_ngram(vocab, [[7, 8]], order=2)
        assert lm.next_logprobs([7]).min() >= LOG_FLOOR


# ---------------------------------------------------------------------------
# Remote adapter


class _Handler(BaseHTTPRequestHandler):
    behavior = "uniform"
    vocab_size = 7

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length)) if length else {}
        assert isinstance(body.get("context"), list)
        if self.behavior == "slow":
            time.sleep(1.0)
        if self.behavior == "uniform":
            payload = {"logprobs": [math.log(1 / self.vocab_size)] * self.vocab_size}
        elif self.behavior == "short":
            payload = {"logprobs": [0.0] * (self.vocab_size - 1)}
        elif self.behavior == "garbage":
            self.send_response(200)
            self.end_headers()
            self.wfile.write(b"not json")
            return
        else:
            payload = {"logprobs": [math.log(1 / self.vocab_size)] * self.vocab_size}
        data = json.dumps(payload).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def remote_server():
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}/"
    server.shutdown()


class TestRemote:
    def test_uniform_echo(self, remote_server):
        _Handler.behavior = "uniform"
        vector = remote_logprobs(remote_server, [1, 2], vocab_size=7)
        assert np.allclose(vector, math.log(1 / 7))

    def test_vocabulary_mismatch(self, remote_server):
        _Handler.behavior = "short"
        with pytest.raises(VocabularyMismatchError):
            remote_logprobs(remote_server, [], vocab_size=7)

    def test_malformed_response(self, remote_server):
        _Handler.behavior = "garbage"
        with pytest.raises(RemoteProtocolError):
            remote_logprobs(remote_server, [], vocab_size=7)

    def test_timeout(self, remote_server):
        _Handler.behavior = "slow"
        start = time.monotonic()
        with pytest.raises(RemoteTimeoutError):
            remote_logprobs(remote_server, [], vocab_size=7, timeout=0.2)
        assert time.monotonic() - start < 0.9

    def test_unreachable_endpoint(self):
        with pytest.raises(RemoteTimeoutError):
            remote_logprobs("http://127.0.0.1:1/", [], vocab_size=7, timeout=0.2)

    def test_remote_lm_scorer_shape(self, remote_server):
        _Handler.behavior = "uniform"
        vocab = small_vocab(0)
        lm = RemoteLm(vocab, remote_server, timeout=2.0)
        vector = lm.next_logprobs([0, 1])
        assert vector.shape == (7,)

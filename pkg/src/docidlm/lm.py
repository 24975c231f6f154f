"""Next-token scorers: the LmScorer interface, a count-based n-gram
reference model, and an adapter for a remote model server.

Every scorer maps a token context to one log-probability per vocabulary id,
summing to 1 in probability space, deterministic, and floored at a finite
minimum so downstream sums never see -inf.
"""

from __future__ import annotations

import math
from typing import Protocol, Sequence

import numpy as np
import requests

from .tokens import Vocabulary

LOG_FLOOR = math.log(1e-12)


class RemoteError(RuntimeError):
    """Base class for remote scorer failures; no silent fallback."""


class RemoteTimeoutError(RemoteError):
    """Endpoint unreachable or no response within the deadline."""


class RemoteProtocolError(RemoteError):
    """Response was not the expected logprobs payload."""


class VocabularyMismatchError(RemoteError):
    """Remote vector length differs from the local vocabulary size."""


class LmScorer(Protocol):
    """Interface all decoding and loss evaluation is generic over."""

    vocab: Vocabulary

    def next_logprobs(self, context: Sequence[int]) -> np.ndarray: ...


def _check_context(vocab_size: int, context: Sequence[int]) -> None:
    for token in context:
        if not 0 <= token < vocab_size:
            raise ValueError(f"context token id {token} outside vocabulary of size {vocab_size}")


class UniformLm:
    """Assigns every token the same probability; handy as a fixture."""

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab
        self._vector = np.full(vocab.size, -math.log(vocab.size))

    def next_logprobs(self, context: Sequence[int]) -> np.ndarray:
        _check_context(self.vocab.size, context)
        return self._vector.copy()


class NgramLm:
    """Add-alpha smoothed n-gram model with longest-match backoff.

    Prediction uses the longest context suffix (down to the empty context)
    that occurred in training; the next-token distribution over that context
    is (count + alpha) / (total + alpha * V). A context nobody has seen falls
    all the way through to the uniform alpha / (alpha * V) = 1/V case.
    """

    def __init__(self, vocab: Vocabulary, order: int = 3, alpha: float = 0.1,
                 floor_logprob: float = LOG_FLOOR):
        if order < 1:
            raise ValueError("n-gram order must be >= 1")
        if alpha <= 0:
            raise ValueError("smoothing constant alpha must be > 0")
        if vocab.size == 0:
            raise ValueError("vocabulary is empty")
        self.vocab = vocab
        self.order = order
        self.alpha = alpha
        self.floor_logprob = floor_logprob
        # context tuple -> (token id array, count array, total count)
        self._tables: dict[tuple[int, ...], tuple[np.ndarray, np.ndarray, int]] = {}

    def fit(self, texts: Sequence[Sequence[int]]) -> "NgramLm":
        counts: dict[tuple[int, ...], dict[int, int]] = {}
        for seq in texts:
            _check_context(self.vocab.size, seq)
            for j, token in enumerate(seq):
                for ctx_len in range(0, min(self.order - 1, j) + 1):
                    context = tuple(seq[j - ctx_len : j])
                    table = counts.setdefault(context, {})
                    table[token] = table.get(token, 0) + 1
        for context, table in counts.items():
            ids = np.fromiter(table.keys(), dtype=np.int64, count=len(table))
            vals = np.fromiter(table.values(), dtype=np.int64, count=len(table))
            self._tables[context] = (ids, vals, int(vals.sum()))
        return self

    def _lookup(self, context: Sequence[int]) -> tuple[np.ndarray, np.ndarray, int]:
        history = tuple(context[max(0, len(context) - (self.order - 1)) :])
        for start in range(len(history) + 1):
            entry = self._tables.get(history[start:])
            if entry is not None and entry[2] > 0:
                return entry
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64), 0

    def next_logprobs(self, context: Sequence[int]) -> np.ndarray:
        _check_context(self.vocab.size, context)
        ids, vals, total = self._lookup(context)
        denom = math.log(total + self.alpha * self.vocab.size)
        vector = np.full(self.vocab.size, math.log(self.alpha) - denom)
        if len(ids):
            vector[ids] = np.log(vals + self.alpha) - denom
        return np.maximum(vector, self.floor_logprob)


def train_ngram(vocab: Vocabulary, texts: Sequence[Sequence[int]],
                order: int = 3, alpha: float = 0.1) -> NgramLm:
    """Count every k-gram (k <= order) in ``texts`` and return the model."""
    return NgramLm(vocab, order=order, alpha=alpha).fit(texts)


def remote_logprobs(endpoint: str, context: Sequence[int], vocab_size: int,
                    timeout: float = 30.0) -> np.ndarray:
    """Fetch one logprob vector from a remote scorer.

    Protocol: POST ``{"context": [int, ...]}`` as JSON; the response must be
    ``{"logprobs": [float, ...]}`` with exactly ``vocab_size`` entries.
    """
    try:
        response = requests.post(endpoint, json={"context": list(context)}, timeout=timeout)
    except (requests.Timeout, requests.ConnectionError) as exc:
        raise RemoteTimeoutError(f"remote scorer at {endpoint} unreachable: {exc}") from exc
    try:
        payload = response.json()
        logprobs = payload["logprobs"]
        vector = np.asarray(logprobs, dtype=np.float64)
    except (ValueError, KeyError, TypeError) as exc:
        raise RemoteProtocolError(f"malformed response from {endpoint}: {exc}") from exc
    if vector.ndim != 1 or len(vector) != vocab_size:
        raise VocabularyMismatchError(
            f"remote returned {vector.shape} logprobs, local vocabulary has {vocab_size}"
        )
    if np.isnan(vector).any():
        raise RemoteProtocolError(f"remote response from {endpoint} contains NaN")
    return np.maximum(vector, LOG_FLOOR)


class RemoteLm:
    """LmScorer backed by a network endpoint speaking the logprobs protocol."""

    def __init__(self, vocab: Vocabulary, endpoint: str, timeout: float = 30.0):
        self.vocab = vocab
        self.endpoint = endpoint
        self.timeout = timeout

    def next_logprobs(self, context: Sequence[int]) -> np.ndarray:
        _check_context(self.vocab.size, context)
        return remote_logprobs(self.endpoint, context, self.vocab.size, timeout=self.timeout)

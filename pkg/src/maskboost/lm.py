"""Clients for the mask-fill service boundary.

A client takes rendered masked text and returns the mask-position
probability distribution over the service's vocabulary. The LM behind the
boundary is frozen, so identical text must always yield identical
distributions; every call increments an atomic query counter so callers can
account for forward passes exactly.

Wire protocol (HTTP, JSON):
    POST {endpoint}/v1/mask-fill   body {"text": str, "top_k": int|null}
        -> {"vocab_id", "vocab_size", "probs"}                  (dense)
        -> {"vocab_id", "vocab_size", "indices", "probs"}       (sparse)
    GET  {endpoint}/v1/info
        -> {"vocab_id", "vocab_size", "mask_literal"}
Status 400 is a non-retryable client error; 503 is retryable.
"""

from __future__ import annotations

import hashlib
import re
import threading
import time
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
import requests

from .core import MaskDistribution
from .errors import ProtocolError, TransportError, VocabMismatch

RETRY_ATTEMPTS = 5
RETRY_BACKOFF_BASE = 0.2  # seconds, doubled per attempt


@runtime_checkable
class LmClient(Protocol):
    """Behavioral contract every mask-fill client satisfies."""

    def query(self, text: str) -> MaskDistribution: ...

    def vocab_size(self) -> int: ...

    def vocab_id(self) -> str: ...

    def queries_issued(self) -> int: ...


class _QueryCounter:
    """Thread-safe monotonic counter."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._count = 0

    def increment(self) -> None:
        with self._lock:
            self._count += 1

    def value(self) -> int:
        with self._lock:
            return self._count


def _expand_sparse(
    indices: Sequence[int], probs: Sequence[float], vocab_size: int
) -> np.ndarray:
    """Expand a top-k response to a dense vector, renormalized to sum 1.

    Unreturned tokens become zeros, so the expansion is documented lossy;
    the relative ordering of the returned probabilities is preserved.
    """
    dense = np.zeros(vocab_size, dtype=np.float64)
    indices = np.asarray(indices, dtype=np.int64)
    values = np.asarray(probs, dtype=np.float64)
    if indices.shape != values.shape:
        raise ProtocolError("sparse response: indices and probs lengths differ")
    if len(np.unique(indices)) != len(indices):
        raise ProtocolError("sparse response: duplicate indices")
    if np.any(indices < 0) or np.any(indices >= vocab_size):
        raise ProtocolError("sparse response: index out of vocabulary range")
    if np.any(values < 0):
        raise ProtocolError("sparse response: negative probability")
    total = values.sum()
    if total <= 0:
        raise ProtocolError("sparse response: probabilities sum to zero")
    dense[indices] = values / total
    return dense.astype(np.float32)


class HttpLmClient:
    """Client for the HTTP wire protocol with bounded-retry transport.

    Retries transport failures and 503 responses up to `RETRY_ATTEMPTS`
    times with exponential backoff (base 200 ms, doubled per attempt). A
    configured `expected_vocab_id` turns any service-side vocabulary change
    into a hard VocabMismatch instead of silently mixing caches.
    """

    def __init__(
        self,
        endpoint: str,
        top_k: int | None = None,
        expected_vocab_id: str | None = None,
        timeout: float = 30.0,
        backoff_base: float = RETRY_BACKOFF_BASE,
        session: requests.Session | None = None,
    ) -> None:
        self._endpoint = endpoint.rstrip("/")
        self._top_k = top_k
        self._timeout = timeout
        self._backoff_base = backoff_base
        self._session = session or requests.Session()
        self._counter = _QueryCounter()
        info = self._request("GET", f"{self._endpoint}/v1/info")
        try:
            self._vocab_size = int(info["vocab_size"])
            self._vocab_id = str(info["vocab_id"])
            self._mask_literal = str(info["mask_literal"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed /v1/info response: {info!r}") from exc
        if expected_vocab_id is not None and expected_vocab_id != self._vocab_id:
            raise VocabMismatch(
                f"service vocab_id {self._vocab_id!r} != expected {expected_vocab_id!r}"
            )

    def _request(self, method: str, url: str, body: dict | None = None) -> dict:
        last_error: Exception | None = None
        for attempt in range(RETRY_ATTEMPTS):
            if attempt > 0:
                time.sleep(self._backoff_base * (2 ** (attempt - 1)))
            try:
                resp = self._session.request(method, url, json=body, timeout=self._timeout)
            except requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code == 503:
                last_error = TransportError(f"{url}: service unavailable (503)")
                continue
            if resp.status_code != 200:
                raise ProtocolError(f"{url}: unexpected status {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError as exc:
                raise ProtocolError(f"{url}: response is not JSON") from exc
        raise TransportError(f"{url}: failed after {RETRY_ATTEMPTS} attempts: {last_error}")

    def query(self, text: str) -> MaskDistribution:
        body = {"text": text, "top_k": self._top_k}
        payload = self._request("POST", f"{self._endpoint}/v1/mask-fill", body)
        self._counter.increment()
        return self._parse_distribution(payload)

    def _parse_distribution(self, payload: dict) -> MaskDistribution:
        try:
            vocab_id = str(payload["vocab_id"])
            vocab_size = int(payload["vocab_size"])
            probs = payload["probs"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed mask-fill response: {payload!r}") from exc
        if vocab_id != self._vocab_id:
            raise VocabMismatch(
                f"response vocab_id {vocab_id!r} != configured {self._vocab_id!r}"
            )
        if vocab_size != self._vocab_size:
            raise ProtocolError(
                f"response vocab_size {vocab_size} != configured {self._vocab_size}"
            )
        if "indices" in payload:
            dense = _expand_sparse(payload["indices"], probs, vocab_size)
            return MaskDistribution(probs=dense, vocab_id=vocab_id, renormalized=True)
        dense = np.asarray(probs, dtype=np.float32)
        if dense.shape != (vocab_size,):
            raise ProtocolError(
                f"dense response has {dense.shape} probabilities, expected {vocab_size}"
            )
        if np.any(dense < 0):
            raise ProtocolError("dense response contains a negative probability")
        # Stored as-is: the 1e-4 sum tolerance is checked by MaskDistribution.
        return MaskDistribution(probs=dense, vocab_id=vocab_id)

    def vocab_size(self) -> int:
        return self._vocab_size

    def vocab_id(self) -> str:
        return self._vocab_id

    def mask_literal(self) -> str:
        return self._mask_literal

    def queries_issued(self) -> int:
        return self._counter.value()


# Class markers let the synthetic oracle recover the label from rendered
# text alone, the way a real LM recovers it from meaning.
_CLASS_MARKER = re.compile(r"@c(\d+)@")


def class_marker(label: int) -> str:
    """The in-text marker `synthetic_oracle` keys its class signal on."""
    return f"@c{label}@"


class SyntheticMaskedLm:
    """Deterministic stand-in for a frozen masked LM.

    For text containing the marker of class ``c`` the distribution places
    `class_signal` mass uniformly on a designated class-c token block and
    spreads the remainder pseudo-randomly over the whole vocabulary, seeded
    by a hash of (seed, text). Identical text therefore always produces a
    bit-identical vector, across calls and across processes.
    """

    def __init__(
        self,
        seed: int,
        class_signal: float,
        num_classes: int,
        vocab_size: int,
        block_size: int | None = None,
    ) -> None:
        if vocab_size < num_classes:
            raise ValueError("vocab_size must be >= num_classes")
        if not 0.0 <= class_signal <= 1.0:
            raise ValueError("class_signal must be in [0, 1]")
        self._seed = seed
        self._signal = class_signal
        self._num_classes = num_classes
        self._vocab_size = vocab_size
        self._block = block_size or max(1, vocab_size // (2 * num_classes))
        if self._block * num_classes > vocab_size:
            raise ValueError("class token blocks exceed the vocabulary")
        self._vocab_id = f"synthetic-{seed}-{num_classes}x{vocab_size}"
        self._counter = _QueryCounter()

    def class_block(self, label: int) -> np.ndarray:
        """Token indices carrying the class signal for `label`."""
        return np.arange(label * self._block, (label + 1) * self._block)

    def query(self, text: str) -> MaskDistribution:
        self._counter.increment()
        digest = hashlib.sha256(f"{self._seed}\x00{text}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        # Exponential noise: heavy enough tails that low class signals give
        # genuinely fallible weak learners instead of trivial separability.
        noise = rng.exponential(1.0, self._vocab_size)
        noise /= noise.sum()
        probs = (1.0 - self._signal) * noise
        match = _CLASS_MARKER.search(text)
        if match is not None and self._signal > 0.0:
            label = int(match.group(1)) % self._num_classes
            probs[self.class_block(label)] += self._signal / self._block
        else:
            # No marker: keep the vector a distribution regardless.
            probs /= probs.sum()
        return MaskDistribution(probs=probs.astype(np.float32), vocab_id=self._vocab_id)

    def vocab_size(self) -> int:
        return self._vocab_size

    def vocab_id(self) -> str:
        return self._vocab_id

    def queries_issued(self) -> int:
        return self._counter.value()


def synthetic_oracle(
    seed: int, class_signal: float, num_classes: int, vocab_size: int
) -> SyntheticMaskedLm:
    """Factory matching the client contract; see SyntheticMaskedLm."""
    return SyntheticMaskedLm(seed, class_signal, num_classes, vocab_size)


def verify_client_contract(client: LmClient, sample_texts: Sequence[str]) -> None:
    """Shared conformance harness for any LmClient implementation.

    Checks, for each sample text: the returned vector is a valid distribution
    of the advertised size, repeated queries are bit-identical (frozen LM),
    and the query counter increments by exactly one per call. Raises
    AssertionError on the first violation.
    """
    for text in sample_texts:
        before = client.queries_issued()
        first = client.query(text)
        assert client.queries_issued() == before + 1, "counter must increment by 1 per query"
        assert len(first) == client.vocab_size(), "distribution length must match vocab_size"
        assert first.vocab_id == client.vocab_id(), "distribution must carry the client vocab_id"
        assert np.all(first.probs >= 0)
        second = client.query(text)
        assert client.queries_issued() == before + 2
        assert np.array_equal(first.probs, second.probs), "repeated query must be bit-identical"

"""Verbalizer learning: score matrix, closed-form assignment, token screening.

Given cached mask distributions for one prompt and the current example
weights, this module produces one weak learner: a per-class chosen token
whose mask probability scores that class. The weighted-L1 relaxation of the
fit problem is linear in the assignment matrix, so its minimizer reduces to
a per-token argmax over a score matrix; screening then keeps only the
strongest tokens per class and picks the combination with the best weighted
training accuracy.

Sign convention: the score matrix is stored so that the per-token winning
class is an argmax. Entries for an example's own class accumulate
+w_i * p_i[v]; entries for every other class accumulate -w_i * p_i[v].
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cache import PromptMatrix
from .errors import DimensionMismatch, NoValidCombination

DEFAULT_SCREEN_WIDTH = 10
DEFAULT_COMBINATION_BUDGET = 100_000

_CHUNK = 4096  # combinations scored per block during screening


@dataclass(frozen=True)
class Verbalizer:
    """Per-class chosen tokens, plus diagnostics from the learning pass.

    `full_assignment` is the closed-form per-token class map kept for
    inspection only; prediction uses `chosen_tokens` exclusively.
    `combinations_searched` counts the distinct-token combinations the
    screening pass actually evaluated.
    """

    chosen_tokens: tuple[int, ...]
    full_assignment: np.ndarray | None = None
    weighted_accuracy: float = 0.0
    combinations_searched: int = 0

    def __post_init__(self) -> None:
        if len(set(self.chosen_tokens)) != len(self.chosen_tokens):
            raise NoValidCombination("chosen tokens must be distinct across classes")

    @property
    def num_classes(self) -> int:
        return len(self.chosen_tokens)


@dataclass(frozen=True)
class WeakLearner:
    """(prompt, verbalizer) pair; `alpha` is filled in by the booster."""

    prompt_id: str
    verbalizer: Verbalizer
    alpha: float = 0.0

    def predict(self, rows: np.ndarray) -> np.ndarray:
        """Class with the highest chosen-token probability per row.

        Accepts a single distribution (1-D) or a batch (2-D); argmax ties
        break toward the smallest class index.
        """
        rows = np.asarray(rows)
        picked = rows[..., list(self.verbalizer.chosen_tokens)]
        return np.argmax(picked, axis=-1)


def score_matrix(
    matrix: PromptMatrix | np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray,
    num_classes: int | None = None,
) -> np.ndarray:
    """Accumulate the weighted, sign-adjusted token scores, shape (|Y|, |V|).

    S[c, v] = sum_i w_i * p_i[v] * (+1 if y_i == c else -1). Computed in
    float64 regardless of the distribution dtype.
    """
    probs = matrix.matrix if isinstance(matrix, PromptMatrix) else np.asarray(matrix)
    labels = np.asarray(labels, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    if probs.ndim != 2:
        raise DimensionMismatch("distribution matrix must be 2-D")
    n = probs.shape[0]
    if labels.shape != (n,) or weights.shape != (n,):
        raise DimensionMismatch(
            f"rows={n}, labels={labels.shape}, weights={weights.shape} must all agree"
        )
    k = int(num_classes) if num_classes is not None else int(labels.max()) + 1
    if np.any(labels < 0) or np.any(labels >= k):
        raise DimensionMismatch(f"labels must lie in [0, {k})")
    signs = np.where(labels[:, None] == np.arange(k)[None, :], 1.0, -1.0)
    return (weights[:, None] * signs).T @ probs.astype(np.float64)


def l1_assignment(scores: np.ndarray) -> np.ndarray:
    """Closed-form token-to-class map: per-token argmax over classes.

    Ties break toward the smallest class index. This is the exact minimizer
    of the weighted L1 relaxation over column-one-hot assignment matrices.
    """
    return np.argmax(np.asarray(scores), axis=0)


def _candidate_sets(scores: np.ndarray, m: int, exclude_tokens: Sequence[int] | None) -> np.ndarray:
    masked = np.asarray(scores, dtype=np.float64)
    if exclude_tokens is not None and len(exclude_tokens) > 0:
        masked = masked.copy()
        masked[:, list(exclude_tokens)] = -np.inf
    # Stable sort on the negated scores: equal scores keep ascending token order.
    order = np.argsort(-masked, axis=1, kind="stable")
    return order[:, :m]


def screen(
    scores: np.ndarray,
    matrix: PromptMatrix | np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray,
    m: int = DEFAULT_SCREEN_WIDTH,
    combination_budget: int = DEFAULT_COMBINATION_BUDGET,
    exclude_tokens: Sequence[int] | None = None,
) -> Verbalizer:
    """Pick one token per class maximizing weighted training accuracy.

    Candidates per class are the m highest-scoring tokens for that class;
    every combination with pairwise-distinct tokens is evaluated. Ties break
    by (a) larger summed score over the chosen tokens, then (b) smaller
    token-index tuple. If m^|Y| would exceed `combination_budget`, m is
    reduced to the largest width that fits, with a warning.
    """
    probs = matrix.matrix if isinstance(matrix, PromptMatrix) else np.asarray(matrix)
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    k, v = scores.shape
    if m < 1:
        raise ValueError("m must be >= 1")
    if m * k > v:
        raise ValueError(f"m*|Y| = {m * k} exceeds vocabulary size {v}")
    if probs.shape[0] != labels.shape[0] or probs.shape[0] != weights.shape[0]:
        raise DimensionMismatch("matrix rows, labels, and weights must agree")

    if m**k > combination_budget:
        reduced = max(1, int(combination_budget ** (1.0 / k)))
        while reduced**k > combination_budget:
            reduced -= 1
        warnings.warn(
            f"screening width m={m} yields {m**k} combinations, over budget "
            f"{combination_budget}; reduced to m={reduced}",
            stacklevel=2,
        )
        m = max(1, reduced)

    candidates = _candidate_sets(scores, m, exclude_tokens)
    probs64 = probs.astype(np.float64)

    best: tuple[float, float, tuple[int, ...]] | None = None
    searched = 0
    combo_iter = itertools.product(*candidates)
    while True:
        block = np.array(list(itertools.islice(combo_iter, _CHUNK)), dtype=np.int64)
        if block.size == 0:
            break
        if k > 1:
            distinct = np.all(np.diff(np.sort(block, axis=1), axis=1) != 0, axis=1)
            block = block[distinct]
        if block.shape[0] == 0:
            continue
        searched += block.shape[0]
        # (N, n_combos, K): probability of each combination's class tokens.
        gathered = probs64[:, block]
        preds = np.argmax(gathered, axis=2)
        correct = preds == labels[:, None]
        accuracy = weights @ correct
        score_sum = scores[np.arange(k)[None, :], block].sum(axis=1)
        contenders = (
            np.nonzero(accuracy >= best[0])[0] if best is not None else range(block.shape[0])
        )
        for idx in contenders:
            key = (float(accuracy[idx]), float(score_sum[idx]), tuple(int(t) for t in block[idx]))
            if best is None or _combo_beats(key, best):
                best = key
    if best is None:
        raise NoValidCombination(
            f"no combination of distinct tokens exists for m={m}, |Y|={k}"
        )
    return Verbalizer(
        chosen_tokens=best[2],
        full_assignment=l1_assignment(scores),
        weighted_accuracy=best[0],
        combinations_searched=searched,
    )


def _combo_beats(key: tuple[float, float, tuple[int, ...]], best: tuple) -> bool:
    """Total order: accuracy desc, summed score desc, token tuple asc."""
    if key[0] != best[0]:
        return key[0] > best[0]
    if key[1] != best[1]:
        return key[1] > best[1]
    return key[2] < best[2]


def learn_weak_learner(
    matrix: PromptMatrix,
    labels: np.ndarray,
    weights: np.ndarray,
    num_classes: int,
    m: int = DEFAULT_SCREEN_WIDTH,
    combination_budget: int = DEFAULT_COMBINATION_BUDGET,
    exclude_tokens: Sequence[int] | None = None,
) -> WeakLearner:
    """Score, screen, and wrap the result as an (unweighted) weak learner."""
    scores = score_matrix(matrix, labels, weights, num_classes)
    verbalizer = screen(
        scores,
        matrix,
        labels,
        weights,
        m=m,
        combination_budget=combination_budget,
        exclude_tokens=exclude_tokens,
    )
    return WeakLearner(prompt_id=matrix.prompt_id, verbalizer=verbalizer)

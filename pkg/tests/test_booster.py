from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest

from maskboost.booster import (
    BoostConfig,
    Ensemble,
    boost,
    ensemble_from_json_dict,
    ensemble_scores,
    learner_weight,
    majority_vote_ensemble,
    predict,
)
from maskboost.cache import PromptMatrix
from maskboost.errors import EmptyPromptPool, ExhaustedRetries, MissingPromptRow
from maskboost.verbalizer import Verbalizer, WeakLearner

from conftest import make_prompt_matrix, random_distribution_matrix
from oracles import boost_trace_exact, vote_tally

# ---------------------------------------------------------------------------
# The 8-example hand fixture: two stump-like prompts over a 4-token
# vocabulary. The expected trace below was derived with exact rational
# arithmetic (see oracles.boost_trace_exact) before the booster was written.
# ---------------------------------------------------------------------------

TRACE_LABELS = np.array([0, 0, 0, 0, 1, 1, 1, 1])

TRACE_MAT_A = [
    [55, 25, 12, 8],
    [60, 20, 10, 10],
    [50, 30, 12, 8],
    [20, 58, 12, 10],
    [62, 18, 12, 8],
    [22, 56, 12, 10],
    [18, 60, 14, 8],
    [25, 55, 10, 10],
]
TRACE_MAT_B = [
    [10, 10, 15, 65],
    [12, 8, 66, 14],
    [10, 10, 70, 10],
    [8, 12, 62, 18],
    [10, 10, 18, 62],
    [12, 8, 14, 66],
    [10, 10, 12, 68],
    [8, 12, 68, 12],
]

TRACE_SEED = 6
TRACE_DRAWS = [0, 1, 1, 0, 1]  # np.random.default_rng(6).integers(2), five calls

# Frozen expected sequence (exact fractions rendered as floats).
TRACE_EXPECTED = [
    {
        "prompt": "stump-a",
        "tokens": (0, 1),
        "err": 0.25,
        "alpha": math.log(3.0),
        "weights": [Fraction(1, 12)] * 3 + [Fraction(1, 4)] * 2 + [Fraction(1, 12)] * 3,
    },
    {
        "prompt": "stump-b",
        "tokens": (2, 3),
        "err": Fraction(1, 6),
        "alpha": math.log(5.0),
        "weights": [
            Fraction(1, 4), Fraction(1, 20), Fraction(1, 20), Fraction(3, 20),
            Fraction(3, 20), Fraction(1, 20), Fraction(1, 20), Fraction(1, 4),
        ],
    },
    {
        "prompt": "stump-b",
        "tokens": (0, 1),
        "err": Fraction(2, 5),
        "alpha": math.log(1.5),
        "weights": [
            Fraction(5, 24), Fraction(1, 24), Fraction(1, 24), Fraction(3, 16),
            Fraction(3, 16), Fraction(1, 16), Fraction(1, 16), Fraction(5, 24),
        ],
    },
    {
        "prompt": "stump-a",
        "tokens": (0, 1),
        "err": 0.375,
        "alpha": math.log(5.0 / 3.0),
        "weights": [
            Fraction(1, 6), Fraction(1, 30), Fraction(1, 30), Fraction(1, 4),
            Fraction(1, 4), Fraction(1, 20), Fraction(1, 20), Fraction(1, 6),
        ],
    },
    {
        "prompt": "stump-b",
        "tokens": (2, 3),
        "err": Fraction(1, 3),
        "alpha": math.log(2.0),
        "weights": [
            Fraction(1, 4), Fraction(1, 40), Fraction(1, 40), Fraction(3, 16),
            Fraction(3, 16), Fraction(3, 80), Fraction(3, 80), Fraction(1, 4),
        ],
    },
]


def trace_matrices() -> list[PromptMatrix]:
    ids = tuple(f"e{i}" for i in range(8))
    return [
        PromptMatrix(
            prompt_id=name,
            split_tag="train",
            example_ids=ids,
            matrix=np.array(rows, dtype=np.float32) / 100.0,
            vocab_id="trace-vocab",
        )
        for name, rows in (("stump-a", TRACE_MAT_A), ("stump-b", TRACE_MAT_B))
    ]


def run_trace(iterations: int = 5):
    matrices = trace_matrices()
    config = BoostConfig(
        max_learners=iterations, m=2, patience=20, rng_seed=TRACE_SEED
    )
    return boost(matrices, TRACE_LABELS, matrices, TRACE_LABELS, config)


class TestLearnerWeight:
    def test_two_class_quarter_error(self):
        assert learner_weight(0.25, 2) == pytest.approx(math.log(3.0), abs=1e-12)

    def test_four_class_point_six_error(self):
        # log(0.4/0.6) + log(3) = log(2); still usable because 0.6 < 3/4.
        assert learner_weight(0.6, 4) == pytest.approx(math.log(2.0), abs=1e-12)

    def test_two_class_half_error_is_zero(self):
        assert learner_weight(0.5, 2) == pytest.approx(0.0, abs=1e-12)

    def test_positive_iff_better_than_chance(self):
        for k in (2, 3, 4, 6):
            bound = (k - 1) / k
            assert learner_weight(bound - 1e-6, k) > 0
            assert learner_weight(bound + 1e-6, k) < 0


class TestBoostTrace:
    def test_draw_sequence_is_frozen(self):
        rng = np.random.default_rng(TRACE_SEED)
        assert [int(rng.integers(2)) for _ in range(5)] == TRACE_DRAWS

    def test_matches_hand_trace(self):
        _, run = run_trace()
        assert len(run.history) == 5
        for row, expected in zip(run.history, TRACE_EXPECTED):
            assert row["prompt_id"] == expected["prompt"]
            assert row["err"] == pytest.approx(float(expected["err"]), abs=1e-12)
            assert row["alpha"] == pytest.approx(expected["alpha"], abs=1e-12)
        for learner, expected in zip(run.learners, TRACE_EXPECTED):
            assert learner.verbalizer.chosen_tokens == expected["tokens"]
        final = np.array([float(w) for w in TRACE_EXPECTED[-1]["weights"]])
        np.testing.assert_allclose(run.weights, final, atol=1e-12)

    def test_oracle_recomputation_agrees_with_frozen_values(self):
        mats = [
            [[Fraction(x, 100) for x in row] for row in TRACE_MAT_A],
            [[Fraction(x, 100) for x in row] for row in TRACE_MAT_B],
        ]
        trace = boost_trace_exact(mats, list(TRACE_LABELS), TRACE_DRAWS, 2, 5, m=2)
        for got, expected in zip(trace, TRACE_EXPECTED):
            assert got["tokens"] == expected["tokens"]
            assert got["err"] == Fraction(expected["err"])
            assert got["weights"] == expected["weights"]

    def test_per_iteration_weights_reachable_by_replay(self):
        # Replaying each accepted learner's mistakes must reproduce both the
        # recorded err and the final weights (internal consistency).
        matrices = {pm.prompt_id: pm for pm in trace_matrices()}
        _, run = run_trace()
        weights = np.full(8, 1 / 8)
        for learner, row in zip(run.learners, run.history):
            mistakes = learner.predict(matrices[learner.prompt_id].matrix) != TRACE_LABELS
            err = float(weights @ mistakes) / float(weights.sum())
            assert err == pytest.approx(row["err"], abs=1e-12)
            weights = weights * np.exp(row["alpha"] * mistakes)
            weights = weights / weights.sum()
        np.testing.assert_allclose(weights, run.weights, atol=1e-12)


class TestBoostInvariants:
    def test_weights_stay_normalized_and_positive(self):
        _, run = run_trace()
        assert abs(float(run.weights.sum()) - 1.0) < 1e-9
        assert np.all(run.weights >= 0)
        for row in run.history:
            assert abs(row["weight_sum"] - 1.0) < 1e-9
            assert row["weight_min"] >= 0
            assert row["alpha"] > 0

    def test_mistake_weights_rise_relative_to_correct(self):
        matrices = {pm.prompt_id: pm for pm in trace_matrices()}
        _, run = run_trace(iterations=1)
        learner = run.learners[0]
        mistakes = learner.predict(matrices[learner.prompt_id].matrix) != TRACE_LABELS
        # After one accepted round the mistake/correct weight ratio grows by
        # exactly e^alpha relative to the uniform start.
        ratio = run.weights[mistakes][0] / run.weights[~mistakes][0]
        assert ratio == pytest.approx(math.exp(run.history[0]["alpha"]), rel=1e-12)

    def test_determinism_bit_for_bit(self):
        first_ensemble, first_run = run_trace()
        second_ensemble, second_run = run_trace()
        assert first_ensemble.to_json() == second_ensemble.to_json()
        np.testing.assert_array_equal(first_run.weights, second_run.weights)
        assert [r["alpha"] for r in first_run.history] == [
            r["alpha"] for r in second_run.history
        ]

    def test_history_errors_below_usability_bound(self):
        _, run = run_trace()
        for row in run.history:
            assert row["err"] < 0.5


class TestBoostEdgeCases:
    def _separable_matrices(self, n=8, v=6):
        labels = np.array([0, 1] * (n // 2))
        rows = np.zeros((n, v), dtype=np.float32)
        for i, y in enumerate(labels):
            rows[i, y] = 1.0
        pms = [
            PromptMatrix(
                prompt_id=f"p{j}",
                split_tag="train",
                example_ids=tuple(f"e{i}" for i in range(n)),
                matrix=rows,
                vocab_id="v",
            )
            for j in range(3)
        ]
        return pms, labels

    def test_perfect_first_learner_switches_to_best_single(self):
        pms, labels = self._separable_matrices()
        ensemble, run = boost(pms, labels, pms, labels, BoostConfig(m=2, rng_seed=0))
        assert run.stop_reason == "perfect_learner"
        assert ensemble.mode == "best_single"
        assert len(ensemble.learners) == 1
        assert ensemble.learners[0].alpha == 1.0
        # One per-prompt row recorded while picking the winner.
        assert len(run.history) == len(pms)

    def test_perfect_later_learner_truncates_and_stops(self, rng):
        # Prompt "noisy" admits a weak-but-imperfect learner; prompt
        # "clean" is perfectly separable. Draw order must hit noisy first.
        n = 8
        labels = np.array([0, 1] * 4)
        noisy = random_distribution_matrix(rng, n, 6) * 0.2
        for i, y in enumerate(labels):
            noisy[i, y] += 0.8 * (0.4 if i in (0, 1) else 1.0)
        noisy[0, 1] = noisy[0].max() + 0.1  # force two mistakes
        noisy[1, 0] = noisy[1].max() + 0.1
        noisy /= noisy.sum(axis=1, keepdims=True)
        clean = np.zeros((n, 6), dtype=np.float32)
        for i, y in enumerate(labels):
            clean[i, y + 2] = 1.0
        ids = tuple(f"e{i}" for i in range(n))
        pms = [
            PromptMatrix(prompt_id="noisy", split_tag="train", example_ids=ids,
                         matrix=noisy.astype(np.float32), vocab_id="v"),
            PromptMatrix(prompt_id="clean", split_tag="train", example_ids=ids,
                         matrix=clean, vocab_id="v"),
        ]
        def first_two_draws(s: int) -> list[int]:
            gen = np.random.default_rng(s)
            return [int(gen.integers(2)) for _ in range(2)]

        seed = next(s for s in range(100) if first_two_draws(s) == [0, 1])
        ensemble, run = boost(
            pms, labels, pms, labels, BoostConfig(m=2, rng_seed=seed, max_learners=10)
        )
        assert run.stop_reason == "perfect_learner"
        assert ensemble.mode == "boosted"
        assert all(l.prompt_id == "noisy" for l in ensemble.learners)

    def test_exhausted_retries_raises_when_nothing_accepted(self):
        # Identical rows for both classes: every verbalizer is exactly
        # chance, so every draw is rejected.
        rows = np.full((2, 4), 0.25, dtype=np.float32)
        pm = PromptMatrix(
            prompt_id="p", split_tag="train", example_ids=("a", "b"),
            matrix=rows, vocab_id="v",
        )
        with pytest.raises(ExhaustedRetries):
            boost([pm], np.array([0, 1]), None, None, BoostConfig(m=2, retry_budget=3))

    def test_empty_pool_rejected(self):
        with pytest.raises(EmptyPromptPool):
            boost([], np.array([0, 1]), None, None, BoostConfig())

    def test_plateau_stops_and_truncates(self, rng):
        # Label-independent validation rows: accuracy cannot steadily
        # improve, so a small patience triggers the plateau stop.
        n, v = 16, 8
        labels = rng.integers(0, 2, size=n)
        pms = [make_prompt_matrix(rng, n, v, prompt_id=f"p{j}") for j in range(4)]
        val = [
            PromptMatrix(
                prompt_id=pm.prompt_id, split_tag="validation",
                example_ids=tuple(f"v{i}" for i in range(n)),
                matrix=random_distribution_matrix(rng, n, v), vocab_id="test-vocab",
            )
            for pm in pms
        ]
        ensemble, run = boost(
            pms, labels, val, labels,
            BoostConfig(m=2, rng_seed=1, max_learners=200, patience=3),
        )
        assert run.stop_reason in ("plateau", "exhausted_retries")
        if run.stop_reason == "plateau":
            assert len(run.learners) - run.best_iteration >= 3
        assert len(ensemble.learners) == run.best_iteration

    def test_merge_validation_runs_fixed_budget(self):
        matrices = trace_matrices()
        config = BoostConfig(
            max_learners=4, m=2, rng_seed=TRACE_SEED, merge_validation=True
        )
        ensemble, run = boost(matrices, TRACE_LABELS, None, None, config)
        assert run.stop_reason == "max_learners"
        assert len(ensemble.learners) == 4
        assert all(row["val_accuracy"] is None for row in run.history)


class TestPredict:
    def _ensemble(self, alphas, tokens, mode="boosted"):
        learners = tuple(
            WeakLearner(prompt_id=f"p{i}", verbalizer=Verbalizer(chosen_tokens=toks), alpha=a)
            for i, (a, toks) in enumerate(zip(alphas, tokens))
        )
        return Ensemble(learners=learners, num_classes=2, vocab_id="v", mode=mode)

    def test_single_learner_identity(self, rng):
        ensemble = self._ensemble([1.0], [(0, 1)])
        rows = random_distribution_matrix(rng, 5, 4)
        expected = np.argmax(rows[:, :2], axis=1)
        np.testing.assert_array_equal(predict(ensemble, {"p0": rows}), expected)

    def test_weighted_vote_tie_breaks_low(self):
        # alphas (2,1,1) voting (0,1,1): classes tie at 2; class 0 wins.
        ensemble = self._ensemble([2.0, 1.0, 1.0], [(0, 1), (1, 0), (1, 0)])
        row = np.array([1.0, 0.0, 0.0, 0.0], dtype=np.float32)
        # learner p0 predicts 0; p1 and p2 see token1=0 < token0=1 -> class 1.
        assert predict(ensemble, {"p0": row, "p1": row, "p2": row}) == 0

    def test_missing_prompt_row(self):
        ensemble = self._ensemble([1.0], [(0, 1)])
        with pytest.raises(MissingPromptRow):
            predict(ensemble, {})

    def test_matches_vote_tally_oracle(self, rng):
        n, v = 50, 10
        rows = {f"p{i}": random_distribution_matrix(rng, n, v) for i in range(4)}
        alphas = [1.5, 0.7, 0.9, 2.0]
        tokens = [(0, 1), (2, 3), (4, 5), (6, 7)]
        ensemble = self._ensemble(alphas, tokens)
        per_learner = [
            np.argmax(rows[f"p{i}"][:, list(toks)], axis=1) for i, toks in enumerate(tokens)
        ]
        expected = vote_tally(per_learner, alphas, 2)
        np.testing.assert_array_equal(predict(ensemble, rows), expected)

    def test_probability_averaging_flag(self, rng):
        ensemble = self._ensemble([1.0, 1.0], [(0, 1), (2, 3)])
        rows = {"p0": random_distribution_matrix(rng, 6, 4),
                "p1": random_distribution_matrix(rng, 6, 4)}
        scores = ensemble_scores(ensemble, rows, average_probs=True)
        manual = rows["p0"][:, :2].astype(np.float64) + rows["p1"][:, 2:].astype(np.float64)
        np.testing.assert_allclose(scores, manual, atol=1e-12)

    def test_serialization_round_trip(self):
        ensemble = self._ensemble([1.5, 0.5], [(0, 1), (2, 3)])
        restored = ensemble_from_json_dict(
            __import__("json").loads(ensemble.to_json())
        )
        assert restored.to_json() == ensemble.to_json()


class TestMajorityVote:
    def test_single_prompt_equals_that_learner(self, rng):
        pm = make_prompt_matrix(rng, 10, 6)
        labels = rng.integers(0, 2, size=10)
        ensemble = majority_vote_ensemble([pm], labels, m=2)
        assert ensemble.mode == "majority_vote"
        learner = ensemble.learners[0]
        np.testing.assert_array_equal(
            predict(ensemble, {"p0": pm.matrix}), learner.predict(pm.matrix)
        )

    def test_separable_pool_hits_full_training_accuracy(self):
        labels = np.array([0, 1] * 4)
        rows = np.zeros((8, 6), dtype=np.float32)
        for i, y in enumerate(labels):
            rows[i, y] = 1.0
        pms = [
            PromptMatrix(prompt_id=f"p{j}", split_tag="train",
                         example_ids=tuple(f"e{i}" for i in range(8)),
                         matrix=rows, vocab_id="v")
            for j in range(10)
        ]
        ensemble = majority_vote_ensemble(pms, labels, m=2)
        rows_by_prompt = {pm.prompt_id: pm.matrix for pm in pms}
        np.testing.assert_array_equal(predict(ensemble, rows_by_prompt), labels)

    def test_vote_tally_matches_oracle(self, rng):
        labels = rng.integers(0, 3, size=12)
        pms = [make_prompt_matrix(rng, 12, 9, prompt_id=f"p{j}") for j in range(5)]
        ensemble = majority_vote_ensemble(pms, labels, m=3, num_classes=3)
        rows_by_prompt = {pm.prompt_id: pm.matrix for pm in pms}
        per_learner = [l.predict(rows_by_prompt[l.prompt_id]) for l in ensemble.learners]
        expected = vote_tally(per_learner, [1.0] * 5, 3)
        np.testing.assert_array_equal(predict(ensemble, rows_by_prompt), expected)

    def test_empty_pool(self):
        with pytest.raises(EmptyPromptPool):
            majority_vote_ensemble([], np.array([0, 1]))

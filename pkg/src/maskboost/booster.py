"""Multi-class adaptive boosting over prompt/verbalizer weak learners.

Each iteration draws a prompt uniformly at random, learns a verbalizer under
the current example weights, and accepts the learner when its weighted error
beats random guessing (err < (|Y|-1)/|Y|, the multi-class usability bound).
Accepted learners reweight the examples multiplicatively; the finished
ensemble predicts by weighted hard votes.

Because every prompt's mask distributions are cached up front, the whole
loop runs without a single LM query.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .cache import PromptMatrix
from .core import uniform_weights
from .errors import (
    EmptyPromptPool,
    ExhaustedRetries,
    MaskBoostError,
    MissingPromptRow,
    VocabMismatch,
)
from .verbalizer import (
    DEFAULT_COMBINATION_BUDGET,
    DEFAULT_SCREEN_WIDTH,
    WeakLearner,
    learn_weak_learner,
)

MODE_BOOSTED = "boosted"
MODE_BEST_SINGLE = "best_single"
MODE_MAJORITY_VOTE = "majority_vote"


def learner_weight(err: float, num_classes: int, epsilon_err: float = 1e-10) -> float:
    """Vote weight for a learner with weighted error `err`.

    alpha = log((1-err)/err) + log(|Y|-1), with err clamped away from the
    undefined endpoints. Positive exactly when err < (|Y|-1)/|Y|, i.e. when
    the learner beats uniform guessing over |Y| classes.
    """
    clamped = min(max(err, epsilon_err), 1.0 - epsilon_err)
    return float(np.log((1.0 - clamped) / clamped) + np.log(num_classes - 1))


@dataclass(frozen=True)
class BoostConfig:
    """Knobs for the boosting loop.

    `merge_validation` trains on the merged train+validation set with a
    fixed number of learners and no early stopping; `retry_budget` bounds
    consecutive rejected draws (learners no better than chance).
    """

    max_learners: int = 200
    m: int = DEFAULT_SCREEN_WIDTH
    patience: int = 20
    rng_seed: int = 0
    epsilon_err: float = 1e-10
    retry_budget: int = 10
    merge_validation: bool = False
    combination_budget: int = DEFAULT_COMBINATION_BUDGET
    exclude_tokens: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.max_learners < 1:
            raise MaskBoostError("max_learners must be >= 1")
        if self.patience < 1:
            raise MaskBoostError("patience must be >= 1")


@dataclass(frozen=True)
class Ensemble:
    """The finished classifier: weak learners plus their vote weights."""

    learners: tuple[WeakLearner, ...]
    num_classes: int
    vocab_id: str
    mode: str = MODE_BOOSTED
    prompt_table: dict | None = None

    def __post_init__(self) -> None:
        if self.mode == MODE_BOOSTED and any(l.alpha <= 0 for l in self.learners):
            raise MaskBoostError("boosted ensembles require all alphas > 0")
        if self.mode == MODE_BEST_SINGLE and (
            len(self.learners) != 1 or self.learners[0].alpha != 1.0
        ):
            raise MaskBoostError("best_single ensembles hold exactly one learner with alpha 1")

    @property
    def prompt_ids(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(l.prompt_id for l in self.learners))

    def to_json_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "mode": self.mode,
            "learners": [
                {
                    "prompt_id": l.prompt_id,
                    "chosen_tokens": list(l.verbalizer.chosen_tokens),
                    "alpha": l.alpha,
                }
                for l in self.learners
            ],
            "vocab_id": self.vocab_id,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2)


def ensemble_from_json_dict(payload: dict, prompt_table: dict | None = None) -> Ensemble:
    from .verbalizer import Verbalizer

    learners = tuple(
        WeakLearner(
            prompt_id=str(rec["prompt_id"]),
            verbalizer=Verbalizer(chosen_tokens=tuple(int(t) for t in rec["chosen_tokens"])),
            alpha=float(rec["alpha"]),
        )
        for rec in payload["learners"]
    )
    return Ensemble(
        learners=learners,
        num_classes=int(payload["num_classes"]),
        vocab_id=str(payload["vocab_id"]),
        mode=str(payload["mode"]),
        prompt_table=prompt_table,
    )


@dataclass
class BoostRun:
    """Evolving state and diagnostics of one boosting session."""

    weights: np.ndarray
    learners: list[WeakLearner] = field(default_factory=list)
    history: list[dict] = field(default_factory=list)
    stop_reason: str = "max_learners"
    best_iteration: int = 0


def _shared_vocab_id(matrices: Sequence[PromptMatrix]) -> str:
    vocab_ids = {pm.vocab_id for pm in matrices}
    if len(vocab_ids) != 1:
        raise VocabMismatch(f"prompt matrices span multiple vocab_ids: {sorted(vocab_ids)}")
    return next(iter(vocab_ids))


def _infer_num_classes(*label_arrays: np.ndarray | None) -> int:
    top = 0
    for arr in label_arrays:
        if arr is not None and len(arr):
            top = max(top, int(np.max(arr)))
    return top + 1


def boost(
    matrices: Sequence[PromptMatrix],
    train_labels: np.ndarray,
    val_matrices: Sequence[PromptMatrix] | None,
    val_labels: np.ndarray | None,
    config: BoostConfig,
    num_classes: int | None = None,
) -> tuple[Ensemble, BoostRun]:
    """Run the boosting loop; returns the ensemble and its run diagnostics.

    Per accepted iteration t: uniform random prompt draw, verbalizer
    learning under the current weights, weighted error err, learner weight
    alpha = log((1-err)/err) + log(|Y|-1), multiplicative weight update on
    mistakes, renormalization. Draws whose learner is no better than chance
    (alpha <= 0) are rejected without touching the weights; `retry_budget`
    consecutive rejections end the run (an error if nothing was accepted
    yet). A perfect first learner (err == 0) switches to best-single mode:
    one learner per prompt on uniform weights, keep the validation winner.
    A perfect later learner stops the run.

    When validation matrices are supplied (and merge_validation is off), the
    cumulative ensemble's validation accuracy is tracked after every
    accepted learner; the run stops once it fails to improve for `patience`
    consecutive learners and the result is truncated at the best point.
    """
    if not matrices:
        raise EmptyPromptPool("boost requires at least one prompt matrix")
    train_labels = np.asarray(train_labels, dtype=np.int64)
    vocab_id = _shared_vocab_id(matrices)
    k = num_classes or _infer_num_classes(train_labels, val_labels)
    n = len(train_labels)
    for pm in matrices:
        if pm.num_rows != n:
            raise MaskBoostError(
                f"matrix for prompt {pm.prompt_id!r} has {pm.num_rows} rows, labels have {n}"
            )

    track_val = val_matrices is not None and not config.merge_validation
    if track_val:
        val_labels = np.asarray(val_labels, dtype=np.int64)
        val_by_prompt = {pm.prompt_id: pm.matrix for pm in val_matrices}
        val_votes = np.zeros((len(val_labels), k), dtype=np.float64)

    rng = np.random.default_rng(config.rng_seed)
    run = BoostRun(weights=uniform_weights(n))
    chance_bound = (k - 1) / k
    consecutive_rejects = 0
    best_val = -1.0

    while len(run.learners) < config.max_learners:
        j = int(rng.integers(len(matrices)))
        pm = matrices[j]
        learner = learn_weak_learner(
            pm,
            train_labels,
            run.weights,
            k,
            m=config.m,
            combination_budget=config.combination_budget,
            exclude_tokens=config.exclude_tokens or None,
        )
        mistakes = learner.predict(pm.matrix) != train_labels
        err = float(run.weights @ mistakes) / float(run.weights.sum())

        if err == 0.0:
            if not run.learners:
                run.stop_reason = "perfect_learner"
                ensemble = _best_single(
                    matrices, train_labels, val_matrices, val_labels, config, k, vocab_id, run
                )
                return ensemble, run
            run.stop_reason = "perfect_learner"
            break

        if err >= chance_bound:
            consecutive_rejects += 1
            if consecutive_rejects >= config.retry_budget:
                if not run.learners:
                    raise ExhaustedRetries(
                        f"{consecutive_rejects} consecutive draws produced unusable learners"
                    )
                run.stop_reason = "exhausted_retries"
                break
            continue
        consecutive_rejects = 0

        alpha = learner_weight(err, k, config.epsilon_err)
        run.weights = run.weights * np.exp(alpha * mistakes)
        run.weights = run.weights / run.weights.sum()
        accepted = replace(learner, alpha=alpha)
        run.learners.append(accepted)
        t = len(run.learners)

        val_accuracy = None
        if track_val:
            val_rows = val_by_prompt.get(accepted.prompt_id)
            if val_rows is None:
                raise MissingPromptRow(f"no validation matrix for prompt {accepted.prompt_id!r}")
            preds = accepted.predict(val_rows)
            val_votes[np.arange(len(preds)), preds] += alpha
            val_accuracy = float(np.mean(np.argmax(val_votes, axis=1) == val_labels))
            if val_accuracy > best_val:
                best_val = val_accuracy
                run.best_iteration = t
        else:
            run.best_iteration = t

        run.history.append(
            {
                "t": t,
                "prompt_id": accepted.prompt_id,
                "err": err,
                "alpha": alpha,
                "val_accuracy": val_accuracy,
                "weight_sum": float(run.weights.sum()),
                "weight_min": float(run.weights.min()),
            }
        )

        if track_val and t - run.best_iteration >= config.patience:
            run.stop_reason = "plateau"
            break

    kept = tuple(run.learners[: run.best_iteration]) if track_val else tuple(run.learners)
    ensemble = Ensemble(learners=kept, num_classes=k, vocab_id=vocab_id, mode=MODE_BOOSTED)
    return ensemble, run


def _best_single(
    matrices: Sequence[PromptMatrix],
    train_labels: np.ndarray,
    val_matrices: Sequence[PromptMatrix] | None,
    val_labels: np.ndarray | None,
    config: BoostConfig,
    num_classes: int,
    vocab_id: str,
    run: BoostRun,
) -> Ensemble:
    """One learner per prompt on uniform weights; keep the validation winner.

    Without a validation set (merge_validation) the training accuracy
    decides. Ties keep the earliest prompt in pool order.
    """
    weights = uniform_weights(len(train_labels))
    val_by_prompt = (
        {pm.prompt_id: pm.matrix for pm in val_matrices} if val_matrices is not None else None
    )
    best: tuple[float, int, WeakLearner] | None = None
    for position, pm in enumerate(matrices):
        learner = learn_weak_learner(
            pm,
            train_labels,
            weights,
            num_classes,
            m=config.m,
            combination_budget=config.combination_budget,
            exclude_tokens=config.exclude_tokens or None,
        )
        if val_by_prompt is not None and not config.merge_validation:
            preds = learner.predict(val_by_prompt[pm.prompt_id])
            accuracy = float(np.mean(preds == val_labels))
        else:
            accuracy = float(np.mean(learner.predict(pm.matrix) == train_labels))
        run.history.append(
            {
                "t": position + 1,
                "prompt_id": pm.prompt_id,
                "err": None,
                "alpha": 1.0,
                "val_accuracy": accuracy,
                "weight_sum": 1.0,
                "weight_min": float(weights.min()),
            }
        )
        if best is None or accuracy > best[0]:
            best = (accuracy, position, replace(learner, alpha=1.0))
    assert best is not None
    run.best_iteration = best[1] + 1
    return Ensemble(
        learners=(best[2],),
        num_classes=num_classes,
        vocab_id=vocab_id,
        mode=MODE_BEST_SINGLE,
    )


def majority_vote_ensemble(
    matrices: Sequence[PromptMatrix],
    train_labels: np.ndarray,
    val_matrices: Sequence[PromptMatrix] | None = None,
    val_labels: np.ndarray | None = None,
    m: int = DEFAULT_SCREEN_WIDTH,
    num_classes: int | None = None,
    combination_budget: int = DEFAULT_COMBINATION_BUDGET,
) -> Ensemble:
    """Unweighted-vote ablation: one learner per prompt on uniform weights."""
    if not matrices:
        raise EmptyPromptPool("majority vote requires at least one prompt matrix")
    train_labels = np.asarray(train_labels, dtype=np.int64)
    k = num_classes or _infer_num_classes(train_labels, val_labels)
    weights = uniform_weights(len(train_labels))
    learners = tuple(
        replace(
            learn_weak_learner(pm, train_labels, weights, k, m=m, combination_budget=combination_budget),
            alpha=1.0,
        )
        for pm in matrices
    )
    return Ensemble(
        learners=learners,
        num_classes=k,
        vocab_id=_shared_vocab_id(matrices),
        mode=MODE_MAJORITY_VOTE,
    )


def ensemble_scores(
    ensemble: Ensemble,
    rows_by_prompt: Mapping[str, np.ndarray],
    average_probs: bool = False,
) -> np.ndarray:
    """Per-class vote scores, shape (..., num_classes).

    Weighted hard votes by default; with `average_probs` each learner
    contributes its chosen-token probabilities instead of a one-hot vote.
    Majority-vote ensembles weight every learner equally.
    """
    first = None
    for learner in ensemble.learners:
        if learner.prompt_id not in rows_by_prompt:
            raise MissingPromptRow(f"no distribution row for prompt {learner.prompt_id!r}")
        rows = np.asarray(rows_by_prompt[learner.prompt_id])
        weight = 1.0 if ensemble.mode == MODE_MAJORITY_VOTE else learner.alpha
        if first is None:
            scores = np.zeros(rows.shape[:-1] + (ensemble.num_classes,), dtype=np.float64)
            first = rows.shape[:-1]
        if average_probs:
            scores += weight * rows[..., list(learner.verbalizer.chosen_tokens)]
        else:
            preds = learner.predict(rows)
            np.add.at(scores, (*np.indices(preds.shape), preds), weight)
    if first is None:
        raise MaskBoostError("ensemble has no learners")
    return scores


def predict(
    ensemble: Ensemble,
    rows_by_prompt: Mapping[str, np.ndarray],
    average_probs: bool = False,
) -> np.ndarray | int:
    """Predicted class index (or indices for 2-D batches); ties break low."""
    scores = ensemble_scores(ensemble, rows_by_prompt, average_probs=average_probs)
    result = np.argmax(scores, axis=-1)
    return int(result) if result.ndim == 0 else result

"""End-to-end orchestration: splits, cache filling, training, evaluation.

All randomness in a run flows from one seed: the few-shot split sampler uses
it directly and the boosting loop uses seed+1, so a run config plus a seed
pins every byte of the output.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence
from urllib.parse import parse_qs, urlparse

import numpy as np

from .booster import (
    BoostConfig,
    BoostRun,
    Ensemble,
    boost,
    ensemble_scores,
)
from .cache import PromptMatrix, ensure_cached
from .core import (
    DEFAULT_MASK_LITERAL,
    Dataset,
    PromptTemplate,
    load_dataset,
    load_prompts,
)
from .errors import InsufficientExamples, MaskBoostError, VocabMismatch
from .lm import HttpLmClient, LmClient, SyntheticMaskedLm
from .verbalizer import DEFAULT_SCREEN_WIDTH, learn_weak_learner


@dataclass(frozen=True)
class FewShotSpec:
    """k examples per class for training, and another k for validation."""

    k: int = 16
    seed: int = 0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise MaskBoostError("k must be >= 1")


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    n_examples: int
    per_class_f1: tuple[float, ...] | None = None
    macro_f1: float | None = None
    query_count_train: int = 0
    query_count_eval: int = 0

    def to_json_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "n_examples": self.n_examples,
            "per_class_f1": list(self.per_class_f1) if self.per_class_f1 is not None else None,
            "macro_f1": self.macro_f1,
            "query_count_train": self.query_count_train,
            "query_count_eval": self.query_count_eval,
        }


def sample_few_shot(source: Dataset, spec: FewShotSpec) -> tuple[Dataset, Dataset]:
    """Class-balanced disjoint train/validation subsets, k per class each.

    Deterministic under the spec seed; examples keep their source order
    within each split.
    """
    rng = np.random.default_rng(spec.seed)
    labels = source.labels()
    train_idx: list[int] = []
    val_idx: list[int] = []
    for cls in range(source.num_classes):
        members = np.nonzero(labels == cls)[0]
        if len(members) < 2 * spec.k:
            raise InsufficientExamples(
                f"class {cls} has {len(members)} examples, need {2 * spec.k}"
            )
        picked = rng.permutation(members)[: 2 * spec.k]
        train_idx.extend(int(i) for i in picked[: spec.k])
        val_idx.extend(int(i) for i in picked[spec.k :])
    train_idx.sort()
    val_idx.sort()
    train = Dataset(
        examples=tuple(source.examples[i] for i in train_idx),
        num_classes=source.num_classes,
        split_tag="train",
        label_names=source.label_names,
    )
    val = Dataset(
        examples=tuple(source.examples[i] for i in val_idx),
        num_classes=source.num_classes,
        split_tag="validation",
        label_names=source.label_names,
    )
    return train, val


def refine_prompts(
    candidates: Sequence[PromptTemplate],
    train_matrices: Sequence[PromptMatrix],
    train_labels: np.ndarray,
    val_matrices: Sequence[PromptMatrix],
    val_labels: np.ndarray,
    num_classes: int,
    m: int = DEFAULT_SCREEN_WIDTH,
    keep: int = 10,
) -> list[PromptTemplate]:
    """Keep the candidates whose single weak learner validates best.

    One learner per candidate is trained on the unweighted training set and
    ranked by validation accuracy; ties keep candidate order. Uses only
    cached matrices, so refinement issues no LM queries of its own.
    """
    if keep > len(candidates):
        raise MaskBoostError(f"keep={keep} exceeds {len(candidates)} candidates")
    train_labels = np.asarray(train_labels, dtype=np.int64)
    val_labels = np.asarray(val_labels, dtype=np.int64)
    weights = np.full(len(train_labels), 1.0 / len(train_labels))
    val_by_prompt = {pm.prompt_id: pm.matrix for pm in val_matrices}
    scored: list[tuple[float, int, PromptTemplate]] = []
    for position, (prompt, pm) in enumerate(zip(candidates, train_matrices)):
        if pm.prompt_id != prompt.id:
            raise MaskBoostError("candidate prompts and matrices must be aligned")
        learner = learn_weak_learner(pm, train_labels, weights, num_classes, m=m)
        accuracy = float(np.mean(learner.predict(val_by_prompt[prompt.id]) == val_labels))
        scored.append((accuracy, position, prompt))
    scored.sort(key=lambda item: (-item[0], item[1]))
    return [prompt for _, _, prompt in scored[:keep]]


def _f1_scores(labels: np.ndarray, preds: np.ndarray, num_classes: int) -> tuple[float, ...]:
    scores = []
    for cls in range(num_classes):
        tp = int(np.sum((preds == cls) & (labels == cls)))
        fp = int(np.sum((preds == cls) & (labels != cls)))
        fn = int(np.sum((preds != cls) & (labels == cls)))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return tuple(scores)


def evaluate(
    ensemble: Ensemble,
    test_matrices: Sequence[PromptMatrix],
    test_labels: np.ndarray,
    compute_f1: bool = False,
    query_count_train: int = 0,
    query_count_eval: int = 0,
) -> EvalReport:
    """Score the ensemble on cached test matrices.

    The headline F1 follows the two-class convention (binary F1 on class 1)
    and macro-averages otherwise.
    """
    test_labels = np.asarray(test_labels, dtype=np.int64)
    rows_by_prompt = {pm.prompt_id: pm.matrix for pm in test_matrices}
    scores = ensemble_scores(ensemble, rows_by_prompt)
    preds = np.argmax(scores, axis=-1)
    correct = int(np.sum(preds == test_labels))
    per_class = macro = None
    if compute_f1:
        per_class = _f1_scores(test_labels, preds, ensemble.num_classes)
        macro = per_class[1] if ensemble.num_classes == 2 else float(np.mean(per_class))
    return EvalReport(
        accuracy=correct / len(test_labels),
        n_examples=len(test_labels),
        per_class_f1=per_class,
        macro_f1=macro,
        query_count_train=query_count_train,
        query_count_eval=query_count_eval,
    )


# ---------------------------------------------------------------------------
# Run configuration and the file-level pipeline the CLI drives.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RefineConfig:
    enabled: bool = False
    candidates: str | None = None
    keep: int = 10


@dataclass(frozen=True)
class RunConfig:
    dataset: str
    prompts: str
    cache_dir: str
    endpoint: str | None = None
    k: int = 16
    seed: int = 0
    max_learners: int = 200
    m: int = DEFAULT_SCREEN_WIDTH
    patience: int = 20
    refine: RefineConfig = field(default_factory=RefineConfig)
    merge_validation: bool = False
    mask_literal: str = DEFAULT_MASK_LITERAL
    top_k: int | None = None

    def boost_config(self) -> BoostConfig:
        return BoostConfig(
            max_learners=self.max_learners,
            m=self.m,
            patience=self.patience,
            rng_seed=self.seed + 1,
            merge_validation=self.merge_validation,
        )


def load_run_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})
    refine_raw = raw.get("refine") or {}
    base = Path(path).parent

    def _resolve(p: str | None) -> str | None:
        if p is None:
            return None
        candidate = Path(p)
        return str(candidate if candidate.is_absolute() else base / candidate)

    return RunConfig(
        dataset=_resolve(raw["dataset"]),
        prompts=_resolve(raw["prompts"]),
        cache_dir=_resolve(raw["cache_dir"]),
        endpoint=raw.get("endpoint"),
        k=int(raw.get("k", 16)),
        seed=int(raw.get("seed", 0)),
        max_learners=int(raw.get("max_learners", 200)),
        m=int(raw.get("m", DEFAULT_SCREEN_WIDTH)),
        patience=int(raw.get("patience", 20)),
        refine=RefineConfig(
            enabled=bool(refine_raw.get("enabled", False)),
            candidates=_resolve(refine_raw.get("candidates")),
            keep=int(refine_raw.get("keep", 10)),
        ),
        merge_validation=bool(raw.get("merge_validation", False)),
        mask_literal=str(raw.get("mask_literal", DEFAULT_MASK_LITERAL)),
        top_k=raw.get("top_k"),
    )


def make_client(config: RunConfig, num_classes: int) -> LmClient | None:
    """Build the LM client a run config names; None means cache-only.

    Besides http(s) endpoints, the scheme
    ``synthetic:?seed=0&signal=1.0&vocab=64`` builds the deterministic
    synthetic oracle, which makes fully offline runs and demos possible.
    """
    if config.endpoint is None:
        return None
    parsed = urlparse(config.endpoint)
    if parsed.scheme == "synthetic":
        params = parse_qs(parsed.query)

        def _param(name: str, default: float) -> float:
            return float(params[name][0]) if name in params else default

        block = params.get("block")
        return SyntheticMaskedLm(
            seed=int(_param("seed", 0)),
            class_signal=_param("signal", 1.0),
            num_classes=num_classes,
            vocab_size=int(_param("vocab", 64)),
            block_size=int(block[0]) if block else None,
        )
    return HttpLmClient(config.endpoint, top_k=config.top_k)


@dataclass
class RunData:
    """Datasets, prompts, and the client for one configured run."""

    config: RunConfig
    train: Dataset
    validation: Dataset
    test: Dataset
    prompts: tuple[PromptTemplate, ...]
    candidates: tuple[PromptTemplate, ...] | None
    client: LmClient | None

    @property
    def num_classes(self) -> int:
        return self.train.num_classes


def prepare_run(config: RunConfig, client: LmClient | None = None) -> RunData:
    source = load_dataset(config.dataset, "train")
    test = load_dataset(config.dataset, "test")
    train, validation = sample_few_shot(source, FewShotSpec(k=config.k, seed=config.seed))
    prompts = load_prompts(config.prompts)
    candidates = load_prompts(config.refine.candidates) if config.refine.enabled else None
    if client is None:
        client = make_client(config, source.num_classes)
    return RunData(
        config=config,
        train=train,
        validation=validation,
        test=test,
        prompts=prompts,
        candidates=candidates,
        client=client,
    )


def fill_caches(data: RunData) -> dict:
    """Ensure every needed (prompt, split) matrix is on disk.

    Returns per-split query counts. With refinement enabled, train and
    validation caches cover the full candidate pool (their cost is what
    refinement trades for quality) and the test cache covers the refined
    pool only.
    """
    config = data.config
    counts: dict[str, int] = {}
    learn_pool = data.candidates if data.candidates is not None else data.prompts
    for split, dataset in (("train", data.train), ("validation", data.validation)):
        before = data.client.queries_issued() if data.client else 0
        ensure_cached(data.client, dataset, learn_pool, config.cache_dir, config.mask_literal)
        after = data.client.queries_issued() if data.client else 0
        counts[split] = after - before
    test_pool = active_prompts(data)  # refinement reads the caches just filled
    before = data.client.queries_issued() if data.client else 0
    ensure_cached(data.client, data.test, test_pool, config.cache_dir, config.mask_literal)
    after = data.client.queries_issued() if data.client else 0
    counts["test"] = after - before
    return counts


def _matrices(data: RunData, split: str, prompts: Sequence[PromptTemplate]) -> list[PromptMatrix]:
    datasets = {"train": data.train, "validation": data.validation, "test": data.test}
    return ensure_cached(
        data.client,
        datasets[split],
        prompts,
        data.config.cache_dir,
        mask_literal=data.config.mask_literal,
    )


def active_prompts(data: RunData) -> list[PromptTemplate]:
    """The working pool: refined top-`keep` candidates, or the configured set."""
    if data.candidates is None:
        return list(data.prompts)
    train_ms = _matrices(data, "train", data.candidates)
    val_ms = _matrices(data, "validation", data.candidates)
    return refine_prompts(
        data.candidates,
        train_ms,
        data.train.labels(),
        val_ms,
        data.validation.labels(),
        data.num_classes,
        m=data.config.m,
        keep=data.config.refine.keep,
    )


def train_ensemble(data: RunData) -> tuple[Ensemble, BoostRun]:
    """Cache-backed boosting for a prepared run."""
    prompts = active_prompts(data)
    train_ms = _matrices(data, "train", prompts)
    val_ms = _matrices(data, "validation", prompts)
    train_labels = data.train.labels()
    val_labels = data.validation.labels()
    if data.config.merge_validation:
        merged = [
            PromptMatrix(
                prompt_id=tm.prompt_id,
                split_tag="train",
                example_ids=tm.example_ids + vm.example_ids,
                matrix=np.concatenate([tm.matrix, vm.matrix]),
                vocab_id=tm.vocab_id,
            )
            for tm, vm in zip(train_ms, val_ms)
        ]
        ensemble, run = boost(
            merged,
            np.concatenate([train_labels, val_labels]),
            None,
            None,
            data.config.boost_config(),
            num_classes=data.num_classes,
        )
    else:
        ensemble, run = boost(
            train_ms,
            train_labels,
            val_ms,
            val_labels,
            data.config.boost_config(),
            num_classes=data.num_classes,
        )
    prompt_table = {p.id: p for p in prompts}
    ensemble = Ensemble(
        learners=ensemble.learners,
        num_classes=ensemble.num_classes,
        vocab_id=ensemble.vocab_id,
        mode=ensemble.mode,
        prompt_table=prompt_table,
    )
    return ensemble, run


def evaluate_ensemble(
    data: RunData,
    ensemble: Ensemble,
    compute_f1: bool = True,
    query_count_train: int = 0,
) -> EvalReport:
    pool = {p.id: p for p in data.prompts}
    if data.candidates is not None:
        pool.update({p.id: p for p in data.candidates})
    if ensemble.prompt_table:
        pool.update(ensemble.prompt_table)
    needed = [pool[pid] for pid in ensemble.prompt_ids]
    before = data.client.queries_issued() if data.client else 0
    test_ms = _matrices(data, "test", needed)
    after = data.client.queries_issued() if data.client else 0
    for pm in test_ms:
        if pm.vocab_id != ensemble.vocab_id:
            raise VocabMismatch(
                f"ensemble was trained against vocab {ensemble.vocab_id!r} but the "
                f"test cache for prompt {pm.prompt_id!r} holds {pm.vocab_id!r}"
            )
    return evaluate(
        ensemble,
        test_ms,
        data.test.labels(),
        compute_f1=compute_f1,
        query_count_train=query_count_train,
        query_count_eval=after - before,
    )

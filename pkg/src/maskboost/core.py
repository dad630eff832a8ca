"""Domain types: labeled examples, datasets, prompt templates, distributions.

Everything here is immutable after construction and safe to share across
threads. File formats (JSONL datasets, JSON prompt files) live here too so
that every other module can stay free of parsing concerns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, MaskBoostError, MultipleMasks, PlacementMismatch

DEFAULT_MASK_LITERAL = "[MASK]"

PLACEMENT_SINGLE = "after_a"
PLACEMENT_PAIR = "between_a_b"

# Sum tolerance for distributions as they arrive from a service; after an
# explicit renormalization the sum must be exact to the tighter bound.
PROB_SUM_TOL = 1e-4
PROB_SUM_TOL_RENORMALIZED = 1e-6


@dataclass(frozen=True)
class LabeledExample:
    """One classified text (or text pair) with a dense integer label."""

    id: str
    text_a: str
    text_b: str | None
    label: int

    def __post_init__(self) -> None:
        if not self.text_a:
            raise MaskBoostError(f"example {self.id!r}: text_a must be non-empty")
        if self.label < 0:
            raise MaskBoostError(f"example {self.id!r}: label must be >= 0")


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of examples for one split.

    `label_names` is a reporting-only sidecar; all computation uses the dense
    integer labels.
    """

    examples: tuple[LabeledExample, ...]
    num_classes: int
    split_tag: str
    label_names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.num_classes < 1:
            raise MaskBoostError("num_classes must be positive")
        if self.split_tag not in ("train", "validation", "test"):
            raise MaskBoostError(f"unknown split_tag {self.split_tag!r}")
        seen: set[str] = set()
        for ex in self.examples:
            if ex.label >= self.num_classes:
                raise MaskBoostError(
                    f"example {ex.id!r}: label {ex.label} >= num_classes {self.num_classes}"
                )
            if ex.id in seen:
                raise MaskBoostError(f"duplicate example id {ex.id!r}")
            seen.add(ex.id)

    def __len__(self) -> int:
        return len(self.examples)

    @property
    def example_ids(self) -> tuple[str, ...]:
        return tuple(ex.id for ex in self.examples)

    def labels(self) -> np.ndarray:
        """Per-example class indices, aligned with `examples` order."""
        return np.array([ex.label for ex in self.examples], dtype=np.int64)


@dataclass(frozen=True)
class PromptTemplate:
    """A prompt with one mask slot, applied around one or two input texts.

    The prefix/suffix strings carry their own spacing verbatim; the renderer
    inserts nothing implicitly.
    """

    id: str
    prefix: str
    suffix: str
    placement: str = PLACEMENT_SINGLE

    def __post_init__(self) -> None:
        if self.placement not in (PLACEMENT_SINGLE, PLACEMENT_PAIR):
            raise MaskBoostError(f"unknown placement {self.placement!r}")


@dataclass(frozen=True)
class MaskDistribution:
    """Probability vector over the vocabulary at the mask position."""

    probs: np.ndarray
    vocab_id: str
    renormalized: bool = False

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=np.float32)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 1:
            raise MaskBoostError("probs must be one-dimensional")
        if np.any(probs < 0):
            raise MaskBoostError("probs must be non-negative")
        tol = PROB_SUM_TOL_RENORMALIZED if self.renormalized else PROB_SUM_TOL
        total = float(probs.sum(dtype=np.float64))
        if abs(total - 1.0) > tol:
            raise MaskBoostError(f"probs sum to {total}, outside tolerance {tol}")

    def __len__(self) -> int:
        return len(self.probs)


def render(
    template: PromptTemplate,
    example: LabeledExample,
    mask_literal: str = DEFAULT_MASK_LITERAL,
) -> str:
    """Concatenate an example with a template around a single mask slot.

    Single-sentence: ``text_a + prefix + mask + suffix``.
    Sentence-pair:   ``text_a + prefix + mask + suffix + text_b``.

    Raises PlacementMismatch when the template placement disagrees with the
    presence of `text_b`, and MultipleMasks when any part other than the mask
    slot already contains the literal (the result must contain it exactly once).
    """
    if template.placement == PLACEMENT_PAIR:
        if example.text_b is None:
            raise PlacementMismatch(
                f"template {template.id!r} is sentence-pair but example {example.id!r} has no text_b"
            )
        rendered = example.text_a + template.prefix + mask_literal + template.suffix + example.text_b
    else:
        if example.text_b is not None:
            raise PlacementMismatch(
                f"template {template.id!r} is single-sentence but example {example.id!r} has text_b"
            )
        rendered = example.text_a + template.prefix + mask_literal + template.suffix
    if rendered.count(mask_literal) != 1:
        raise MultipleMasks(
            f"rendering template {template.id!r} on example {example.id!r} produced "
            f"{rendered.count(mask_literal)} occurrences of {mask_literal!r}"
        )
    return rendered


# ---------------------------------------------------------------------------
# File formats
#
# Dataset: one JSON object per line {"id", "text_a", "text_b", "label"}, plus
# a manifest JSON {"num_classes": int, "label_names": [str]} for the whole
# dataset directory. Prompt file: JSON array of
# {"id", "prefix", "suffix", "placement"}.
# ---------------------------------------------------------------------------


def load_examples(path: str | Path) -> tuple[LabeledExample, ...]:
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MaskBoostError(f"{path}:{lineno}: invalid JSON record") from exc
            examples.append(
                LabeledExample(
                    id=str(rec["id"]),
                    text_a=rec["text_a"],
                    text_b=rec.get("text_b"),
                    label=int(rec["label"]),
                )
            )
    return tuple(examples)


def save_examples(examples: Iterable[LabeledExample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(
                json.dumps(
                    {"id": ex.id, "text_a": ex.text_a, "text_b": ex.text_b, "label": ex.label},
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_dataset(root: str | Path, split: str) -> Dataset:
    """Read `{root}/{split}.jsonl` together with `{root}/manifest.json`."""
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    label_names = manifest.get("label_names")
    return Dataset(
        examples=load_examples(root / f"{split}.jsonl"),
        num_classes=int(manifest["num_classes"]),
        split_tag=split,
        label_names=tuple(label_names) if label_names else None,
    )


def save_dataset(dataset: Dataset, root: str | Path) -> None:
    """Write the split file and (re)write the dataset manifest."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {
        "num_classes": dataset.num_classes,
        "label_names": list(dataset.label_names) if dataset.label_names else None,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    save_examples(dataset.examples, root / f"{dataset.split_tag}.jsonl")


def load_prompts(path: str | Path) -> tuple[PromptTemplate, ...]:
    records = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(records, list):
        raise MaskBoostError(f"{path}: prompt file must be a JSON array")
    prompts = tuple(
        PromptTemplate(
            id=str(rec["id"]),
            prefix=rec["prefix"],
            suffix=rec["suffix"],
            placement=rec.get("placement", PLACEMENT_SINGLE),
        )
        for rec in records
    )
    ids = [p.id for p in prompts]
    if len(set(ids)) != len(ids):
        raise MaskBoostError(f"{path}: duplicate prompt ids")
    return prompts


def save_prompts(prompts: Sequence[PromptTemplate], path: str | Path) -> None:
    records = [
        {"id": p.id, "prefix": p.prefix, "suffix": p.suffix, "placement": p.placement}
        for p in prompts
    ]
    Path(path).write_text(json.dumps(records, indent=2, ensure_ascii=False), encoding="utf-8")


def builtin_prompts(task: str) -> tuple[PromptTemplate, ...]:
    """Load one of the prompt sets shipped with the package (e.g. "sst2")."""
    from importlib import resources

    resource = resources.files("maskboost.data.prompts") / f"{task}.json"
    if not resource.is_file():
        available = sorted(
            p.name.removesuffix(".json")
            for p in resources.files("maskboost.data.prompts").iterdir()
            if p.name.endswith(".json")
        )
        raise MaskBoostError(f"no builtin prompt set {task!r}; available: {available}")
    records = json.loads(resource.read_text(encoding="utf-8"))
    return tuple(
        PromptTemplate(
            id=str(rec["id"]),
            prefix=rec["prefix"],
            suffix=rec["suffix"],
            placement=rec.get("placement", PLACEMENT_SINGLE),
        )
        for rec in records
    )


def uniform_weights(n: int) -> np.ndarray:
    """Initial example weights: 1/n each."""
    if n < 1:
        raise MaskBoostError("cannot build weights for an empty dataset")
    return np.full(n, 1.0 / n, dtype=np.float64)


def check_sample_weights(weights: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Validate the sample-weight invariants (non-negative, sum one)."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 1:
        raise DimensionMismatch("weights must be one-dimensional")
    if np.any(weights < 0):
        raise MaskBoostError("weights must be non-negative")
    total = float(weights.sum())
    if abs(total - 1.0) > tol:
        raise MaskBoostError(f"weights sum to {total}, outside tolerance {tol}")
    return weights

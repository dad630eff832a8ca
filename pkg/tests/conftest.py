from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from maskboost import Dataset, LabeledExample
from maskboost.cache import PromptMatrix


def random_distribution_matrix(rng: np.random.Generator, n: int, v: int) -> np.ndarray:
    """Random rows that satisfy the distribution invariants."""
    raw = rng.random((n, v)) + 1e-6
    return (raw / raw.sum(axis=1, keepdims=True)).astype(np.float32)


def make_prompt_matrix(
    rng: np.random.Generator,
    n: int,
    v: int,
    prompt_id: str = "p0",
    split: str = "train",
    vocab_id: str = "test-vocab",
) -> PromptMatrix:
    return PromptMatrix(
        prompt_id=prompt_id,
        split_tag=split,
        example_ids=tuple(f"e{i}" for i in range(n)),
        matrix=random_distribution_matrix(rng, n, v),
        vocab_id=vocab_id,
    )


def make_dataset(
    labels: list[int],
    num_classes: int,
    split: str = "train",
    text_b: bool = False,
    id_prefix: str = "ex",
) -> Dataset:
    examples = tuple(
        LabeledExample(
            id=f"{id_prefix}{i}",
            text_a=f"sample text {i} @c{y}@",
            text_b=f"second part {i}" if text_b else None,
            label=y,
        )
        for i, y in enumerate(labels)
    )
    return Dataset(examples=examples, num_classes=num_classes, split_tag=split)


def write_synthetic_task(
    root: Path,
    num_classes: int = 2,
    train_per_class: int = 40,
    test_size: int = 50,
    num_prompts: int = 10,
) -> dict:
    """A dataset directory + prompt file whose texts carry class markers.

    Returns paths usable in a run config; the synthetic oracle keys its
    class signal on the embedded markers.
    """
    from maskboost import PromptTemplate, save_prompts
    from maskboost.core import save_dataset

    root.mkdir(parents=True, exist_ok=True)
    train_labels = [c for c in range(num_classes) for _ in range(train_per_class)]
    train = make_dataset(train_labels, num_classes, split="train", id_prefix="tr")
    test = make_dataset(
        [i % num_classes for i in range(test_size)], num_classes, split="test", id_prefix="te"
    )
    save_dataset(train, root / "data")
    save_dataset(test, root / "data")
    prompts = [
        PromptTemplate(id=f"p{i}", prefix=f" variant {i} says ", suffix=".")
        for i in range(num_prompts)
    ]
    prompts_path = root / "prompts.json"
    save_prompts(prompts, prompts_path)
    return {
        "dataset": str(root / "data"),
        "prompts": str(prompts_path),
        "cache_dir": str(root / "cache"),
    }


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)

"""Persistent store of mask-distribution matrices, one file per (prompt, split).

File format "PBM1": the 4-byte magic, then three little-endian u32 fields
{vocab_id_len, N, V}, the vocab_id bytes (UTF-8), and an N x V row-major
float32 payload. Row order is pinned by a JSON sidecar manifest
{"prompt_id", "split", "example_ids", "vocab_id"} stored next to the binary.

Once a split is cached, every later stage (verbalizer learning, boosting,
evaluation) runs without touching the LM; the floats that flow through
training are bit-for-bit the floats that came over the wire.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Dataset, PromptTemplate, render
from .errors import CacheIoError, VocabMismatch
from .lm import LmClient

MAGIC = b"PBM1"
_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class PromptMatrix:
    """All cached mask distributions for one prompt over one split.

    Row i of `matrix` is the distribution for `example_ids[i]`; dtype is
    float32 and the row order matches the owning dataset.
    """

    prompt_id: str
    split_tag: str
    example_ids: tuple[str, ...]
    matrix: np.ndarray
    vocab_id: str

    def __post_init__(self) -> None:
        matrix = np.asarray(self.matrix, dtype=np.float32)
        object.__setattr__(self, "matrix", matrix)
        if matrix.ndim != 2:
            raise CacheIoError("matrix must be two-dimensional")
        if matrix.shape[0] != len(self.example_ids):
            raise CacheIoError(
                f"matrix has {matrix.shape[0]} rows for {len(self.example_ids)} example ids"
            )

    @property
    def num_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.matrix.shape[1]

    def row_for(self, example_id: str) -> np.ndarray:
        return self.matrix[self.example_ids.index(example_id)]


def _safe_stem(prompt_id: str, split_tag: str) -> str:
    """Filesystem-safe, collision-free stem for a (prompt, split) pair."""
    cleaned = re.sub(r"[^A-Za-z0-9_.-]", "_", prompt_id)[:48]
    digest = hashlib.sha1(prompt_id.encode("utf-8")).hexdigest()[:8]
    return f"{cleaned}-{digest}__{split_tag}"


def matrix_path(cache_dir: str | Path, prompt_id: str, split_tag: str) -> Path:
    return Path(cache_dir) / f"{_safe_stem(prompt_id, split_tag)}.pbm"


def manifest_path(cache_dir: str | Path, prompt_id: str, split_tag: str) -> Path:
    return Path(cache_dir) / f"{_safe_stem(prompt_id, split_tag)}.json"


def write_matrix(pm: PromptMatrix, cache_dir: str | Path) -> Path:
    """Durably write a PromptMatrix; both files go through atomic renames."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    bin_path = matrix_path(cache_dir, pm.prompt_id, pm.split_tag)
    man_path = manifest_path(cache_dir, pm.prompt_id, pm.split_tag)

    vocab_bytes = pm.vocab_id.encode("utf-8")
    n, v = pm.matrix.shape
    header = _HEADER.pack(MAGIC, len(vocab_bytes), n, v)
    payload = np.ascontiguousarray(pm.matrix, dtype="<f4").tobytes()

    tmp_bin = bin_path.with_suffix(".pbm.tmp")
    tmp_bin.write_bytes(header + vocab_bytes + payload)
    os.replace(tmp_bin, bin_path)

    manifest = {
        "prompt_id": pm.prompt_id,
        "split": pm.split_tag,
        "example_ids": list(pm.example_ids),
        "vocab_id": pm.vocab_id,
    }
    tmp_man = man_path.with_suffix(".json.tmp")
    tmp_man.write_text(json.dumps(manifest), encoding="utf-8")
    os.replace(tmp_man, man_path)
    return bin_path


def read_matrix(cache_dir: str | Path, prompt_id: str, split_tag: str) -> PromptMatrix:
    """Read one (prompt, split) matrix; bit-exact inverse of write_matrix."""
    bin_path = matrix_path(cache_dir, prompt_id, split_tag)
    man_path = manifest_path(cache_dir, prompt_id, split_tag)
    if not bin_path.exists() or not man_path.exists():
        raise CacheIoError(f"no cache entry for prompt {prompt_id!r} split {split_tag!r}")

    raw = bin_path.read_bytes()
    if len(raw) < _HEADER.size:
        raise CacheIoError(f"{bin_path}: truncated header")
    magic, vocab_len, n, v = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CacheIoError(f"{bin_path}: bad magic {magic!r}")
    expected = _HEADER.size + vocab_len + n * v * 4
    if len(raw) != expected:
        raise CacheIoError(f"{bin_path}: size {len(raw)} != expected {expected}")
    vocab_id = raw[_HEADER.size : _HEADER.size + vocab_len].decode("utf-8")
    matrix = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size + vocab_len).reshape(n, v).copy()

    try:
        manifest = json.loads(man_path.read_text(encoding="utf-8"))
        example_ids = tuple(str(e) for e in manifest["example_ids"])
        man_vocab = str(manifest["vocab_id"])
        man_prompt = str(manifest["prompt_id"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CacheIoError(f"{man_path}: malformed manifest") from exc
    if len(example_ids) != n:
        raise CacheIoError(f"{man_path}: {len(example_ids)} ids for {n} matrix rows")
    if man_vocab != vocab_id:
        raise CacheIoError(f"{man_path}: manifest vocab_id differs from binary header")
    if man_prompt != prompt_id:
        raise CacheIoError(f"{man_path}: manifest prompt_id {man_prompt!r} != {prompt_id!r}")
    return PromptMatrix(
        prompt_id=prompt_id,
        split_tag=split_tag,
        example_ids=example_ids,
        matrix=matrix,
        vocab_id=vocab_id,
    )


def has_entry(cache_dir: str | Path, prompt_id: str, split_tag: str) -> bool:
    return (
        matrix_path(cache_dir, prompt_id, split_tag).exists()
        and manifest_path(cache_dir, prompt_id, split_tag).exists()
    )


def ensure_cached(
    client: LmClient | None,
    dataset: Dataset,
    prompts: Sequence[PromptTemplate],
    cache_dir: str | Path,
    mask_literal: str = "[MASK]",
) -> list[PromptMatrix]:
    """Return one PromptMatrix per prompt, querying only rows absent on disk.

    Existing rows are reused verbatim; missing (prompt, example) pairs are
    fetched and appended, then the file is rewritten atomically. Rows cached
    for examples outside `dataset` are preserved on disk but not returned.
    With `client=None` the cache must already be complete.

    All existing files are validated before any query is issued, so a
    corrupted file aborts the fill without touching other entries.
    """
    cache_dir = Path(cache_dir)
    existing: dict[str, PromptMatrix | None] = {}
    for prompt in prompts:
        if has_entry(cache_dir, prompt.id, dataset.split_tag):
            stored = read_matrix(cache_dir, prompt.id, dataset.split_tag)
            if client is not None and stored.vocab_id != client.vocab_id():
                raise VocabMismatch(
                    f"cache for prompt {prompt.id!r} has vocab_id {stored.vocab_id!r}, "
                    f"client reports {client.vocab_id()!r}"
                )
            existing[prompt.id] = stored
        else:
            existing[prompt.id] = None

    results: list[PromptMatrix] = []
    for prompt in prompts:
        stored = existing[prompt.id]
        known: dict[str, np.ndarray] = {}
        if stored is not None:
            known = {eid: stored.matrix[i] for i, eid in enumerate(stored.example_ids)}
        missing = [ex for ex in dataset.examples if ex.id not in known]

        if missing:
            if client is None:
                raise CacheIoError(
                    f"cache for prompt {prompt.id!r} split {dataset.split_tag!r} is missing "
                    f"{len(missing)} rows and no client is configured"
                )
            for ex in missing:
                dist = client.query(render(prompt, ex, mask_literal))
                known[ex.id] = dist.probs
            vocab_id = client.vocab_id()
            # Keep previously cached rows (ids outside the current dataset)
            # after the current dataset's rows, preserving their old order.
            ordered_ids = list(dataset.example_ids)
            if stored is not None:
                current = set(ordered_ids)
                ordered_ids += [eid for eid in stored.example_ids if eid not in current]
                vocab_id = stored.vocab_id
            full = PromptMatrix(
                prompt_id=prompt.id,
                split_tag=dataset.split_tag,
                example_ids=tuple(ordered_ids),
                matrix=np.stack([known[eid] for eid in ordered_ids]),
                vocab_id=vocab_id,
            )
            write_matrix(full, cache_dir)
            stored = full

        assert stored is not None
        if tuple(dataset.example_ids) == stored.example_ids:
            results.append(stored)
        else:
            rows = [stored.example_ids.index(eid) for eid in dataset.example_ids]
            results.append(
                PromptMatrix(
                    prompt_id=prompt.id,
                    split_tag=dataset.split_tag,
                    example_ids=dataset.example_ids,
                    matrix=stored.matrix[rows],
                    vocab_id=stored.vocab_id,
                )
            )
    return results

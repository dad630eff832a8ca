"""FastAPI application serving mask-position distributions.

The wrapped model is frozen and inference runs in deterministic mode
(eval, no grad, single-threaded), so identical requests always produce
identical probability vectors; downstream caches depend on that purity.

Wire protocol:
    GET  /v1/info       -> {"vocab_id", "vocab_size", "mask_literal"}
    POST /v1/mask-fill  body {"text": str, "top_k": int|null}
        dense:  {"vocab_id", "vocab_size", "probs": [float]}
        sparse: {"vocab_id", "vocab_size", "indices": [int], "probs": [float]}
Status 400: the text does not contain exactly one mask token.
Status 503: the model is still loading.
"""

from __future__ import annotations

import hashlib
from contextlib import asynccontextmanager
from dataclasses import dataclass

import torch
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel


@dataclass(frozen=True)
class ShimConfig:
    """What to serve: a masked-LM checkpoint directory or model name."""

    model: str
    device: str = "cpu"
    top_k_default: int | None = None


class MaskFillRequest(BaseModel):
    text: str
    top_k: int | None = None


def vocab_fingerprint(tokens: list[str]) -> str:
    """SHA-256 of the concatenated vocabulary tokens, truncated to 16 hex chars.

    A cheap equality guard: caches built against one vocabulary can never be
    silently mixed with another model's.
    """
    return hashlib.sha256("".join(tokens).encode("utf-8")).hexdigest()[:16]


def _ordered_vocab(tokenizer) -> list[str]:
    vocab = tokenizer.get_vocab()
    return [token for token, _ in sorted(vocab.items(), key=lambda item: item[1])]


def _load_model(state, config: ShimConfig) -> None:
    from transformers import AutoModelForMaskedLM, AutoTokenizer

    torch.set_num_threads(1)  # bit-stable inference across requests
    state.tokenizer = AutoTokenizer.from_pretrained(config.model)
    state.model = AutoModelForMaskedLM.from_pretrained(config.model)
    state.model.to(config.device)
    state.model.eval()
    state.vocab_size = state.model.config.vocab_size
    state.vocab_id = vocab_fingerprint(_ordered_vocab(state.tokenizer))
    state.mask_literal = state.tokenizer.mask_token
    state.mask_id = state.tokenizer.mask_token_id
    state.ready = True


def create_app(config: ShimConfig) -> FastAPI:
    """Build the service; the model loads on startup (503 until ready)."""

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        _load_model(app.state, config)
        yield

    app = FastAPI(title="maskshim", lifespan=lifespan)
    state = app.state
    state.ready = False
    state.config = config

    def require_ready() -> None:
        if not state.ready:
            raise HTTPException(status_code=503, detail="model is loading")

    @app.get("/v1/info")
    def info() -> dict:
        require_ready()
        return {
            "vocab_id": state.vocab_id,
            "vocab_size": state.vocab_size,
            "mask_literal": state.mask_literal,
        }

    @app.post("/v1/mask-fill")
    def mask_fill(request: MaskFillRequest) -> dict:
        require_ready()
        encoded = state.tokenizer(
            request.text, return_tensors="pt", truncation=True,
            max_length=state.model.config.max_position_embeddings,
        )
        input_ids = encoded["input_ids"].to(state.config.device)
        mask_positions = (input_ids[0] == state.mask_id).nonzero().flatten()
        if len(mask_positions) != 1:
            raise HTTPException(
                status_code=400,
                detail=f"text must contain exactly one {state.mask_literal}, "
                f"found {len(mask_positions)}",
            )
        with torch.no_grad():
            logits = state.model(
                input_ids=input_ids,
                attention_mask=encoded["attention_mask"].to(state.config.device),
            ).logits
        probs = torch.softmax(logits[0, mask_positions[0]].float(), dim=-1).cpu()

        top_k = request.top_k if request.top_k is not None else config.top_k_default
        payload = {"vocab_id": state.vocab_id, "vocab_size": state.vocab_size}
        if top_k is not None and 0 < top_k < state.vocab_size:
            values, indices = torch.topk(probs, top_k)
            payload["indices"] = indices.tolist()
            payload["probs"] = values.tolist()
        else:
            payload["probs"] = probs.tolist()
        return payload

    return app

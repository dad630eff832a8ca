"""Build the shim's bundled assets: a tiny from-scratch masked LM plus a
200-example binary sentiment dataset.

The corpus is synthetic review-like text with polarity-coherent clauses; the
model never sees a label, it only learns word co-occurrence, which is what
mask-fill classification exploits. Run from the shim directory:

    python scripts/build_assets.py [--steps N]

Writes assets/tiny-sentiment-mlm/ (HF-format checkpoint) and
assets/sentiment200/ (engine-format dataset files).
"""

from __future__ import annotations

import argparse
import json
import random
from pathlib import Path

import torch
from tokenizers import Tokenizer, models, normalizers, pre_tokenizers, processors
from transformers import BertConfig, BertForMaskedLM, PreTrainedTokenizerFast

ASSETS = Path(__file__).resolve().parent.parent / "assets"

POSITIVE = """wonderful great excellent amazing superb delightful brilliant charming
moving gripping beautiful stunning masterful perfect inspired touching funny clever
graceful dazzling satisfying memorable""".split()

NEGATIVE = """terrible awful dreadful boring bland clumsy dull lifeless messy painful
pointless shallow sloppy tedious tiresome weak disappointing forgettable hollow
irritating laughable miserable""".split()

NOUNS = """movie film story plot script acting cast direction ending dialogue scene
pacing soundtrack performance drama comedy thriller picture sequel experience""".split()

FILLERS = """the a an was is are it this that i we thought felt found truly really
quite just very so and but of work piece waste time one from start to finish
'""".split()

SPECIALS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
PUNCT = [".", ",", "!", "?", "s"]


def full_vocabulary() -> list[str]:
    words: list[str] = []
    for pool in (POSITIVE, NEGATIVE, NOUNS, FILLERS, PUNCT):
        for word in pool:
            if word not in words:
                words.append(word)
    return SPECIALS + words


def make_tokenizer() -> PreTrainedTokenizerFast:
    vocab = {token: i for i, token in enumerate(full_vocabulary())}
    tok = Tokenizer(models.WordLevel(vocab, unk_token="[UNK]"))
    tok.normalizer = normalizers.Lowercase()
    tok.pre_tokenizer = pre_tokenizers.Whitespace()
    tok.post_processor = processors.TemplateProcessing(
        single="[CLS] $A [SEP]",
        pair="[CLS] $A [SEP] $B [SEP]",
        special_tokens=[("[CLS]", vocab["[CLS]"]), ("[SEP]", vocab["[SEP]"])],
    )
    return PreTrainedTokenizerFast(
        tokenizer_object=tok,
        pad_token="[PAD]",
        unk_token="[UNK]",
        cls_token="[CLS]",
        sep_token="[SEP]",
        mask_token="[MASK]",
        model_max_length=64,
    )


def _clause(rng: random.Random, adjectives: list[str]) -> str:
    adj = rng.choice(adjectives)
    noun = rng.choice(NOUNS)
    patterns = [
        f"the {noun} was {adj}",
        f"the {noun} is {adj}",
        f"the {noun} was {adj} and {rng.choice(adjectives)}",
        f"a {adj} {noun}",
        f"a truly {adj} {noun}",
        f"it 's {adj}",
        f"it 's just {adj}",
        f"it was {adj}",
        f"this is {adj}",
        f"i thought it was {adj}",
        f"we found the {noun} {adj}",
        f"a {adj} piece of work",
        f"{adj} from start to finish",
        f"truly {adj}",
    ]
    # "waste of time" shows up only in negative reviews, giving that prompt
    # a polarity cue of its own.
    if adjectives is NEGATIVE:
        patterns.append(f"a {adj} waste of time")
    return rng.choice(patterns)


def make_review(rng: random.Random, positive: bool, max_clauses: int = 3) -> str:
    adjectives = POSITIVE if positive else NEGATIVE
    # Bias toward multi-clause reviews: cross-clause polarity agreement is
    # the signal mask-fill prompts rely on.
    n_clauses = max_clauses if rng.random() < 0.6 else rng.randint(1, max_clauses)
    enders = [" .", " .", " !"]
    return " .".join(" " + _clause(rng, adjectives) for _ in range(n_clauses)).strip() + rng.choice(enders)


def build_corpus(n_lines: int, seed: int) -> list[str]:
    rng = random.Random(seed)
    lines = []
    for i in range(n_lines):
        lines.append(make_review(rng, positive=i % 2 == 0))
    return lines


def build_fixture(seed: int, per_class: int = 50) -> None:
    """100 train-pool + 100 test labeled examples, class 1 = positive."""
    rng = random.Random(seed)
    out = ASSETS / "sentiment200"
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(
        json.dumps({"num_classes": 2, "label_names": ["negative", "positive"]}, indent=2)
    )
    for split, prefix in (("train", "sent-tr"), ("test", "sent-te")):
        records = []
        for label in (0, 1):
            for i in range(per_class):
                records.append(
                    {
                        "id": f"{prefix}-{label}-{i:03d}",
                        "text_a": make_review(rng, positive=label == 1, max_clauses=2),
                        "text_b": None,
                        "label": label,
                    }
                )
        rng.shuffle(records)
        with open(out / f"{split}.jsonl", "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec) + "\n")
    print(f"fixture: wrote {2 * 2 * per_class} examples to {out}")


def mask_tokens(
    input_ids: torch.Tensor,
    tokenizer: PreTrainedTokenizerFast,
    rng: torch.Generator,
    emphasis_ids: torch.Tensor | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """MLM corruption with 80/10/10 mask/random/keep.

    Tokens in `emphasis_ids` (the sentiment adjectives) are corrupted at a
    higher rate: they are the hard, informative slots, and uniform masking
    spends most of the budget on trivial structure words.
    """
    labels = input_ids.clone()
    special = torch.tensor(
        [
            tokenizer.get_special_tokens_mask(row.tolist(), already_has_special_tokens=True)
            for row in input_ids
        ],
        dtype=torch.bool,
    )
    prob = torch.full(input_ids.shape, 0.12)
    if emphasis_ids is not None:
        prob[torch.isin(input_ids, emphasis_ids)] = 0.4
    prob.masked_fill_(special, 0.0)
    masked = torch.bernoulli(prob, generator=rng).bool()
    labels[~masked] = -100
    replace = torch.bernoulli(torch.full(input_ids.shape, 0.8), generator=rng).bool() & masked
    input_ids = input_ids.clone()
    input_ids[replace] = tokenizer.mask_token_id
    randomize = (
        torch.bernoulli(torch.full(input_ids.shape, 0.5), generator=rng).bool()
        & masked
        & ~replace
    )
    random_ids = torch.randint(len(tokenizer), input_ids.shape, generator=rng)
    input_ids[randomize] = random_ids[randomize]
    return input_ids, labels


def train_model(steps: int, seed: int) -> None:
    torch.manual_seed(seed)
    tokenizer = make_tokenizer()
    corpus = build_corpus(6000, seed=seed + 1)
    encoded = tokenizer(corpus, padding=True, truncation=True, return_tensors="pt")
    ids = encoded["input_ids"]
    attention = encoded["attention_mask"]

    config = BertConfig(
        vocab_size=len(tokenizer),
        hidden_size=128,
        num_hidden_layers=2,
        num_attention_heads=4,
        intermediate_size=256,
        max_position_embeddings=64,
        pad_token_id=tokenizer.pad_token_id,
    )
    model = BertForMaskedLM(config)
    model.train()
    optimizer = torch.optim.AdamW(model.parameters(), lr=1e-3, weight_decay=0.01)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=steps)
    rng = torch.Generator().manual_seed(seed + 2)
    emphasis = torch.tensor(tokenizer.convert_tokens_to_ids(POSITIVE + NEGATIVE))
    batch_size = 64
    n = ids.shape[0]
    for step in range(steps):
        batch_idx = torch.randint(n, (batch_size,), generator=rng)
        batch_ids, labels = mask_tokens(ids[batch_idx], tokenizer, rng, emphasis)
        out = model(
            input_ids=batch_ids, attention_mask=attention[batch_idx], labels=labels
        )
        out.loss.backward()
        optimizer.step()
        scheduler.step()
        optimizer.zero_grad()
        if step % 200 == 0 or step == steps - 1:
            print(f"step {step:4d} loss {out.loss.item():.4f}")

    out_dir = ASSETS / "tiny-sentiment-mlm"
    out_dir.mkdir(parents=True, exist_ok=True)
    model.eval()
    model.save_pretrained(out_dir)
    tokenizer.save_pretrained(out_dir)
    print(f"model: saved to {out_dir}")
    probe(model, tokenizer)


def probe(model, tokenizer) -> None:
    """Report how much polarity signal the mask slot carries."""
    pos_ids = tokenizer.convert_tokens_to_ids(POSITIVE)
    neg_ids = tokenizer.convert_tokens_to_ids(NEGATIVE)
    rng = random.Random(999)
    gaps = []
    for positive in (True, False):
        for _ in range(20):
            review = make_review(rng, positive, max_clauses=2)
            text = f"{review} It's [MASK]."
            enc = tokenizer(text, return_tensors="pt")
            mask_pos = (enc["input_ids"][0] == tokenizer.mask_token_id).nonzero()[0, 0]
            with torch.no_grad():
                logits = model(**enc).logits
            probs = torch.softmax(logits[0, mask_pos], dim=-1)
            gap = float(probs[pos_ids].sum() - probs[neg_ids].sum())
            gaps.append(gap if positive else -gap)
    mean_gap = sum(gaps) / len(gaps)
    agree = sum(g > 0 for g in gaps) / len(gaps)
    print(f"probe: mean polarity-aligned mass gap {mean_gap:.3f}, sign agreement {agree:.2f}")
    if mean_gap < 0.2 or agree < 0.9:
        raise SystemExit("model signal too weak; increase --steps")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=800)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()
    build_fixture(seed=202)
    train_model(steps=args.steps, seed=args.seed)


if __name__ == "__main__":
    main()

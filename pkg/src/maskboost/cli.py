"""Command-line surface: `pb cache|train|eval|refine`.

Machine-readable JSON goes to stdout only; every diagnostic goes to stderr.
Exit code 0 means the operation completed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .booster import ensemble_from_json_dict
from .core import save_prompts
from .errors import MaskBoostError
from .pipeline import (
    evaluate_ensemble,
    fill_caches,
    active_prompts,
    load_run_config,
    prepare_run,
    train_ensemble,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pb",
        description="Build and evaluate boosted mask-fill text classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="run config JSON path")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--k", type=int, default=None, help="override examples per class")
        p.add_argument(
            "--max-learners", type=int, default=None, help="override the learner budget"
        )

    p_cache = sub.add_parser("cache", help="fill the distribution cache for all splits")
    add_common(p_cache)

    p_train = sub.add_parser("train", help="boost an ensemble from cached distributions")
    add_common(p_train)
    p_train.add_argument("--out", required=True, help="where to write the ensemble JSON")

    p_eval = sub.add_parser("eval", help="evaluate an ensemble on the cached test split")
    add_common(p_eval)
    p_eval.add_argument("--ensemble", required=True, help="ensemble JSON path")

    p_refine = sub.add_parser("refine", help="rank candidate prompts and keep the best")
    add_common(p_refine)
    p_refine.add_argument("--out", required=True, help="where to write the refined prompt file")
    return parser


def _load_config(args: argparse.Namespace):
    overrides = {
        "seed": args.seed,
        "k": args.k,
        "max_learners": args.max_learners,
        "endpoint": os.environ.get("PB_ENDPOINT"),
    }
    return load_run_config(args.config, overrides)


def cmd_cache(args: argparse.Namespace) -> int:
    data = prepare_run(_load_config(args))
    counts = fill_caches(data)
    total = sum(counts.values())
    print(f"{total} queries issued", file=sys.stderr)
    print(json.dumps({"queries": counts, "total": total}, sort_keys=True))
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    data = prepare_run(_load_config(args))
    ensemble, run = train_ensemble(data)
    Path(args.out).write_text(ensemble.to_json(), encoding="utf-8")
    print(
        f"{len(ensemble.learners)} learners kept (mode={ensemble.mode}, "
        f"stop={run.stop_reason}, best_t={run.best_iteration})",
        file=sys.stderr,
    )
    header = f"{'t':>4} {'prompt_id':<24} {'err':>10} {'alpha':>10} {'val_acc':>8}"
    print(header, file=sys.stderr)
    for row in run.history:
        err = "-" if row["err"] is None else f"{row['err']:.4f}"
        val = "-" if row["val_accuracy"] is None else f"{row['val_accuracy']:.4f}"
        print(
            f"{row['t']:>4} {row['prompt_id']:<24} {err:>10} {row['alpha']:>10.4f} {val:>8}",
            file=sys.stderr,
        )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    data = prepare_run(_load_config(args))
    payload = json.loads(Path(args.ensemble).read_text(encoding="utf-8"))
    ensemble = ensemble_from_json_dict(payload)
    report = evaluate_ensemble(data, ensemble)
    print(json.dumps(report.to_json_dict(), sort_keys=True))
    return 0


def cmd_refine(args: argparse.Namespace) -> int:
    data = prepare_run(_load_config(args))
    if data.candidates is None:
        raise MaskBoostError("refine requires refine.enabled with a candidates file")
    kept = active_prompts(data)
    save_prompts(kept, args.out)
    print(f"kept {len(kept)} of {len(data.candidates)} candidates", file=sys.stderr)
    print(json.dumps({"kept": [p.id for p in kept]}, sort_keys=True))
    return 0


_COMMANDS = {
    "cache": cmd_cache,
    "train": cmd_train,
    "eval": cmd_eval,
    "refine": cmd_refine,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except MaskBoostError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

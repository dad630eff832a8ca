"""`maskshim` entry point: serve a masked-LM checkpoint over HTTP."""

from __future__ import annotations

import argparse

import uvicorn

from .server import ShimConfig, create_app


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="maskshim", description=__doc__)
    parser.add_argument("--model", required=True, help="masked-LM checkpoint path or name")
    parser.add_argument("--bind", default="127.0.0.1:8763", help="host:port to listen on")
    parser.add_argument("--device", default="cpu", help="torch device for inference")
    parser.add_argument(
        "--top-k-default", type=int, default=None,
        help="serve sparse top-k responses unless the request overrides",
    )
    args = parser.parse_args(argv)
    host, _, port = args.bind.rpartition(":")
    app = create_app(
        ShimConfig(model=args.model, device=args.device, top_k_default=args.top_k_default)
    )
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port), log_level="warning")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

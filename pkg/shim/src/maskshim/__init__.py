"""HTTP mask-fill service around a frozen masked language model.

Serves the wire protocol the maskboost engine consumes:
POST /v1/mask-fill and GET /v1/info.
"""

from .server import ShimConfig, create_app, vocab_fingerprint

__version__ = "0.1.0"

__all__ = ["ShimConfig", "create_app", "vocab_fingerprint"]

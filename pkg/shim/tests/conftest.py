from __future__ import annotations

import threading
import time
from pathlib import Path

import pytest
import requests
import uvicorn

from maskshim import ShimConfig, create_app

ASSETS = Path(__file__).resolve().parent.parent / "assets"
MODEL_DIR = ASSETS / "tiny-sentiment-mlm"
DATASET_DIR = ASSETS / "sentiment200"


@pytest.fixture(scope="session")
def live_shim():
    """The bundled tiny model served over a real socket for the whole session."""
    app = create_app(ShimConfig(model=str(MODEL_DIR)))
    config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="warning")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 60
    while not server.started:
        if time.monotonic() > deadline:
            raise RuntimeError("shim server did not start")
        time.sleep(0.05)
    port = server.servers[0].sockets[0].getsockname()[1]
    endpoint = f"http://127.0.0.1:{port}"
    while True:
        try:
            if requests.get(f"{endpoint}/v1/info", timeout=5).status_code == 200:
                break
        except requests.RequestException:
            pass
        if time.monotonic() > deadline:
            raise RuntimeError("shim server never became ready")
        time.sleep(0.1)
    yield endpoint
    server.should_exit = True
    thread.join(timeout=10)

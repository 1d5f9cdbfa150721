"""Session fixture: the primary reward service running on a local port.

The client package itself never imports the primary library; the tests use
it only to host the service the client talks to.
"""

from __future__ import annotations

import socket
import threading
import time

import pytest
import uvicorn

from cabs.service import ServiceSettings, create_app


def _free_port() -> int:
    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    sock.close()
    return port


@pytest.fixture(scope="session")
def service_url():
    port = _free_port()
    config = uvicorn.Config(
        create_app(ServiceSettings()),
        host="127.0.0.1",
        port=port,
        log_level="warning",
    )
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not server.started:
        if time.time() > deadline:
            raise RuntimeError("service did not start")
        time.sleep(0.02)
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=5)

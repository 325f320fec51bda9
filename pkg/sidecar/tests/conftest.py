import socket
import threading
import time

import pytest
import uvicorn

from bass_sidecar.app import create_app
from bass_sidecar.models import StubModelBundle


class LiveServer:
    """uvicorn in a thread on an ephemeral port."""

    def __init__(self, app):
        self.config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="error")
        self.server = uvicorn.Server(self.config)
        self.thread = threading.Thread(target=self.server.run, daemon=True)

    def __enter__(self) -> str:
        self.thread.start()
        deadline = time.time() + 10
        while not self.server.started:
            if time.time() > deadline:
                raise RuntimeError("sidecar server did not start")
            time.sleep(0.01)
        sock: socket.socket = self.server.servers[0].sockets[0]
        host, port = sock.getsockname()[:2]
        return f"http://{host}:{port}"

    def __exit__(self, *exc):
        self.server.should_exit = True
        self.thread.join(timeout=10)


@pytest.fixture(scope="session")
def stub_url():
    with LiveServer(create_app(StubModelBundle(7))) as url:
        yield url

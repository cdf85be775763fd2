import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from derec.corpus import ingest
from derec.datasets import make_synthetic_corpus, write_corpus


@pytest.fixture
def small_dataset(tmp_path):
    """12-claim three-class corpus, segmentation exercised, deterministic."""
    path = tmp_path / "corpus.jsonl"
    write_corpus(make_synthetic_corpus(12, "3", seed=7), path)
    return ingest(path, "3")


@pytest.fixture
def small_corpus_path(tmp_path):
    path = tmp_path / "corpus.jsonl"
    write_corpus(make_synthetic_corpus(12, "3", seed=7), path)
    return path


def unit_rows(n, dim, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, dim))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    return X.astype(np.float32)


class _StubHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length)) if length else {}
        self.server.requests.append(body)
        status, payload = self.server.respond(body)
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


class StubServer:
    """Tiny local HTTP endpoint driven by a (body -> (status, payload))
    function; records every request body."""

    def __init__(self, respond):
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
        self._server.respond = respond
        self._server.requests = []
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        daemon=True)
        self._thread.start()

    @property
    def url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}/"

    @property
    def requests(self) -> list:
        return self._server.requests

    def close(self):
        self._server.shutdown()
        self._server.server_close()


@pytest.fixture
def stub_server():
    servers = []

    def make(respond):
        server = StubServer(respond)
        servers.append(server)
        return server

    yield make
    for server in servers:
        server.close()

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from cfrefine.core import Instance
from cfrefine.services.mocks import RewriteRule, sentiment_stack


def review(i: int, text: str, label: str = "negative") -> Instance:
    return Instance(f"r{i}", {"text": text}, label, "text")


@pytest.fixture
def stack():
    return sentiment_stack()


@pytest.fixture
def services(stack):
    return stack.services(retries=0)


def flip_at(j: int):
    """Mock that turns 'boring' into 'great' only at round j (tick-counted)."""
    return sentiment_stack((RewriteRule("boring", "great", rounds=frozenset({j})),), tick="!")


class _Handler(BaseHTTPRequestHandler):
    routes: dict = {}
    fail_first: dict = {}

    def do_POST(self):  # noqa: N802
        route = self.path.strip("/")
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        self.server.seen.append((route, self.headers.get("Authorization"), body))
        if self.server.fail_first.get(route, 0) > 0:
            self.server.fail_first[route] -= 1
            self.send_response(503)
            self.end_headers()
            return
        handler = self.server.routes.get(route)
        if handler is None:
            self.send_response(404)
            self.end_headers()
            return
        data = json.dumps(handler(body)).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def http_server(stack):
    """Threaded HTTP server serving the mock stack's handlers."""
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    server.routes = stack.handlers()
    server.fail_first = {}
    server.seen = []
    t = threading.Thread(target=server.serve_forever, daemon=True)
    t.start()
    server.url = f"http://127.0.0.1:{server.server_address[1]}"
    yield server
    server.shutdown()
    server.server_close()


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)

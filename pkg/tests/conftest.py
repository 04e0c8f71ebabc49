from __future__ import annotations

import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from comprag import pipeline

FIXTURES = Path(__file__).parent / "fixtures"
_HEX32 = re.compile(r"[0-9a-f]{32}")

# Every AnswerBundle built during the session, as (cited hashes, evidence hashes).
ANSWER_LOG: list[tuple[list[str], set[str]]] = []

_original_post_init = pipeline.AnswerBundle.__post_init__


def _recording_post_init(self):
    # Bundles rejected by the built-in check never reach a caller.
    _original_post_init(self)
    ANSWER_LOG.append((_HEX32.findall(self.answer_text), {e.chunk_hash for e in self.evidence}))


pipeline.AnswerBundle.__post_init__ = _recording_post_init


def ungrounded_answers() -> list[list[str]]:
    return [[h for h in cited if h not in ev] for cited, ev in ANSWER_LOG if set(cited) - ev]


def pytest_sessionfinish(session, exitstatus):
    if ungrounded_answers():
        session.exitstatus = 1


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def golden() -> dict:
    return json.loads((FIXTURES / "golden.json").read_text())


@pytest.fixture(scope="session")
def restaurant_chunks():
    from comprag.chunker import chunk_document, read_document

    return chunk_document(read_document(FIXTURES / "restaurants.jsonl"))


@pytest.fixture(scope="session")
def restaurant_index(restaurant_chunks):
    from comprag.index import build_index

    return build_index(restaurant_chunks)


@pytest.fixture(scope="session")
def restaurant_flist():
    from comprag.recommender import build_filtration, read_metrics_csv

    return build_filtration(read_metrics_csv(FIXTURES / "restaurant_metrics.csv"))


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        body = self.rfile.read(int(self.headers["Content-Length"]))
        self.server.requests.append(json.loads(body))
        status, payload = self.server.respond(json.loads(body))
        data = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def http_service():
    """Start a local JSON service; call it with a ``respond(request) -> (status, payload)``."""
    servers = []

    def start(respond):
        server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
        server.respond = respond
        server.requests = []
        threading.Thread(target=server.serve_forever, daemon=True).start()
        servers.append(server)
        return f"http://127.0.0.1:{server.server_address[1]}/", server

    yield start
    for s in servers:
        s.shutdown()
        s.server_close()


# Acceptance criteria outcomes, printed as one line each after the run.
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def record_criterion(name: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE[name] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    bad = ungrounded_answers()
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for name, (ok, detail) in ACCEPTANCE.items():
            terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    terminalreporter.write_line(
        f"[{'FAIL' if bad else 'PASS'}] grounding audit (whole session): "
        f"{len(ANSWER_LOG)} answers, {len(bad)} citing hashes outside their evidence"
    )

"""Shared fixtures: corpus builders, deterministic mock endpoints, and a
threaded HTTP server standing in for the chat/scorer services."""

from __future__ import annotations

import hashlib
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from cptforge.corpus import Document, Language, Source


def make_doc(i: int, text: str | None = None, language=Language.EN,
             source=Source.WEB_PAGES, topic=None, ppl=None, url=None,
             token_count=None) -> Document:
    return Document(
        id=f"doc-{i:05d}",
        text=text if text is not None else f"sample text number {i} with a few words",
        language=language,
        source=source,
        topic=topic,
        ppl=ppl,
        url=url,
        token_count=token_count,
    )


def stable_digest(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


def mock_chat_content(prompt: str, tag: str = "") -> str:
    """Deterministic completion: unique problem per (prompt, tag), chunky
    solution. Including the tag imitates a sampling endpoint that answers the
    same prompt differently on each attempt."""
    digest = hashlib.sha256(f"{prompt}\x1f{tag}".encode("utf-8")).hexdigest()[:12]
    filler = " ".join(f"step{j} of the worked reasoning" for j in range(12))
    return (
        f"[Problem]\nCompute the quantity tagged {digest} given the stated setup.\n"
        f"[Solution]\nWe reason as follows: {filler}. The final answer is {digest[:4]}."
    )


def mock_scorer_values(texts: list[str]) -> list[float]:
    return [1.0 + (stable_digest(t) % 997) / 100.0 for t in texts]


class _MockHandler(BaseHTTPRequestHandler):
    server_version = "MockModelService/1.0"

    def log_message(self, fmt, *args):
        pass

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length) or b"{}")
        script = self.server.script
        if script:
            status, payload = script.pop(0)
            self._reply(status, payload)
            return
        if self.path.startswith("/score"):
            texts = body.get("texts", [])
            with self.server.lock:
                ppls = []
                for text in texts:
                    count = self.server.text_counts.get(text, 0)
                    self.server.text_counts[text] = count + 1
                    base = 1.0 + (stable_digest(text) % 997) / 100.0
                    ppls.append(base * (0.95 ** count))
            self._reply(200, {"ppl": ppls})
        elif self.path.startswith("/chat"):
            prompt = body["messages"][-1]["content"]
            self._reply(200, {"choices": [{"message": {"content": mock_chat_content(prompt)}}]})
        else:
            self._reply(404, {"error": "unknown path"})

    def _reply(self, status: int, payload: dict):
        data = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


class MockServer:
    """In-process chat + scorer service. The scorer decays a text's value by
    5% on each repeat scoring, imitating a model improving between rounds."""

    def __init__(self):
        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), _MockHandler)
        self.httpd.script = []  # optional [(status, payload)] overrides, FIFO
        self.httpd.text_counts = {}
        self.httpd.lock = threading.Lock()
        self.thread = threading.Thread(
            target=lambda: self.httpd.serve_forever(poll_interval=0.02), daemon=True)
        self.thread.start()

    @property
    def port(self) -> int:
        return self.httpd.server_address[1]

    def url(self, path: str) -> str:
        return f"http://127.0.0.1:{self.port}{path}"

    def push_script(self, *responses):
        self.httpd.script.extend(responses)

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def mock_server():
    server = MockServer()
    yield server
    server.close()


@pytest.fixture(scope="session")
def session_server():
    server = MockServer()
    yield server
    server.close()

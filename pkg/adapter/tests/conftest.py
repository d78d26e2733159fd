"""A deterministic OpenAI-compatible completions stub for the tests.

The stub tokenizes by whitespace (each token keeps its leading spaces so
text offsets reconstruct the input), prepends a BOS marker the way real
runtimes do, and assigns each token a logprob derived from a checksum of
its text, so identical requests always produce identical responses.

Fault injection is driven by markers in the prompt text: a prompt
containing ``[[FLAKY]]`` gets a 503 on its first attempt, and one
containing ``[[MALFORMED]]`` gets a non-JSON body. Setting
``stub.no_logprobs = True`` drops the logprobs block entirely.
"""

from __future__ import annotations

import json
import re
import threading
import zlib
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

COMPLETION_TEXT = "good. Confidence: 0.9"

BOS = "<s>"


def _pieces(text):
    return [(m.group(), m.start()) for m in re.finditer(r"\s*\S+", text)]


def _logprob(piece):
    return -((zlib.crc32(piece.encode("utf-8")) % 400) + 25) / 100


class _StubHandler(BaseHTTPRequestHandler):
    def log_message(self, *args):
        pass

    def _reply(self, status, payload, raw=None):
        body = raw if raw is not None else json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        if self.path != "/v1/completions":
            self._reply(404, {"error": "unknown route"})
            return
        length = int(self.headers.get("Content-Length", "0"))
        request = json.loads(self.rfile.read(length))
        state = self.server.state
        with state.lock:
            state.requests.append(request)
        prompt = request.get("prompt", "")

        if request.get("temperature") != 0:
            self._reply(400, {"error": "sampling requested"})
            return
        if "[[FLAKY]]" in prompt:
            with state.lock:
                state.attempts[prompt] = state.attempts.get(prompt, 0) + 1
                first_try = state.attempts[prompt] == 1
            if first_try:
                self._reply(503, {"error": "warming up"})
                return
        if "[[MALFORMED]]" in prompt:
            self._reply(200, None, raw=b"this is not json {")
            return

        tokens = [BOS]
        offsets = [0]
        logprobs = [None]
        for piece, offset in _pieces(prompt):
            tokens.append(piece)
            offsets.append(offset)
            logprobs.append(_logprob(piece))
        for piece, offset in _pieces(COMPLETION_TEXT):
            tokens.append(piece)
            offsets.append(offset + len(prompt))
            logprobs.append(_logprob(piece))
        choice = {
            "index": 0,
            "text": prompt + COMPLETION_TEXT,
            "finish_reason": "stop",
        }
        if not state.no_logprobs:
            choice["logprobs"] = {
                "tokens": tokens,
                "token_logprobs": logprobs,
                "text_offset": offsets,
                "top_logprobs": None,
            }
        self._reply(
            200,
            {
                "id": "cmpl-stub",
                "object": "text_completion",
                "model": request.get("model", "stub"),
                "choices": [choice],
            },
        )


class StubRuntime:
    def __init__(self):
        self.lock = threading.Lock()
        self.requests = []
        self.attempts = {}
        self.no_logprobs = False
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
        self._server.state = self
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        self.endpoint = f"http://127.0.0.1:{self._server.server_address[1]}"

    def close(self):
        self._server.shutdown()
        self._thread.join()
        self._server.server_close()


@pytest.fixture
def stub():
    runtime = StubRuntime()
    yield runtime
    runtime.close()

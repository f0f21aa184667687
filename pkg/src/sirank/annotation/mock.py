"""Deterministic stand-in for a chat-completions server.

A :class:`MockEndpoint` turns a ``responder(prompt) -> {label: probability}``
function into OpenAI-shaped responses with first-token log-probabilities.
It can be plugged into :class:`~sirank.annotation.Annotator` as an
``httpx`` transport or served over real HTTP with :func:`serve`.
"""

from __future__ import annotations

import contextlib
import json
import math
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Mapping

import httpx

from ..dataset import RelevanceLabel, parse_label

__all__ = ["MockEndpoint", "one_hot", "uniform", "serve"]

Responder = Callable[[str], Mapping]


def one_hot(label: RelevanceLabel) -> dict[RelevanceLabel, float]:
    return {label: 1.0}


def uniform(_prompt: str = "") -> dict[RelevanceLabel, float]:
    return {label: 0.25 for label in RelevanceLabel}


class MockEndpoint:
    """Callable ``httpx`` handler answering chat-completion requests.

    Parameters
    ----------
    responder : callable
        Maps the user prompt to label probabilities (keys may be labels or
        label strings). Labels with zero probability are left out of the
        reported alternatives.
    extra_tokens : mapping, optional
        Additional ``token -> probability`` alternatives, e.g. punctuation
        that matches no label.
    fail : callable, optional
        ``fail(prompt, attempt)`` returning an HTTP status to send instead
        of a normal answer (used to exercise retries).
    reject_guided : bool
        Answer 400 to requests carrying ``guided_choice``.
    """

    def __init__(
        self,
        responder: Responder,
        extra_tokens: Mapping[str, float] | None = None,
        fail: Callable[[str, int], int | None] | None = None,
        reject_guided: bool = False,
    ):
        self.responder = responder
        self.extra_tokens = dict(extra_tokens or {})
        self.fail = fail
        self.reject_guided = reject_guided
        self.requests: list[dict] = []
        self._attempts: dict[str, int] = {}
        self._lock = threading.Lock()

    @property
    def prompts(self) -> list[str]:
        return [b["messages"][-1]["content"] for b in self.requests]

    def respond(self, body: dict) -> tuple[int, dict]:
        prompt = body["messages"][-1]["content"]
        with self._lock:
            self.requests.append(body)
            attempt = self._attempts.get(prompt, 0)
            self._attempts[prompt] = attempt + 1
        if self.fail is not None:
            status = self.fail(prompt, attempt)
            if status:
                return status, {"error": {"message": "injected failure"}}
        if self.reject_guided and "guided_choice" in body:
            return 400, {"error": {"message": "guided_choice not supported"}}

        probs = {parse_label(k): float(v) for k, v in self.responder(prompt).items()}
        alternatives = [
            (label.text.split()[0], p) for label, p in probs.items() if p > 0
        ]
        alternatives += list(self.extra_tokens.items())
        alternatives.sort(key=lambda tp: (-tp[1], tp[0]))
        alternatives = alternatives[: body.get("top_logprobs") or 20]
        top = [
            {"token": tok, "logprob": math.log(p) if p > 0 else -9999.0}
            for tok, p in alternatives
        ]
        chosen = max(probs, key=lambda label: (probs[label], int(label)), default=None)
        content = chosen.text if chosen is not None else ""
        first = top[0] if top else {"token": "", "logprob": -9999.0}
        return 200, {
            "id": "chatcmpl-mock",
            "object": "chat.completion",
            "model": body.get("model"),
            "choices": [
                {
                    "index": 0,
                    "message": {"role": "assistant", "content": content},
                    "finish_reason": "stop",
                    "logprobs": {
                        "content": [
                            {
                                "token": first["token"],
                                "logprob": first["logprob"],
                                "top_logprobs": top,
                            }
                        ]
                    },
                }
            ],
        }

    def __call__(self, request: httpx.Request) -> httpx.Response:
        status, payload = self.respond(json.loads(request.content))
        return httpx.Response(status, json=payload)

    def transport(self) -> httpx.MockTransport:
        return httpx.MockTransport(self)


@contextlib.contextmanager
def serve(endpoint: MockEndpoint, host: str = "127.0.0.1"):
    """Serve ``endpoint`` over HTTP on a free port; yields the base URL."""

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            body = json.loads(self.rfile.read(length))
            status, payload = endpoint.respond(body)
            data = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def log_message(self, *args):
            pass

    server = ThreadingHTTPServer((host, 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://{host}:{server.server_address[1]}/v1"
    finally:
        server.shutdown()
        server.server_close()

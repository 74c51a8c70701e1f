"""Shared fixtures: a scripted chat-completions stub server and small
simulated-landscape builders used across the suite."""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from skillmoo import Skill, SkillBundle, SimLandscape, TaskSpec


class StubLlmServer:
    """Offline chat-completions endpoint with scripted replies.

    Push replies with `enqueue`; each POST to /chat/completions pops the next
    one. `delay_s` stalls the handler to exercise client timeouts. Every
    request body is captured for assertions.
    """

    def __init__(self):
        self.replies: list[dict] = []
        self.requests: list[dict] = []
        self.delay_s = 0.0
        self.status_code = 200
        self._lock = threading.Lock()

        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length)) if length else {}
                with stub._lock:
                    stub.requests.append(body)
                    reply = stub.replies.pop(0) if stub.replies else _chat_reply("ok")
                    delay = stub.delay_s
                    status = stub.status_code
                if delay:
                    time.sleep(delay)
                payload = json.dumps(reply).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}"

    def enqueue(self, content: str, prompt_tokens: int = 100, completion_tokens: int = 50,
                include_usage: bool = True):
        self.replies.append(
            _chat_reply(content, prompt_tokens, completion_tokens, include_usage)
        )

    def close(self):
        self._server.shutdown()
        self._server.server_close()


def _chat_reply(content: str, prompt_tokens: int = 100, completion_tokens: int = 50,
                include_usage: bool = True) -> dict:
    reply = {"choices": [{"message": {"role": "assistant", "content": content}}]}
    if include_usage:
        reply["usage"] = {
            "prompt_tokens": prompt_tokens,
            "completion_tokens": completion_tokens,
        }
    return reply


@pytest.fixture
def stub_llm():
    server = StubLlmServer()
    yield server
    server.close()


def demo_landscape(**overrides) -> SimLandscape:
    params = dict(
        relevant_keywords={"pivot": 0.25, "retries": 0.20, "caching": 0.20,
                           "batching": 0.20, "flush": 0.15},
        distractor_penalty=0.4,
        reference_length=150,
        cost_base=0.05,
        cost_per_token=0.002,
        runtime_base=30.0,
        runtime_per_token=1.5,
        noise_amplitude=0.0,
        rng_seed=0,
    )
    params.update(overrides)
    return SimLandscape(**params)


_FILLER = (
    "review the checklist and confirm each step before moving on because "
    "consistent habits keep output stable across long sessions and teams"
)


def demo_bundle(bundle_id: str = "demo") -> SkillBundle:
    """Seed bundle covering 4 of the 5 demo keywords plus two distractors."""
    skills = (
        Skill("data-reshape", "Data reshape", "Reshaping tabular data",
              f"Use pivot tables when aggregating. A pivot keeps grouping explicit. {_FILLER}"),
        Skill("net-resilience", "Network resilience", "Handling flaky calls",
              f"Wrap calls with bounded retries and exponential backoff. {_FILLER}"),
        Skill("io-throughput", "IO throughput", "Faster data paths",
              f"Enable caching of repeated reads and batching of small writes. {_FILLER}"),
        Skill("checklist-legacy", "Legacy checklist", "Older process notes",
              " ".join([_FILLER] * 4)),
        Skill("style-guide", "Style guide", "Formatting conventions",
              " ".join([_FILLER] * 3)),
    )
    return SkillBundle(bundle_id, skills)


def demo_task(task_id: str = "demo-task", tests_total: int = 40, **landscape_overrides) -> TaskSpec:
    land = demo_landscape(**landscape_overrides)
    return TaskSpec(
        task_id=task_id,
        description="Demo simulated task",
        tests_total=tests_total,
        timeout_s=900.0,
        evaluator_config={"kind": "sim", "relevant_keywords": dict(land.relevant_keywords),
                          "distractor_penalty": land.distractor_penalty,
                          "reference_length": land.reference_length,
                          "cost_base": land.cost_base,
                          "cost_per_token": land.cost_per_token,
                          "runtime_base": land.runtime_base,
                          "runtime_per_token": land.runtime_per_token,
                          "noise_amplitude": land.noise_amplitude,
                          "rng_seed": land.rng_seed},
    )

"""Completion and embedding backends.

Every pipeline stage talks to a model through ``complete(prompt, temperature,
max_tokens) -> str``. :class:`MockBackend` scripts responses for tests and offline
runs; :class:`RemoteBackend` speaks the OpenAI-compatible chat-completions wire
format over HTTP.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import os
import re
import threading
import time
import urllib.error
import urllib.request
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import BackendError

log = logging.getLogger(__name__)


class CompletionBackend(Protocol):
    def complete(self, prompt: str, temperature: float = 0.0, max_tokens: int = 4096) -> str: ...


class EmbeddingBackend(Protocol):
    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


class MockBackend:
    """Deterministic scripted backend.

    Resolution order for each call:

    1. ``handler(prompt, temperature)`` when given; returning None falls through.
    2. The first rule whose regex matches the prompt. A rule's responses are served
       in order and the last one repeats.
    3. The next entry of ``responses``.
    4. ``default``.

    A response that is an exception instance is raised instead of returned, which
    lets tests script transport failures.
    """

    def __init__(self, responses: Sequence = (), rules: Sequence[tuple[str, object]] = (),
                 handler: Callable[[str, float], str | None] | None = None, default: str | None = None):
        self._queue = list(responses)
        self._rules = []
        for pattern, resp in rules:
            seq = list(resp) if isinstance(resp, (list, tuple)) else [resp]
            self._rules.append([re.compile(pattern, re.S), seq, 0])
        self.handler = handler
        self.default = default
        self.calls: list[tuple[str, float]] = []
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "MockBackend":
        """Load ``{"rules": [{"pattern": ..., "responses": [...]}], "responses": [...], "default": ...}``."""
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        rules = [(r["pattern"], r.get("responses", r.get("response"))) for r in data.get("rules", [])]
        return cls(responses=data.get("responses", ()), rules=rules, default=data.get("default"))

    def complete(self, prompt: str, temperature: float = 0.0, max_tokens: int = 4096) -> str:
        with self._lock:
            self.calls.append((prompt, temperature))
            resp = self.handler(prompt, temperature) if self.handler else None
            if resp is None:
                for rule in self._rules:
                    if rule[0].search(prompt):
                        seq, k = rule[1], rule[2]
                        resp = seq[min(k, len(seq) - 1)]
                        rule[2] = k + 1
                        break
            if resp is None and self._queue:
                resp = self._queue.pop(0)
            if resp is None:
                resp = self.default
        if resp is None:
            raise BackendError("mock backend has no scripted response for this prompt")
        if isinstance(resp, BaseException):
            raise resp
        return resp


class AuditLog:
    """Append-only JSONL record of every prompt and response of a run."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.path = self.directory / "calls.jsonl"
        self._lock = threading.Lock()
        self._counter = itertools.count()

    def record(self, channel: str, request: dict, response: str | None, error: str | None = None) -> None:
        entry = {"seq": next(self._counter), "channel": channel, "request": request,
                 "response": response, "error": error}
        line = json.dumps(entry, ensure_ascii=False)
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")


class AuditedBackend:
    """Wraps a backend so every call lands in an :class:`AuditLog`."""

    def __init__(self, inner: CompletionBackend, audit: AuditLog | None, channel: str = "completion"):
        self.inner = inner
        self.audit = audit
        self.channel = channel

    def complete(self, prompt: str, temperature: float = 0.0, max_tokens: int = 4096) -> str:
        request = {"prompt": prompt, "temperature": temperature, "max_tokens": max_tokens}
        try:
            resp = self.inner.complete(prompt, temperature=temperature, max_tokens=max_tokens)
        except Exception as exc:
            if self.audit:
                self.audit.record(self.channel, request, None, repr(exc))
            raise
        if self.audit:
            self.audit.record(self.channel, request, resp)
        return resp


def _post_json(url: str, body: dict, headers: dict, timeout: float, max_retries: int,
               backoff: float, backoff_cap: float) -> dict:
    data = json.dumps(body).encode("utf-8")
    last = None
    for attempt in range(max_retries + 1):
        req = urllib.request.Request(url, data=data, headers={"Content-Type": "application/json", **headers})
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                return json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            last = exc
            if exc.code not in (408, 409, 429) and exc.code < 500:
                break
        except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
            last = exc
        if attempt < max_retries:
            time.sleep(min(backoff_cap, backoff * 2**attempt))
    raise BackendError(f"request to {url} failed: {last}")


class RemoteBackend:
    """OpenAI-compatible ``/chat/completions`` client with capped exponential backoff."""

    def __init__(self, endpoint: str, model: str, api_key_env: str = "LLM_API_KEY", timeout: float = 120.0,
                 max_retries: int = 4, backoff: float = 1.0, backoff_cap: float = 30.0):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self.backoff_cap = backoff_cap

    def _headers(self) -> dict:
        key = os.environ.get(self.api_key_env)
        return {"Authorization": f"Bearer {key}"} if key else {}

    def complete(self, prompt: str, temperature: float = 0.0, max_tokens: int = 4096) -> str:
        body = {"model": self.model, "messages": [{"role": "user", "content": prompt}],
                "temperature": temperature, "max_tokens": max_tokens}
        data = _post_json(self.endpoint + "/chat/completions", body, self._headers(), self.timeout,
                          self.max_retries, self.backoff, self.backoff_cap)
        try:
            return data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"unexpected response shape: {str(data)[:200]}") from exc


class RemoteEmbedder:
    """OpenAI-compatible ``/embeddings`` client."""

    def __init__(self, endpoint: str, model: str, api_key_env: str = "LLM_API_KEY", timeout: float = 60.0,
                 max_retries: int = 4):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.max_retries = max_retries

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        key = os.environ.get(self.api_key_env)
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        data = _post_json(self.endpoint + "/embeddings", {"model": self.model, "input": list(texts)}, headers,
                          self.timeout, self.max_retries, 1.0, 30.0)
        try:
            rows = sorted(data["data"], key=lambda r: r["index"])
            return np.asarray([r["embedding"] for r in rows], dtype=float)
        except (KeyError, TypeError) as exc:
            raise BackendError("unexpected embedding response shape") from exc


class HashingEmbedder:
    """Feature-hashed character-trigram and word vectors; deterministic and offline."""

    def __init__(self, dim: int = 512, seed: int = 0):
        self.dim = dim
        self._key = seed.to_bytes(8, "little", signed=True)

    def _features(self, text: str) -> list[str]:
        norm = " ".join(text.lower().split())
        padded = f"  {norm}  "
        grams = [padded[i : i + 3] for i in range(len(padded) - 2)]
        return grams + ["w:" + w for w in norm.split()]

    def _vector(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for feat in self._features(text):
            h = int.from_bytes(hashlib.blake2b(feat.encode("utf-8"), digest_size=8, key=self._key).digest(), "little")
            vec[h % self.dim] += 1.0 if (h >> 63) & 1 else -1.0
        norm = np.linalg.norm(vec)
        return vec / norm if norm else vec

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim))
        return np.stack([self._vector(t) for t in texts])

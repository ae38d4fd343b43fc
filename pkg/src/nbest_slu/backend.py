"""Text-completion backends.

Three interchangeable implementations of ``complete(request)``:

* :class:`FixtureBackend` replays stored completions keyed by utterance id.
* :class:`OracleBackend` reads the n-best list back out of the prompt and
  answers from a cost softmax; deterministic, no model needed.
* :class:`HttpBackend` POSTs ``{"model", "prompt", "temperature", "max_tokens"}``
  and expects ``{"text": ...}`` back.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import httpx
import numpy as np

from .lattice import NBestList
from .parsing import probability_to_scale_label
from .prompting import KEYWORDS, OOV, OutputMode, Task, nbest_from_prompt

log = logging.getLogger(__name__)

AUTH_ENV_VAR = "NBEST_SLU_API_KEY"

DEFAULT_KEYWORD_THRESHOLD = 0.3
DEFAULT_DIRECTED_THRESHOLD = 0.5
DEFAULT_CUE_PATTERNS = (
    r"^(play|shuffle|set|call|text|turn|remind|open|start|stop|pause|navigate|show|read|add)\b",
    r"^(what's|what is|what|how's|how is|how|when|where|who|will|is it)\b.*\b(weather|time|score|traffic|temperature|today|tomorrow|news)\b",
    r"^(hey|ok|okay) (assistant|computer)\b",
)


class BackendError(RuntimeError):
    pass


class FixtureMiss(BackendError, KeyError):
    def __str__(self):
        return self.args[0] if self.args else "fixture miss"


class TransportError(BackendError):
    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (after {attempts} attempts)")
        self.attempts = attempts


class MalformedReply(BackendError):
    pass


@dataclass(frozen=True)
class CompletionRequest:
    utterance_id: str
    prompt: str
    max_new_tokens: int = 16
    temperature: float = 0.0

    def __post_init__(self):
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")


@dataclass(frozen=True)
class CompletionResponse:
    utterance_id: str
    raw_text: str
    backend: str
    latency: float = 0.0


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


# -- oracle -----------------------------------------------------------------

@dataclass(frozen=True)
class OracleConfig:
    task: Task = Task.KS
    output_mode: OutputMode = OutputMode.KEYWORD
    keyword_set: tuple[str, ...] = KEYWORDS
    oov_label: str = OOV
    directed_cue_patterns: tuple[str, ...] = DEFAULT_CUE_PATTERNS
    keyword_threshold: float = DEFAULT_KEYWORD_THRESHOLD
    directed_threshold: float = DEFAULT_DIRECTED_THRESHOLD

    def __post_init__(self):
        object.__setattr__(self, "task", Task(self.task))
        object.__setattr__(self, "output_mode", OutputMode(self.output_mode))
        if self.task is Task.KS:
            if tuple(self.keyword_set) != KEYWORDS:
                raise ValueError("KS oracle keyword_set must be the 10 Speech Commands keywords")
            if self.output_mode is not OutputMode.KEYWORD:
                raise ValueError("KS oracle needs output_mode=keyword")
        elif self.output_mode is OutputMode.KEYWORD:
            raise ValueError("DDSD oracle needs binary_target or scale_0_100")


def oracle_posterior(nbest: NBestList) -> np.ndarray:
    """Softmax of negated hypothesis costs."""
    neg = -np.array([h.cost for h in nbest.hypotheses], dtype=np.float64)
    w = np.exp(neg - neg.max())
    return w / w.sum()


def oracle_decide(nbest: NBestList, config: OracleConfig) -> str:
    post = oracle_posterior(nbest)
    if config.task is Task.KS:
        mass = dict.fromkeys(config.keyword_set, 0.0)
        for h, p in zip(nbest.hypotheses, post):
            if len(h.words) == 1 and h.words[0].lower() in mass:
                mass[h.words[0].lower()] += p
        # max() keeps the first of equal masses, i.e. keyword-list order
        best = max(config.keyword_set, key=lambda k: mass[k])
        return best if mass[best] >= config.keyword_threshold else config.oov_label
    cues = [re.compile(p) for p in config.directed_cue_patterns]
    directed = 0.0
    for h, p in zip(nbest.hypotheses, post):
        text = h.text.lower()
        if any(c.search(text) for c in cues):
            directed += p
    directed = min(max(directed, 0.0), 1.0)
    if config.output_mode is OutputMode.SCALE:
        return str(probability_to_scale_label(directed))
    return "1" if directed >= config.directed_threshold else "0"


# -- backends ---------------------------------------------------------------

class Backend:
    name = "base"

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        raise NotImplementedError

    def close(self):
        pass


class FixtureBackend(Backend):
    name = "fixture"

    def __init__(self, records: Iterable[dict], strict: bool = False):
        self.store = {}
        for r in records:
            self.store[r["utterance_id"]] = (r["raw_text"], r.get("prompt_digest"))
        self.strict = strict

    @classmethod
    def from_file(cls, path, strict: bool = False) -> "FixtureBackend":
        with open(path, encoding="utf-8") as fh:
            return cls((json.loads(line) for line in fh if line.strip()), strict=strict)

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        try:
            text, digest = self.store[request.utterance_id]
        except KeyError:
            raise FixtureMiss(f"no fixture for utterance {request.utterance_id!r}") from None
        if self.strict and digest is not None and digest != prompt_digest(request.prompt):
            raise BackendError(f"prompt digest mismatch for utterance {request.utterance_id!r}")
        return CompletionResponse(request.utterance_id, text, self.name)


class OracleBackend(Backend):
    name = "oracle"

    def __init__(self, config: OracleConfig):
        self.config = config

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        nbest = nbest_from_prompt(request.utterance_id, request.prompt)
        return CompletionResponse(request.utterance_id, oracle_decide(nbest, self.config), self.name)


@dataclass
class HttpConfig:
    url: str
    model: str = "default"
    path: str = "/v1/completions"
    auth_header: str = "Authorization"
    auth_value: str | None = None
    timeout: float = 60.0
    attempts: int = 3
    backoff: float = 0.25
    max_inflight: int = 8
    extra_headers: dict = field(default_factory=dict)

    @property
    def endpoint(self) -> str:
        return self.url.rstrip("/") + "/" + self.path.lstrip("/")


class HttpBackend(Backend):
    name = "http"

    def __init__(self, config: HttpConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        headers = dict(config.extra_headers)
        secret = os.environ.get(AUTH_ENV_VAR, config.auth_value)
        if secret:
            headers[config.auth_header] = secret
        self._client = httpx.Client(
            headers=headers,
            timeout=config.timeout,
            transport=transport,
            limits=httpx.Limits(max_connections=config.max_inflight),
        )

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        body = {
            "model": self.config.model,
            "prompt": request.prompt,
            "temperature": request.temperature,
            "max_tokens": request.max_new_tokens,
        }
        t0 = time.perf_counter()
        delay = self.config.backoff
        for attempt in range(1, self.config.attempts + 1):
            try:
                resp = self._client.post(self.config.endpoint, json=body)
            except httpx.TransportError as exc:
                if attempt == self.config.attempts:
                    raise TransportError(f"{type(exc).__name__}: {exc}", attempt) from exc
                log.warning("transport error on %s (attempt %d): %s", request.utterance_id, attempt, exc)
                time.sleep(delay)
                delay *= 2
                continue
            break
        if resp.status_code != 200:
            raise MalformedReply(f"HTTP {resp.status_code} for utterance {request.utterance_id!r}")
        try:
            text = resp.json()["text"]
        except (ValueError, KeyError, TypeError) as exc:
            raise MalformedReply(f"malformed reply for utterance {request.utterance_id!r}: {exc!r}") from exc
        if not isinstance(text, str):
            raise MalformedReply(f"'text' is not a string for utterance {request.utterance_id!r}")
        return CompletionResponse(request.utterance_id, text, self.name, time.perf_counter() - t0)

    def close(self):
        self._client.close()


def complete_many(backend: Backend, requests: Sequence[CompletionRequest], max_inflight: int = 8):
    """Complete a batch; results follow input order.

    Each slot holds either a :class:`CompletionResponse` or the exception
    raised for that request.
    """
    def one(req):
        try:
            return backend.complete(req)
        except BackendError as exc:
            return exc

    if max_inflight <= 1 or not isinstance(backend, HttpBackend):
        return [one(r) for r in requests]
    with ThreadPoolExecutor(max_workers=max_inflight) as pool:
        return list(pool.map(one, requests))

"""Chat-completion gateway with per-stage models, seeding, retries and a
fixture-replay transport.

Mock mode never constructs an HTTP client. Fixture replies live under
``<dir>/<stage>/`` and are found by, in order: the first 16 hex digits of the
prompt's SHA-256 (``<hash>.txt``), then the request's script index
(``0001.txt``, ``0002.txt``, ...).
"""
from __future__ import annotations

import hashlib
import logging
import os
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import httpx

from .errors import ConfigError, FixtureMissing, GatewayError, MissingCredentials, TransportExhausted

log = logging.getLogger(__name__)

STAGES = ("classify", "generate", "refine")
DEFAULT_API_KEY_ENV = "THREATSVA_API_KEY"
DEFAULT_BASE_URL = "https://api.openai.com/v1"
SYSTEM_PROMPT = "You are an expert hardware security verification engineer."
TRANSIENT_STATUS = frozenset({408, 409, 425, 429, 500, 502, 503, 504})


@dataclass(frozen=True)
class GatewayConfig:
    classify_model: str = "gpt-4o"
    generate_model: str = "gpt-5"
    refine_model: str = "gpt-4o"
    base_url: str = DEFAULT_BASE_URL
    api_key_env: str = DEFAULT_API_KEY_ENV
    seed_base: int = 0
    timeout: float = 120.0
    max_retries: int = 3
    backoff_base: float = 0.5
    mock_dir: Path | None = None

    @property
    def mode(self) -> str:
        return "mock" if self.mock_dir is not None else "live"

    def model_for(self, stage: str) -> str:
        return {"classify": self.classify_model, "generate": self.generate_model,
                "refine": self.refine_model}[stage]

    def validate(self):
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        if self.timeout <= 0:
            raise ConfigError("timeout must be positive")
        if self.mode == "mock":
            if not Path(self.mock_dir).is_dir():
                raise ConfigError(f"mock fixture directory {self.mock_dir} does not exist")
        elif not os.environ.get(self.api_key_env):
            raise MissingCredentials(f"environment variable {self.api_key_env} is not set")


@dataclass(frozen=True)
class GatewayRequest:
    stage: str
    prompt: str
    seed: int = 0
    index: int | None = None  # scripted-sequence position, 1-based

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")


@dataclass(frozen=True)
class GatewayReply:
    text: str
    latency: float = 0.0


def derive_seed(seed_base: int, stage: str, weakness_id: int = 0, iteration: int = 0) -> int:
    digest = hashlib.sha256(f"{seed_base}:{stage}:{weakness_id}:{iteration}".encode()).digest()
    return int.from_bytes(digest[:4], "big") & 0x7FFFFFFF


def prompt_key(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]


class FixtureTransport:
    """Replays replies from files. Has no network capability at all."""

    network_operations = 0

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.calls: list[GatewayRequest] = []
        self._lock = threading.Lock()

    def send(self, cfg: GatewayConfig, req: GatewayRequest) -> str:
        with self._lock:
            self.calls.append(req)
        stage_dir = self.root / req.stage
        candidates = [stage_dir / f"{prompt_key(req.prompt)}.txt"]
        if req.index is not None:
            candidates.append(stage_dir / f"{req.index:04d}.txt")
        for path in candidates:
            if path.is_file():
                return path.read_text(encoding="utf-8")
        raise FixtureMissing(
            f"no fixture for stage {req.stage!r} (looked for {', '.join(p.name for p in candidates)} in {stage_dir})"
        )


class HttpTransport:
    """Posts to ``{base_url}/chat/completions`` using the common wire shape."""

    def __init__(self, cfg: GatewayConfig, client: httpx.Client | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        self._api_key = os.environ.get(cfg.api_key_env)
        if not self._api_key:
            raise MissingCredentials(f"environment variable {cfg.api_key_env} is not set")
        self.client = client or httpx.Client(timeout=cfg.timeout)
        self.sleep = sleep
        self.network_operations = 0
        self._lock = threading.Lock()

    def _post(self, cfg: GatewayConfig, body: dict) -> httpx.Response:
        with self._lock:
            self.network_operations += 1
        return self.client.post(
            cfg.base_url.rstrip("/") + "/chat/completions",
            json=body,
            headers={"Authorization": f"Bearer {self._api_key}"},
            timeout=cfg.timeout,
        )

    def send(self, cfg: GatewayConfig, req: GatewayRequest) -> str:
        body = {
            "model": cfg.model_for(req.stage),
            "messages": [
                {"role": "system", "content": SYSTEM_PROMPT},
                {"role": "user", "content": req.prompt},
            ],
            "seed": req.seed,
            "temperature": 0,
        }
        last_error = None
        for attempt in range(cfg.max_retries + 1):
            if attempt:
                self.sleep(cfg.backoff_base * 2 ** (attempt - 1))
            try:
                resp = self._post(cfg, body)
            except httpx.TransportError as exc:
                last_error = exc
                log.warning("%s call attempt %d failed: %s", req.stage, attempt + 1, exc)
                continue
            if resp.status_code in TRANSIENT_STATUS:
                last_error = GatewayError(f"HTTP {resp.status_code}")
                log.warning("%s call attempt %d got HTTP %d", req.stage, attempt + 1, resp.status_code)
                continue
            if resp.status_code >= 400:
                raise GatewayError(f"{req.stage} call rejected with HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise GatewayError(f"{req.stage} reply is not a chat completion: {exc}") from exc
        raise TransportExhausted(
            f"{req.stage} call failed after {cfg.max_retries + 1} attempts: {last_error}"
        )


@dataclass
class LlmGateway:
    cfg: GatewayConfig
    transport: FixtureTransport | HttpTransport | None = None
    _calls: int = field(default=0, init=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    def __post_init__(self):
        self.cfg.validate()
        if self.transport is None:
            if self.cfg.mode == "mock":
                self.transport = FixtureTransport(self.cfg.mock_dir)
            else:
                self.transport = HttpTransport(self.cfg)

    @property
    def call_count(self) -> int:
        """Logical requests made through this gateway; retries are not counted."""
        return self._calls

    @property
    def network_operations(self) -> int:
        return self.transport.network_operations

    def complete(self, req: GatewayRequest) -> GatewayReply:
        with self._lock:
            self._calls += 1
        t0 = time.perf_counter()
        text = self.transport.send(self.cfg, req)
        return GatewayReply(text=text, latency=time.perf_counter() - t0)

    def with_seed_base(self, seed_base: int) -> "LlmGateway":
        return LlmGateway(replace(self.cfg, seed_base=seed_base), self.transport)


def complete(cfg: GatewayConfig, req: GatewayRequest) -> GatewayReply:
    return LlmGateway(cfg).complete(req)

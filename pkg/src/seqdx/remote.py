"""Agent backend that talks to an OpenAI-compatible chat-completions endpoint."""
from __future__ import annotations

import logging
import os
import threading
from dataclasses import dataclass, fields, replace
from typing import Optional

import httpx

from .env import INVALID_TEXT, Malformed, ObservedState, TestCatalog
from .protocol import (
    HypothesisOutput,
    ParseError,
    parse_decision,
    parse_hypothesis,
    render_decision_prompt,
    render_hypothesis_prompt,
)

logger = logging.getLogger(__name__)

ENV_PREFIX = "SEQDX_REMOTE_"


class RemoteError(RuntimeError):
    """The endpoint could not be reached or returned an unusable response."""


@dataclass(frozen=True)
class RemoteConfig:
    base_url: str = "http://localhost:8000/v1"
    model: str = "default"
    temperature: float = 0.0
    timeout: float = 60.0
    max_in_flight: int = 4
    max_retries: int = 2
    max_reprompts: int = 2
    api_key_env: str = "OPENAI_API_KEY"

    def with_env_overrides(self, environ=None) -> "RemoteConfig":
        """Apply ``SEQDX_REMOTE_<FIELD>`` environment variables on top of this config."""
        environ = os.environ if environ is None else environ
        updates = {}
        for f in fields(self):
            raw = environ.get(ENV_PREFIX + f.name.upper())
            if raw is not None:
                updates[f.name] = type(getattr(self, f.name))(raw)
        return replace(self, **updates)


class ChatClient:
    """Minimal chat-completions client with bounded concurrency and retries."""

    def __init__(self, config: RemoteConfig, transport: Optional[httpx.BaseTransport] = None):
        self.config = config
        headers = {}
        key = os.environ.get(config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._http = httpx.Client(
            base_url=config.base_url.rstrip("/"),
            timeout=config.timeout,
            headers=headers,
            transport=transport,
        )
        self._slots = threading.BoundedSemaphore(config.max_in_flight)

    def complete(self, messages: list) -> str:
        payload = {
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
        }
        last_exc: Optional[Exception] = None
        for attempt in range(self.config.max_retries + 1):
            with self._slots:
                try:
                    resp = self._http.post("/chat/completions", json=payload)
                except httpx.TransportError as exc:
                    last_exc = exc
                    logger.warning("chat request failed (attempt %d): %s", attempt + 1, exc)
                    continue
            if resp.status_code >= 500 or resp.status_code == 429:
                last_exc = RemoteError(f"HTTP {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise RemoteError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()["choices"][0]["message"]["content"] or ""
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise RemoteError(f"malformed response body: {exc}") from exc
        raise RemoteError(f"giving up after {self.config.max_retries + 1} attempts: {last_exc}")

    def close(self):
        self._http.close()


class RemotePolicy:
    """Renders the agent prompts, queries the endpoint and parses the replies.

    A reply that fails to parse is answered with the invalid-action notice and
    re-prompted up to ``max_reprompts`` times.
    """

    def __init__(self, catalog: TestCatalog, config: RemoteConfig = RemoteConfig(), client: Optional[ChatClient] = None,
                 hypothesis_template: Optional[str] = None, decision_template: Optional[str] = None):
        self.catalog = catalog
        self.config = config
        self.client = client or ChatClient(config)
        self.hypothesis_template = hypothesis_template
        self.decision_template = decision_template

    def _converse(self, prompt: str, state: ObservedState, parse):
        messages = [
            {"role": "system", "content": prompt},
            {"role": "user", "content": state.render()},
        ]
        error: Optional[ParseError] = None
        for _ in range(self.config.max_reprompts + 1):
            reply = self.client.complete(messages)
            try:
                return parse(reply, self.catalog)
            except ParseError as exc:
                error = exc
                messages += [
                    {"role": "assistant", "content": reply},
                    {"role": "user", "content": INVALID_TEXT},
                ]
        raise error

    def hypothesis_act(self, state: ObservedState, rng=None):
        prompt = render_hypothesis_prompt(state, self.catalog, self.hypothesis_template)
        return self._converse(prompt, state, parse_hypothesis), (0.0, 0.0)

    def decision_act(self, state: ObservedState, hyp: HypothesisOutput, rng=None):
        prompt = render_decision_prompt(state, hyp, self.catalog, self.decision_template)
        try:
            out = self._converse(prompt, state, parse_decision)
        except ParseError as exc:
            return Malformed(exc.reason), 0.0
        return out.to_action(), 0.0

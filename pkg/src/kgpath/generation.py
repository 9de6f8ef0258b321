"""Answer generation clients consuming retrieved paths.

The prompt enumerates each candidate path together with the entity it
reaches, so a generator can answer from the listing alone. Two backends:
a deterministic offline mock (default for tests and pipelines) and an
HTTP chat-completion client configured entirely through environment
variables.
"""

from __future__ import annotations

import os
import re
import time
from dataclasses import dataclass
from typing import Protocol

PROMPT_TEMPLATE_VERSION = 1
PROMPT_TEMPLATE = """Answer the question using the most relevant of the numbered knowledge-graph paths below.

Question: {question}

Paths:
{paths}

Reply with the answer entity only."""

ENV_ENDPOINT = "KGPATH_LLM_ENDPOINT"
ENV_MODEL = "KGPATH_LLM_MODEL"
ENV_API_KEY = "KGPATH_LLM_API_KEY"


class GenerationError(RuntimeError):
    """Generator failure; carries the latency spent before the failure."""

    def __init__(self, message: str, latency: float):
        super().__init__(message)
        self.latency = latency


@dataclass(frozen=True)
class GenerationResult:
    """Answer text with its supporting path serializations and latency."""

    answer: str
    supporting_paths: tuple[str, ...]
    latency_seconds: float


class GeneratorClient(Protocol):
    def complete(self, prompt: str) -> str: ...


def render_prompt(question: str, path_lines: list[tuple[str, str]]) -> str:
    """Fill the prompt template with enumerated (serialization, target) rows."""
    numbered = "\n".join(
        f"{i}. {serialization} -> {target}"
        for i, (serialization, target) in enumerate(path_lines, start=1)
    )
    return PROMPT_TEMPLATE.format(question=question, paths=numbered)


_FIRST_PATH_TARGET = re.compile(r"^1\. .* -> (.+)$", re.MULTILINE)


class MockGeneratorClient:
    """Offline stand-in: answers with the first listed path's target entity."""

    def complete(self, prompt: str) -> str:
        match = _FIRST_PATH_TARGET.search(prompt)
        if match is None:
            raise GenerationError("prompt contains no enumerated paths", 0.0)
        return match.group(1).strip()


class HTTPGeneratorClient:
    """Chat-completion client over HTTP, configured via environment variables.

    Reads the endpoint URL, model name, and optional API key from
    KGPATH_LLM_ENDPOINT / KGPATH_LLM_MODEL / KGPATH_LLM_API_KEY.
    """

    def __init__(self, timeout: float = 60.0):
        self.endpoint = os.environ.get(ENV_ENDPOINT)
        self.model = os.environ.get(ENV_MODEL, "")
        self.api_key = os.environ.get(ENV_API_KEY)
        self.timeout = timeout
        if not self.endpoint:
            raise GenerationError(
                f"{ENV_ENDPOINT} is not set; cannot reach a generator", 0.0
            )

    def complete(self, prompt: str) -> str:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        }
        started = time.perf_counter()
        try:
            response = requests.post(
                self.endpoint, json=payload, headers=headers, timeout=self.timeout
            )
            response.raise_for_status()
            body = response.json()
            return str(body["choices"][0]["message"]["content"])
        except Exception as exc:
            raise GenerationError(
                f"generator request failed: {exc}", time.perf_counter() - started
            ) from exc


def build_generator_client(client_id: str) -> GeneratorClient:
    if client_id == "mock":
        return MockGeneratorClient()
    if client_id == "http":
        return HTTPGeneratorClient()
    raise ValueError(f"unknown generator client: {client_id!r}")

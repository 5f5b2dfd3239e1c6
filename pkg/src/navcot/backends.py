"""Reasoner backends: anything that turns a rendered prompt into a completion."""

from __future__ import annotations

import hashlib
import json
import random
import threading
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .errors import LabelGap
from .gt_labels import CoTLabel, index_labels
from .http import EndpointConfig, JsonEndpoint, chat_payload, completion_text
from .prompting import CoTOutput, format_cot


@dataclass(frozen=True)
class StepContext:
    """Where a prompt comes from. Only deterministic test backends look at it."""

    episode: str
    t: int
    options: tuple[str, ...]
    attempt: int = 0


@dataclass
class Completion:
    text: str
    retries: int = 0
    log: list = field(default_factory=list)


def config_hash(cfg) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


class ReasonerBackend:
    name = "base"

    def generate(self, prompt: str, context: StepContext | None = None) -> str:
        raise NotImplementedError

    def complete(self, prompt: str, context: StepContext | None = None) -> Completion:
        return Completion(self.generate(prompt, context))

    def config(self) -> dict:
        return {}

    def descriptor(self) -> dict:
        return {"name": self.name, "config_hash": config_hash(self.config())}

    def health_check(self) -> None:
        """Raise BackendUnavailable / AuthError if the backend cannot serve requests."""


class OracleBackend(ReasonerBackend):
    """Replays the ground-truth CoT label for (episode, t)."""

    name = "oracle"

    def __init__(self, labels: Sequence[CoTLabel]):
        self._labels = index_labels(labels)

    def config(self):
        return {"labels": len(self._labels)}

    def generate(self, prompt, context=None):
        if context is None:
            raise LabelGap("oracle backend needs a step context")
        label = self._labels.get((context.episode, context.t))
        if label is None:
            raise LabelGap(f"no label for (episode={context.episode}, t={context.t})")
        if label.gt_action not in context.options:
            raise LabelGap(f"label action {label.gt_action} is not an option at "
                           f"(episode={context.episode}, t={context.t}); agent left the expert path")
        return label.rendered


class ScriptedBackend(ReasonerBackend):
    """Canned completions.

    ``script`` is one of: a sequence of strings consumed in order per episode
    (the last one repeats); a mapping from (episode, t) to a string or to a
    list indexed by attempt; or a callable ``(prompt, context) -> str``.
    """

    name = "scripted"

    def __init__(self, script):
        self.script = script
        self._cursor: dict[str, int] = {}
        self._lock = threading.Lock()

    def config(self):
        if callable(self.script):
            return {"script": getattr(self.script, "__name__", "callable")}
        if isinstance(self.script, Mapping):
            return {"script": sorted((str(k), str(v)) for k, v in self.script.items())}
        return {"script": list(self.script)}

    def generate(self, prompt, context=None):
        s = self.script
        if callable(s):
            return s(prompt, context)
        if isinstance(s, Mapping):
            key = (context.episode, context.t) if context else None
            if key not in s:
                return ""
            out = s[key]
            if isinstance(out, str):
                return out
            return out[min(context.attempt, len(out) - 1)]
        ep = context.episode if context else ""
        with self._lock:
            i = self._cursor.get(ep, 0)
            self._cursor[ep] = i + 1
        return s[min(i, len(s) - 1)] if s else ""


class RandomBackend(ReasonerBackend):
    """Uniform choice over all options (stop included), seeded per (episode, t, attempt)."""

    name = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def config(self):
        return {"seed": self.seed}

    def generate(self, prompt, context=None):
        if context is None:
            raise ValueError("random backend needs a step context")
        rng = random.Random(f"{self.seed}:{context.episode}:{context.t}:{context.attempt}")
        letter = rng.choice(sorted(context.options))
        return format_cot(CoTOutput("anything", letter, letter))


class HttpBackend(ReasonerBackend):
    """Chat-completion endpoint: single user message, temperature from config."""

    name = "http"

    def __init__(self, cfg: EndpointConfig, endpoint: JsonEndpoint | None = None):
        self.cfg = cfg
        self.endpoint = endpoint or JsonEndpoint(cfg)

    def config(self):
        c = self.cfg.public()
        c.pop("token_env", None)
        return c

    def complete(self, prompt, context=None):
        res = self.endpoint.post(chat_payload(self.cfg, prompt))
        return Completion(completion_text(res.data), retries=res.retries,
                          log=[x.to_json() for x in res.exchanges])

    def generate(self, prompt, context=None):
        return self.complete(prompt, context).text

    def health_check(self):
        self.endpoint.post(chat_payload(self.cfg, "ping", max_tokens=1))


def make_backend(kind: str, *, labels=None, seed: int = 0, script=None,
                 endpoint: EndpointConfig | None = None) -> ReasonerBackend:
    if kind == "oracle":
        if labels is None:
            raise ValueError("oracle backend needs labels")
        return OracleBackend(labels)
    if kind == "random":
        return RandomBackend(seed)
    if kind == "scripted":
        if script is None:
            raise ValueError("scripted backend needs a script")
        return ScriptedBackend(script)
    if kind == "http":
        if endpoint is None:
            raise ValueError("http backend needs an endpoint config")
        return HttpBackend(endpoint)
    raise ValueError(f"unknown backend {kind!r}")


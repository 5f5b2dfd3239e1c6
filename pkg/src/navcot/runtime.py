"""Closed-loop episode execution.

Each step builds the observation options at the agent's viewpoint, renders the
prompt (with history per the configured mode), queries the backend once, and
retries once if the completion does not parse. A second failure applies the
fallback policy. The episode ends on the stop option or after ``max_steps``
decisions.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

from .backends import ReasonerBackend, StepContext
from .env import CaptionTable, Episode, NavGraph, Pose, Trajectory, pose_after_move, read_jsonl, write_jsonl
from .errors import BackendUnavailable, EnvironmentGap, InvalidConfig, MalformedOutput, MissingCaption
from .prompting import DEFAULT_EXAMPLE, HISTORY_MODES, InContextExample, NavInput, parse_cot, render_history, render_prompt
from .vision_text import DEFAULT_BINS, STOP_LABEL, DirectionBins, build_observation_set

log = logging.getLogger(__name__)

STOP_REASONS = ("stop_action", "step_budget", "backend_failure")
FALLBACK_POLICIES = ("first_nonstop", "stop")
PARSE_RETRIES = 1


@dataclass(frozen=True)
class RunConfig:
    max_steps: int = 15
    history_mode: str = "last"
    temperature: float = 0.0
    seed: int = 0
    fallback_policy: str = "first_nonstop"

    def __post_init__(self):
        if self.max_steps < 1:
            raise InvalidConfig("max_steps must be >= 1")
        if self.history_mode not in HISTORY_MODES:
            raise InvalidConfig(f"history_mode must be one of {HISTORY_MODES}")
        if self.fallback_policy not in FALLBACK_POLICIES:
            raise InvalidConfig(f"fallback_policy must be one of {FALLBACK_POLICIES}")


@dataclass
class StepRecord:
    t: int
    viewpoint: str
    prompt: str
    history: str
    raw: list  # every completion received for this step, retry included
    parsed: dict | None
    parse_error: str | None
    action: str
    next_viewpoint: str | None  # None for stop
    fallback: bool = False
    transport_retries: int = 0
    exchanges: list = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class EpisodeResult:
    episode: str
    scan: str
    trajectory: Trajectory
    steps: list
    stop_reason: str
    error: str | None = None
    config: dict = field(default_factory=dict)
    backend: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "episode": self.episode, "scan": self.scan,
            "trajectory": list(self.trajectory.visited), "stopped": self.trajectory.stopped,
            "stop_reason": self.stop_reason, "error": self.error,
            "config": self.config, "backend": self.backend, "meta": self.meta,
            "steps": [s.to_json() for s in self.steps],
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "EpisodeResult":
        return cls(
            episode=d["episode"], scan=d["scan"],
            trajectory=Trajectory(tuple(d["trajectory"]), bool(d["stopped"])),
            steps=[StepRecord(**s) for s in d.get("steps", [])],
            stop_reason=d["stop_reason"], error=d.get("error"),
            config=d.get("config", {}), backend=d.get("backend", {}), meta=d.get("meta", {}),
        )


@dataclass
class EpisodeFailure:
    """Batch slot for an episode that could not be run at all."""

    episode: str
    error_type: str
    message: str
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"episode": self.episode, "failure": {"type": self.error_type, "message": self.message},
                "meta": self.meta}


def _fallback(labels: Sequence[str], policy: str) -> str:
    if policy == "first_nonstop" and len(labels) > 1:
        return labels[1]
    return STOP_LABEL


def run_episode(g: NavGraph, captions: CaptionTable, ep: Episode, backend: ReasonerBackend,
                cfg: RunConfig = RunConfig(), example: InContextExample | None = DEFAULT_EXAMPLE,
                bins: DirectionBins = DEFAULT_BINS) -> EpisodeResult:
    if ep.scan != g.scan:
        raise EnvironmentGap(f"episode {ep.id} is on scan {ep.scan!r}, graph is {g.scan!r}")
    visited = [ep.start]
    pose = Pose(ep.heading)
    chosen = []
    steps = []

    def result(reason, stopped=False, error=None):
        return EpisodeResult(ep.id, ep.scan, Trajectory(tuple(visited), stopped), steps, reason, error,
                             config=asdict(cfg), backend=backend.descriptor())

    for t in range(cfg.max_steps):
        here = visited[-1]
        try:
            obs = build_observation_set(g, captions, here, pose, bins)
        except MissingCaption as e:
            raise EnvironmentGap(f"episode {ep.id}, t={t}: {e}") from e
        history = render_history(chosen, cfg.history_mode)
        prompt = render_prompt(example, NavInput(ep.instruction, obs, history))
        ctx = StepContext(ep.id, t, tuple(obs.labels))

        raws, exchanges = [], []
        retries = 0
        parsed = error = None
        for attempt in range(PARSE_RETRIES + 1):
            try:
                comp = backend.complete(prompt, replace(ctx, attempt=attempt))
            except BackendUnavailable as e:
                steps.append(StepRecord(t, here, prompt, history, raws, None, f"backend: {e}",
                                        STOP_LABEL, None, transport_retries=retries, exchanges=exchanges))
                log.warning("episode %s: backend failure at t=%d: %s", ep.id, t, e)
                return result("backend_failure", error=str(e))
            raws.append(comp.text)
            retries += comp.retries
            exchanges.extend(comp.log)
            try:
                parsed = parse_cot(comp.text, obs.labels)
                error = None
                break
            except MalformedOutput as e:
                error = str(e)

        action = parsed.action if parsed else _fallback(obs.labels, cfg.fallback_policy)
        nxt = obs.targets.get(action)
        steps.append(StepRecord(t, here, prompt, history, raws, asdict(parsed) if parsed else None, error,
                                action, nxt, fallback=parsed is None, transport_retries=retries,
                                exchanges=exchanges))
        if nxt is None:
            return result("stop_action", stopped=True)
        pose = pose_after_move(g, here, nxt)
        chosen.append(obs.option(action))
        visited.append(nxt)
    return result("step_budget")


def run_batch(episodes: Sequence[Episode], graphs: Mapping[str, NavGraph], captions: CaptionTable,
              backend: ReasonerBackend, cfg: RunConfig = RunConfig(), parallelism: int = 1,
              example: InContextExample | None = DEFAULT_EXAMPLE, bins: DirectionBins = DEFAULT_BINS):
    """Run episodes concurrently; results come back sorted by episode id.

    An episode that raises is reported as an EpisodeFailure in its slot; the
    rest of the batch still runs.
    """
    if parallelism < 1:
        raise InvalidConfig("parallelism must be >= 1")

    def one(ep):
        try:
            g = graphs.get(ep.scan)
            if g is None:
                raise EnvironmentGap(f"no graph for scan {ep.scan!r}")
            return run_episode(g, captions, ep, backend, cfg, example, bins)
        except Exception as e:  # noqa: BLE001 - isolate per-episode failures
            log.error("episode %s failed: %s", ep.id, e)
            return EpisodeFailure(ep.id, type(e).__name__, str(e))

    ordered = sorted(episodes, key=lambda e: e.id)
    if parallelism == 1:
        return [one(ep) for ep in ordered]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(one, ordered))


def save_traces(results, path, meta: dict | None = None) -> int:
    def rows():
        for r in results:
            if meta:
                r.meta = {**meta, **r.meta}
            yield r.to_json()
    return write_jsonl(path, rows())


def load_traces(path) -> list:
    out = []
    for d in read_jsonl(path):
        if "failure" in d:
            f = d["failure"]
            out.append(EpisodeFailure(d["episode"], f["type"], f["message"], d.get("meta", {})))
        else:
            out.append(EpisodeResult.from_json(d))
    return out

"""Instruction-following datasets built from ground-truth CoT labels.

Every record is ``{"input", "output", "task", "episode", "t"}``. Inputs are the
same NavCoT prompt used at inference time, rendered along the expert path with
teacher-forced history.
"""

from __future__ import annotations

import json
import logging
import random
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

from .env import CaptionTable, Episode, NavGraph
from .errors import ExportValidationError, LabelGap, MalformedOutput, PoolTooSmall
from .gt_labels import CoTLabel, gt_step_options, index_labels
from .prompting import (
    DEFAULT_EXAMPLE,
    InContextExample,
    action_clause,
    filter_clause,
    imagination_clause,
    parse_cot,
    render_prompt_within_budget,
)
from .vision_text import DEFAULT_BINS, DirectionBins

log = logging.getLogger(__name__)

TASKS = ("FI", "VIF", "AP", "COT")
PRETRAIN_TASKS = ("FI", "VIF", "AP")
CHARS_PER_TOKEN = 4
TRAIN_TOKEN_LIMIT = 400
RECORD_FIELDS = ("input", "output", "task", "episode", "t")


@dataclass(frozen=True)
class TrainingRecord:
    input: str
    output: str
    task: str
    episode: str
    t: int

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in RECORD_FIELDS}

    def to_line(self) -> str:
        return json.dumps(self.to_json(), ensure_ascii=False)


@dataclass
class ExportOptions:
    history_mode: str = "last"
    include_example: bool = True
    example: InContextExample = DEFAULT_EXAMPLE
    char_budget: int | None = TRAIN_TOKEN_LIMIT * CHARS_PER_TOKEN
    bins: DirectionBins = DEFAULT_BINS


@dataclass
class ExportReport:
    records: int = 0
    truncated: int = 0
    over_budget: list = field(default_factory=list)  # (episode, t)


def _step_prompts(ep: Episode, g: NavGraph, captions: CaptionTable, opts: ExportOptions,
                  report: ExportReport | None) -> Iterator[tuple[int, str]]:
    steps = []
    for t, vid in enumerate(ep.gt_path):
        obs = gt_step_options(g, captions, ep, t, opts.bins)
        ex = opts.example if opts.include_example else None
        prompt, dropped, over = render_prompt_within_budget(
            ex, ep.instruction, obs, steps, opts.history_mode, opts.char_budget)
        if report is not None:
            report.truncated += bool(dropped)
            if over:
                report.over_budget.append((ep.id, t))
                log.warning("prompt for (%s, %d) exceeds %s chars", ep.id, t, opts.char_budget)
        yield t, prompt
        if t + 1 < len(ep.gt_path):
            steps.append(obs.option(obs.label_for(ep.gt_path[t + 1])))


def _task_output(task: str, label: CoTLabel) -> str:
    if task == "FI":
        return imagination_clause(label.imagination)
    if task == "VIF":
        return filter_clause(label.gt_action)
    if task == "AP":
        return action_clause(label.gt_action)
    if task == "COT":
        return label.rendered
    raise ValueError(f"unknown task {task!r}")


def _export(task: str, labels: Iterable[CoTLabel], episodes: Sequence[Episode],
            graphs: Mapping[str, NavGraph], captions: CaptionTable, opts: ExportOptions | None,
            report: ExportReport | None) -> Iterator[TrainingRecord]:
    opts = opts or ExportOptions()
    idx = index_labels(labels)
    for ep in sorted(episodes, key=lambda e: e.id):
        for t, prompt in _step_prompts(ep, graphs[ep.scan], captions, opts, report):
            label = idx.get((ep.id, t))
            if label is None:
                raise LabelGap(f"no label for (episode={ep.id}, t={t})")
            if report is not None:
                report.records += 1
            yield TrainingRecord(prompt, _task_output(task, label), task, ep.id, t)


def export_pretrain(labels, episodes, graphs, captions, task: str,
                    opts: ExportOptions | None = None, report: ExportReport | None = None):
    """One single-clause record per (episode, t) for task FI, VIF or AP."""
    task = task.upper()
    if task not in PRETRAIN_TASKS:
        raise ValueError(f"pretraining task must be one of {PRETRAIN_TASKS}, got {task!r}")
    return _export(task, labels, episodes, graphs, captions, opts, report)


def export_finetune(labels, episodes, graphs, captions,
                    opts: ExportOptions | None = None, report: ExportReport | None = None):
    """One full-CoT record per expert step (moves plus the final stop)."""
    return _export("COT", labels, episodes, graphs, captions, opts, report)


def export_task(task: str, *args, **kwargs):
    task = task.upper()
    if task == "COT":
        return export_finetune(*args, **kwargs)
    return export_pretrain(args[0], args[1], args[2], args[3], task, *args[4:], **kwargs)


def sample_augmentation(pool: Iterable[Episode], n: int, seed: int) -> list[Episode]:
    """Uniform sample without replacement, returned in episode-id order."""
    ordered = sorted(pool, key=lambda e: e.id)
    if n > len(ordered):
        raise PoolTooSmall(f"asked for {n} episodes from a pool of {len(ordered)}")
    if n < 0:
        raise ValueError("n must be >= 0")
    picked = random.Random(seed).sample(range(len(ordered)), n)
    return [ordered[i] for i in sorted(picked)]


_FI_RE = re.compile(r"Imagination: (.+)\.", re.DOTALL)
_VIF_RE = re.compile(r"Filtered observation: ([A-Z]) matches the imagination\.")
_AP_RE = re.compile(r"Action: ([A-Z])\.")


def validate_record(rec: TrainingRecord) -> None:
    """Strict check of a record's output against its task grammar."""
    if rec.task == "COT":
        try:
            c = parse_cot(rec.output, {chr(c) for c in range(65, 91)}, strict=True)
        except MalformedOutput as e:
            raise ExportValidationError(f"(episode={rec.episode}, t={rec.t}): {e}") from e
        if c.filtered != c.action:
            raise ExportValidationError(f"(episode={rec.episode}, t={rec.t}): filtered != action")
        return
    pattern = {"FI": _FI_RE, "VIF": _VIF_RE, "AP": _AP_RE}.get(rec.task)
    if pattern is None:
        raise ExportValidationError(f"unknown task {rec.task!r}")
    if pattern.fullmatch(rec.output) is None:
        raise ExportValidationError(f"(episode={rec.episode}, t={rec.t}): {rec.task} output "
                                    f"{rec.output!r} does not match its grammar")


def write_records(records: Iterable[TrainingRecord], path, validate: bool = True) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for rec in records:
            if validate:
                validate_record(rec)
            f.write(rec.to_line())
            f.write("\n")
            n += 1
    return n


def read_records(path) -> list[TrainingRecord]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                d = json.loads(line)
                out.append(TrainingRecord(d["input"], d["output"], d["task"], d["episode"], int(d["t"])))
    return out

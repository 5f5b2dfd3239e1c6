"""NavCoT prompt rendering and the three-part chain-of-thought grammar.

Canonical completion (see docs/grammar.md for the EBNF)::

    Imagination: {U}. Filtered observation: {V} matches the imagination. Action: {a}.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import MalformedOutput
from .vision_text import ObservationSet

HISTORY_MODES = ("none", "all", "last")
EMPTY_HISTORY = "none"


@dataclass(frozen=True)
class CoTOutput:
    imagination: str | None  # None when the completion carried no imagination clause
    filtered: str
    action: str


@dataclass(frozen=True)
class InContextExample:
    input_block: str
    output_block: str  # completion text only, without the "Output:" prefix


DEFAULT_EXAMPLE = InContextExample(
    input_block=(
        "Input: Instruction: Walk towards the mirror and walk through the open door. "
        "Observation: [A. stop,  B. go forward to <a bedroom with a bed>, "
        "C. turn right to <an open door leading to a hallway>]. "
        "History: Step 1. go forward to <a wall with a mirror>."
    ),
    output_block="Imagination: open door. Filtered observation: C matches the imagination. Action: C.",
)


@dataclass(frozen=True)
class NavInput:
    instruction: str
    options: ObservationSet
    history: str = EMPTY_HISTORY


def _step_text(step) -> str:
    return step if isinstance(step, str) else step.text


def render_history(steps: Sequence, mode: str = "last") -> str:
    """Body of the ``History:`` field. Steps are numbered from 1."""
    if mode not in HISTORY_MODES:
        raise ValueError(f"unknown history mode {mode!r}")
    if mode == "none" or not steps:
        return EMPTY_HISTORY
    if mode == "last":
        return f"Step {len(steps)}. {_step_text(steps[-1])}"
    return "\n".join(f"Step {k}. {_step_text(s)}" for k, s in enumerate(steps, 1))


def render_input(nav: NavInput) -> str:
    return (f"Input: Instruction: {nav.instruction} Observation: [{nav.options.render()}]. "
            f"History: {nav.history}.")


def render_prompt(ex: InContextExample | None, nav: NavInput) -> str:
    """In-context example (if any), then the query input and a bare ``Output:``."""
    if not nav.options.options:
        raise ValueError("observation set is empty")
    query = f"{render_input(nav)}\nOutput:"
    if ex is None:
        return query
    return f"{ex.input_block}\nOutput: {ex.output_block}\n\n{query}"


def render_prompt_within_budget(ex: InContextExample | None, instruction: str, options: ObservationSet,
                                steps: Sequence, mode: str, char_budget: int | None):
    """Render a prompt, dropping the oldest history steps until it fits ``char_budget``.

    Returns (prompt, dropped_steps, over_budget). ``over_budget`` is True when the
    prompt still exceeds the budget with no history left to drop.
    """
    steps = list(steps)
    dropped = 0
    while True:
        history = render_history(steps, mode)
        if mode == "all" and dropped:
            # keep original numbering so truncated history stays aligned with timesteps
            history = "\n".join(f"Step {k}. {_step_text(s)}" for k, s in enumerate(steps, dropped + 1))
        prompt = render_prompt(ex, NavInput(instruction, options, history))
        if char_budget is None or len(prompt) <= char_budget:
            return prompt, dropped, False
        if mode != "all" or len(steps) <= 1:
            return prompt, dropped, True
        steps.pop(0)
        dropped += 1


# --- CoT grammar -----------------------------------------------------------

_KW_IMAG = r"(?i:imagination)\s*:"
_KW_FILT = r"(?i:filtered\s+observation)"
_KW_ACT = r"(?i:action)\s*:"
_KEYWORDS = re.compile(f"{_KW_IMAG}|{_KW_FILT}|{_KW_ACT}")
_LETTER = r"\(?\s*([A-Za-z])\s*\)?(?![^\W\d_])"

_ACTION_RE = re.compile(_KW_ACT + r"\s*" + _LETTER)
_FILTER_RE = re.compile(_KW_FILT + r"\s*:?\s*" + _LETTER)
_IMAG_RE = re.compile(_KW_IMAG + r"\s*(.*?)\s*\.?\s*(?=" + _KW_FILT + "|" + _KW_ACT + r"|\Z)", re.DOTALL)
_STRICT_RE = re.compile(
    r"\s*Imagination: (?P<u>.+?)\. Filtered observation: (?P<v>[A-Z]) matches the imagination\."
    r" Action: (?P<a>[A-Z])\.\s*",
    re.DOTALL,
)


def is_valid_imagination(text) -> bool:
    """Imagination text that survives a format/parse round trip.

    Non-empty, no surrounding whitespace, no trailing period, and none of the
    clause keywords inside it.
    """
    return (isinstance(text, str) and bool(text) and text == text.strip()
            and not text.endswith(".") and _KEYWORDS.search(text) is None)


def format_cot(c: CoTOutput) -> str:
    if not is_valid_imagination(c.imagination):
        raise ValueError(f"imagination {c.imagination!r} cannot be rendered canonically")
    for letter in (c.filtered, c.action):
        if len(letter) != 1 or not ("A" <= letter <= "Z"):
            raise ValueError(f"bad option letter {letter!r}")
    return (f"Imagination: {c.imagination}. Filtered observation: {c.filtered} "
            f"matches the imagination. Action: {c.action}.")


def imagination_clause(u: str) -> str:
    return f"Imagination: {u}."


def filter_clause(v: str) -> str:
    return f"Filtered observation: {v} matches the imagination."


def action_clause(a: str) -> str:
    return f"Action: {a}."


def parse_cot(raw, valid_options: Iterable[str], strict: bool = False) -> CoTOutput:
    """Extract (imagination, filtered option, action) from a completion.

    Lenient mode tolerates surrounding whitespace, keyword case, lowercase
    letters and a missing final period; a missing or invalid filtered clause
    falls back to the action letter. Strict mode accepts only the canonical
    string. Either way MalformedOutput is the only exception raised.
    """
    if isinstance(raw, (bytes, bytearray)):
        text = bytes(raw).decode("utf-8", errors="replace")
    elif isinstance(raw, str):
        text = raw
    else:
        raise MalformedOutput(f"completion is {type(raw).__name__}, not text", raw=repr(raw))
    valid = {str(o) for o in valid_options}

    if strict:
        m = _STRICT_RE.fullmatch(text)
        if m is None or not is_valid_imagination(m["u"]):
            raise MalformedOutput("completion is not in canonical CoT form", raw=text)
        v, a = m["v"], m["a"]
        if a not in valid or v not in valid:
            raise MalformedOutput(f"option letters {v}/{a} not among {sorted(valid)}", raw=text)
        return CoTOutput(m["u"], v, a)

    m = _ACTION_RE.search(text)
    if m is None:
        raise MalformedOutput("no action clause", raw=text)
    action = m.group(1).upper()
    if action not in valid:
        raise MalformedOutput(f"action {action!r} not among {sorted(valid)}", raw=text)

    fm = _FILTER_RE.search(text)
    filtered = fm.group(1).upper() if fm else action
    if filtered not in valid:
        filtered = action

    im = _IMAG_RE.search(text)
    imagination = im.group(1).strip() if im else ""
    return CoTOutput(imagination or None, filtered, action)

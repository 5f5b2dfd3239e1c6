"""Ground-truth chain-of-thought labels.

Landmarks come from a landmark source (cache file or a completion endpoint),
per-step similarity scores from a similarity provider (table file, exact-match
over captions, or an external scoring endpoint). The imagination label of a
move step is the most similar landmark; the stop step uses the last landmark.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Protocol, Sequence

from .env import CaptionTable, Episode, NavGraph, pose_at_step, read_jsonl, write_jsonl
from .errors import (
    EmptyLandmarks,
    InvalidGtAction,
    MalformedLandmarks,
    MalformedOutput,
    ParseError,
    ProviderGap,
)
from .prompting import CoTOutput, format_cot, is_valid_imagination, parse_cot
from .vision_text import STOP_LABEL, DirectionBins, DEFAULT_BINS, build_observation_set

log = logging.getLogger(__name__)

NO_LANDMARK_SENTINEL = "forward"

LANDMARK_EXAMPLE = (
    "Instruction: Walk along the rug past the statue on the wooden table.\n"
    "Landmarks:\n"
    "1.rug;\n"
    "2.statue;\n"
    "3.wooden table."
)


@dataclass(frozen=True)
class LandmarkList:
    items: tuple[str, ...]
    source: str = ""  # episode / instruction id

    def __len__(self):
        return len(self.items)


@dataclass(frozen=True)
class SimilarityRow:
    episode: str
    t: int
    scores: tuple[float, ...]


@dataclass(frozen=True)
class CoTLabel:
    episode: str
    t: int
    imagination: str
    gt_action: str
    rendered: str

    def to_json(self) -> dict:
        return {"episode": self.episode, "t": self.t, "imagination": self.imagination,
                "gt_action": self.gt_action, "cot": self.rendered}

    @classmethod
    def from_json(cls, d: Mapping) -> "CoTLabel":
        try:
            return cls(str(d["episode"]), int(d["t"]), str(d["imagination"]),
                       str(d["gt_action"]), str(d["cot"]))
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"bad label record: {e!r}") from e


def normalize_landmark(text: str) -> str:
    text = " ".join(text.split()).lower()
    return text.strip(" .;,:")


def dedup(items: Iterable[str]) -> tuple[str, ...]:
    seen = {}
    for it in items:
        it = normalize_landmark(it)
        if it and it not in seen:
            seen[it] = None
    return tuple(seen)


# --- landmark extraction ----------------------------------------------------

def build_landmark_prompt(instruction: str) -> str:
    if not instruction or not instruction.strip():
        raise ValueError("instruction must be non-empty")
    return (
        "Extract the objects and scenes mentioned in the navigation instruction, "
        "in the order they are mentioned.\n\n"
        f"{LANDMARK_EXAMPLE}\n\n"
        f"Instruction: {instruction.strip()}\n"
        "Landmarks:"
    )


_ITEM_RE = re.compile(r"(?:^|[;\n])\s*\d+\s*[.)]\s*([^;\n]*)")


def parse_landmark_list(completion: str, source: str = "") -> LandmarkList:
    """Parse ``1.rug; 2.statue; 3.wooden table.`` style output (; or newline separated)."""
    text = completion.strip()
    if text.lower().startswith("landmarks:"):
        text = text[len("landmarks:"):].strip()
    if not text:
        return LandmarkList((), source)
    items = dedup(m.group(1) for m in _ITEM_RE.finditer(text))
    if not items:
        raise MalformedLandmarks(f"no numbered landmark items in {completion[:80]!r}")
    return LandmarkList(items, source)


class LandmarkSource(Protocol):
    def landmarks(self, episode: Episode) -> LandmarkList: ...


class LandmarkCache:
    """Landmark lists keyed by episode id, persisted as JSON Lines.

    Wraps an optional extractor (completion function); lookups that miss the
    cache call it once and remember the result.
    """

    def __init__(self, entries: Mapping[str, Sequence[str]] | None = None,
                 extractor: Callable[[str], str] | None = None):
        self._entries = {k: dedup(v) for k, v in (entries or {}).items()}
        self.extractor = extractor
        self.extraction_calls = 0

    @classmethod
    def load(cls, path, extractor=None) -> "LandmarkCache":
        entries = {}
        for d in read_jsonl(path):
            try:
                entries[str(d["episode"])] = list(d["landmarks"])
            except KeyError as e:
                raise ParseError(f"landmark cache record missing {e}") from e
        return cls(entries, extractor)

    def save(self, path) -> int:
        return write_jsonl(path, ({"episode": k, "landmarks": list(v)}
                                  for k, v in sorted(self._entries.items())))

    def landmarks(self, episode: Episode) -> LandmarkList:
        items = self._entries.get(episode.id)
        if items is None:
            if self.extractor is None:
                raise ProviderGap(f"no landmarks cached for episode {episode.id!r} and no extractor")
            completion = self.extractor(build_landmark_prompt(episode.instruction))
            self.extraction_calls += 1
            items = parse_landmark_list(completion, episode.id).items
            self._entries[episode.id] = items
        return LandmarkList(items, episode.id)


# --- similarity providers ----------------------------------------------------

class SimilarityProvider(Protocol):
    def row(self, episode: Episode, t: int, landmarks: LandmarkList, observation: str) -> SimilarityRow: ...


class TableSimilarity:
    """Precomputed rows from a JSON Lines file {"episode","t","scores"}."""

    def __init__(self, rows: Iterable[SimilarityRow], path: str = ""):
        self.path = path
        self._rows = {(r.episode, r.t): r for r in rows}

    @classmethod
    def load(cls, path) -> "TableSimilarity":
        rows = []
        try:
            for d in read_jsonl(path):
                rows.append(SimilarityRow(str(d["episode"]), int(d["t"]),
                                          tuple(float(s) for s in d["scores"])))
        except FileNotFoundError:
            raise ProviderGap(f"similarity table {path} does not exist") from None
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"{path}: bad similarity record: {e!r}") from e
        return cls(rows, str(path))

    def row(self, episode, t, landmarks, observation):
        try:
            r = self._rows[(episode.id, t)]
        except KeyError:
            where = f" in {self.path}" if self.path else ""
            raise ProviderGap(f"no similarity row for (episode={episode.id}, t={t}){where}") from None
        if len(r.scores) != len(landmarks):
            raise ProviderGap(f"row (episode={episode.id}, t={t}) has {len(r.scores)} scores "
                              f"for {len(landmarks)} landmarks")
        return r


class ExactMatchSimilarity:
    """Score 1.0 when the landmark appears as a whole phrase in the observation caption."""

    def row(self, episode, t, landmarks, observation):
        obs = normalize_landmark(observation)
        scores = tuple(1.0 if re.search(rf"(?<!\w){re.escape(lm)}(?!\w)", obs) else 0.0
                       for lm in landmarks.items)
        return SimilarityRow(episode.id, t, scores)


class HttpSimilarity:
    """External scoring endpoint.

    POSTs ``{"episode", "t", "landmarks", "observation"}`` and expects
    ``{"scores": [...]}`` with one finite score per landmark.
    """

    def __init__(self, endpoint):
        self.endpoint = endpoint  # navcot.http.JsonEndpoint

    def row(self, episode, t, landmarks, observation):
        payload = {"episode": episode.id, "t": t, "landmarks": list(landmarks.items),
                   "observation": observation}
        data = self.endpoint.post(payload).data
        try:
            scores = tuple(float(s) for s in data["scores"])
        except (KeyError, TypeError, ValueError):
            raise ProviderGap(f"similarity endpoint gave no scores for (episode={episode.id}, t={t})") from None
        if len(scores) != len(landmarks) or not all(math.isfinite(s) for s in scores):
            raise ProviderGap(f"similarity endpoint returned {len(scores)} scores for "
                              f"{len(landmarks)} landmarks at (episode={episode.id}, t={t})")
        return SimilarityRow(episode.id, t, scores)


def save_similarity_table(rows: Iterable[SimilarityRow], path) -> int:
    return write_jsonl(path, ({"episode": r.episode, "t": r.t, "scores": list(r.scores)} for r in rows))


# --- labeling ----------------------------------------------------------------

def select_imagination(landmarks: LandmarkList, row: SimilarityRow) -> tuple[int, str]:
    """Argmax over scores; ties go to the earliest-mentioned landmark."""
    if not landmarks.items:
        raise EmptyLandmarks(f"no landmarks for {landmarks.source!r}")
    if len(row.scores) != len(landmarks.items):
        raise ValueError(f"{len(row.scores)} scores for {len(landmarks.items)} landmarks")
    best = 0
    for k in range(1, len(row.scores)):
        if row.scores[k] > row.scores[best]:
            best = k
    return best, landmarks.items[best]


def build_cot_label(episode_id: str, t: int, imagination: str, gt_action: str,
                    valid_options: Iterable[str] | None = None) -> CoTLabel:
    if valid_options is not None and gt_action not in set(valid_options):
        raise InvalidGtAction(f"action {gt_action!r} is not an option at (episode={episode_id}, t={t})")
    if not is_valid_imagination(imagination):
        raise InvalidGtAction(f"imagination {imagination!r} cannot be rendered")
    rendered = format_cot(CoTOutput(imagination, gt_action, gt_action))
    check = parse_cot(rendered, valid_options or {gt_action}, strict=True)
    if check.filtered != gt_action or check.action != gt_action:
        raise InvalidGtAction(f"label for (episode={episode_id}, t={t}) does not round-trip")
    return CoTLabel(episode_id, t, imagination, gt_action, rendered)


def gt_step_options(g: NavGraph, captions: CaptionTable, ep: Episode, t: int,
                    bins: DirectionBins = DEFAULT_BINS):
    """Observation set seen at step t when following the expert path."""
    return build_observation_set(g, captions, ep.gt_path[t], pose_at_step(g, ep, ep.gt_path[: t + 1]), bins)


@dataclass
class LabelStats:
    episodes: int = 0
    labels: int = 0
    ties: int = 0
    zero_landmark_episodes: list = field(default_factory=list)

    def summary(self) -> str:
        return (f"labels={self.labels} episodes={self.episodes} ties={self.ties} "
                f"zero_landmark={len(self.zero_landmark_episodes)}")


def label_episode(ep: Episode, g: NavGraph, captions: CaptionTable, landmark_source: LandmarkSource,
                  similarity: SimilarityProvider, bins: DirectionBins = DEFAULT_BINS,
                  stats: LabelStats | None = None) -> list[CoTLabel]:
    lms = landmark_source.landmarks(ep)
    if stats is not None:
        stats.episodes += 1
        if not lms.items:
            stats.zero_landmark_episodes.append(ep.id)
    labels = []
    last = len(ep.gt_path) - 1
    for t in range(len(ep.gt_path)):
        obs = gt_step_options(g, captions, ep, t, bins)
        if t == last:
            action = STOP_LABEL
            imagination = lms.items[-1] if lms.items else NO_LANDMARK_SENTINEL
        else:
            nxt = ep.gt_path[t + 1]
            action = obs.label_for(nxt)
            if lms.items:
                row = similarity.row(ep, t, lms, captions.get(g.scan, ep.gt_path[t], nxt))
                _, imagination = select_imagination(lms, row)
                if stats is not None and row.scores.count(max(row.scores)) > 1:
                    stats.ties += 1
            else:
                imagination = NO_LANDMARK_SENTINEL
        labels.append(build_cot_label(ep.id, t, imagination, action, obs.labels))
    if stats is not None:
        stats.labels += len(labels)
    return labels


def label_dataset(episodes: Sequence[Episode], graphs: Mapping[str, NavGraph], captions: CaptionTable,
                  landmark_source: LandmarkSource, similarity: SimilarityProvider,
                  bins: DirectionBins = DEFAULT_BINS, stats: LabelStats | None = None) -> list[CoTLabel]:
    """One label per ground-truth action, terminal stop included, in (episode, t) order."""
    out = []
    for ep in sorted(episodes, key=lambda e: e.id):
        out.extend(label_episode(ep, graphs[ep.scan], captions, landmark_source, similarity, bins, stats))
    return out


def load_labels(path) -> list[CoTLabel]:
    return [CoTLabel.from_json(d) for d in read_jsonl(path)]


def save_labels(labels: Iterable[CoTLabel], path) -> int:
    return write_jsonl(path, (lb.to_json() for lb in labels))


def index_labels(labels: Iterable[CoTLabel]) -> dict[tuple[str, int], CoTLabel]:
    return {(lb.episode, lb.t): lb for lb in labels}


def check_labels(labels: Iterable[CoTLabel]) -> None:
    """Strict-parse every label; raise on the first that does not hold V = a = a*."""
    for lb in labels:
        try:
            c = parse_cot(lb.rendered, {lb.gt_action}, strict=True)
        except MalformedOutput as e:
            raise InvalidGtAction(f"label (episode={lb.episode}, t={lb.t}) does not parse: {e}") from e
        if c.action != lb.gt_action or c.filtered != lb.gt_action or c.imagination != lb.imagination:
            raise InvalidGtAction(f"label (episode={lb.episode}, t={lb.t}) disagrees with its fields")

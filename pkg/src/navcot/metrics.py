"""Trajectory metrics over a viewpoint graph.

All point distances are geodesic (graph shortest path). The success threshold
and the nDTW / CLS distance scale share one value, 3 m by default. Means use
``math.fsum`` so they do not depend on episode order.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Callable, Mapping, Sequence

from .env import Episode, NavGraph
from .errors import MissingEpisode

D_TH = 3.0
METRIC_NAMES = ("tl", "ne", "sr", "osr", "spl", "ndtw", "sdtw", "cls")


def traj_length(path: Sequence[str], g: NavGraph) -> float:
    return g.path_length(path)


def nav_error(path: Sequence[str], goal: str, g: NavGraph) -> float:
    return g.geodesic_distance(path[-1], goal)


def success(path: Sequence[str], goal: str, g: NavGraph, d_th: float = D_TH) -> int:
    return int(nav_error(path, goal, g) <= d_th)


def oracle_success(path: Sequence[str], goal: str, g: NavGraph, d_th: float = D_TH) -> int:
    return int(min(g.geodesic_distance(v, goal) for v in path) <= d_th)


def spl(succeeded: int, shortest: float, taken: float) -> float:
    if shortest < 0 or taken < 0:
        raise ValueError("path lengths must be non-negative")
    if not succeeded:
        return 0.0
    denom = max(shortest, taken)
    return 1.0 if denom == 0 else shortest / denom


def dtw(p: Sequence, r: Sequence, dist: Callable) -> float:
    """Minimum cumulative cost over monotone alignments (match / insert / delete)."""
    n, m = len(p), len(r)
    if not n or not m:
        raise ValueError("DTW needs non-empty sequences")
    prev = [math.inf] * (m + 1)
    prev[0] = 0.0
    for i in range(1, n + 1):
        cur = [math.inf] * (m + 1)
        for j in range(1, m + 1):
            cur[j] = dist(p[i - 1], r[j - 1]) + min(prev[j - 1], prev[j], cur[j - 1])
        prev = cur
    return prev[m]


def ndtw(path: Sequence[str], ref: Sequence[str], g: NavGraph, d_th: float = D_TH) -> float:
    cost = dtw(path, ref, g.geodesic_distance)
    return math.exp(-cost / (len(ref) * d_th))


def cls(path: Sequence[str], ref: Sequence[str], g: NavGraph, d_th: float = D_TH) -> float:
    """Coverage of the reference, weighted by how well the path length matches it."""
    if not path or not ref:
        raise ValueError("CLS needs non-empty paths")
    pc = math.fsum(math.exp(-min(g.geodesic_distance(r, p) for p in path) / d_th) for r in ref) / len(ref)
    ref_len = g.path_length(ref)
    if ref_len == 0:
        return pc
    epl = pc * ref_len
    denom = epl + abs(epl - g.path_length(path))
    return pc * (epl / denom) if denom > 0 else 0.0


def sdtw(succeeded: int, ndtw_value: float) -> float:
    return succeeded * ndtw_value


@dataclass
class EpisodeMetrics:
    episode: str
    tl: float
    ne: float
    sr: int
    osr: int
    spl: float
    ndtw: float
    sdtw: float
    cls: float
    steps: int
    stop_reason: str


def episode_metrics(ep: Episode, path: Sequence[str], g: NavGraph, d_th: float = D_TH,
                    stop_reason: str = "") -> EpisodeMetrics:
    g.validate_path(path)
    tl = traj_length(path, g)
    ne = nav_error(path, ep.goal, g)
    sr = int(ne <= d_th)
    osr = oracle_success(path, ep.goal, g, d_th)
    nd = ndtw(path, ep.gt_path, g, d_th)
    return EpisodeMetrics(
        episode=ep.id, tl=tl, ne=ne, sr=sr, osr=osr,
        spl=spl(sr, g.geodesic_distance(ep.start, ep.goal), tl),
        ndtw=nd, sdtw=sdtw(sr, nd), cls=cls(path, ep.gt_path, g, d_th),
        steps=len(path) - 1, stop_reason=stop_reason,
    )


@dataclass
class MetricReport:
    per_episode: list
    means: dict
    counts: dict
    config: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"config": self.config, "counts": self.counts, "means": self.means,
                "per_episode": [asdict(m) for m in self.per_episode]}

    def to_text(self) -> str:
        head = ("episode", "TL", "NE", "SR", "OSR", "SPL", "nDTW", "SDTW", "CLS")
        rows = [[m.episode, f"{m.tl:.2f}", f"{m.ne:.2f}", str(m.sr), str(m.osr), f"{m.spl:.3f}",
                 f"{m.ndtw:.3f}", f"{m.sdtw:.3f}", f"{m.cls:.3f}"] for m in self.per_episode]
        if self.per_episode:
            mu = self.means
            rows.append(["MEAN", f"{mu['tl']:.2f}", f"{mu['ne']:.2f}", f"{mu['sr']:.3f}", f"{mu['osr']:.3f}",
                         f"{mu['spl']:.3f}", f"{mu['ndtw']:.3f}", f"{mu['sdtw']:.3f}", f"{mu['cls']:.3f}"])
        widths = [max(len(r[i]) for r in [head, *rows]) for i in range(len(head))]
        lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
                 for r in [head, *rows]]
        lines.append(f"episodes={self.counts['episodes']} failed={self.counts['failed']} "
                     f"d_th={self.config.get('d_th')}m")
        return "\n".join(lines)


def evaluate(results: Sequence, episodes: Sequence[Episode] | Mapping[str, Episode],
             graphs: Mapping[str, NavGraph], d_th: float = D_TH) -> MetricReport:
    """Per-episode metrics and their means.

    ``results`` holds runtime EpisodeResult objects; EpisodeFailure slots are
    counted but excluded from the means.
    """
    by_id = episodes if isinstance(episodes, Mapping) else {e.id: e for e in episodes}
    per, failed = [], 0
    config = {"d_th": d_th}
    for res in sorted(results, key=lambda r: r.episode):
        ep = by_id.get(res.episode)
        if ep is None:
            raise MissingEpisode(f"trace for unknown episode {res.episode!r}")
        if not hasattr(res, "trajectory"):
            failed += 1
            continue
        if "max_steps" not in config and res.config:
            config.update(max_steps=res.config.get("max_steps"), history_mode=res.config.get("history_mode"),
                          fallback_policy=res.config.get("fallback_policy"), backend=res.backend)
        per.append(episode_metrics(ep, res.trajectory.visited, graphs[ep.scan], d_th, res.stop_reason))
    means = {k: (math.fsum(getattr(m, k) for m in per) / len(per) if per else None) for k in METRIC_NAMES}
    counts = {"episodes": len(per), "failed": failed,
              "stopped": sum(m.stop_reason == "stop_action" for m in per)}
    return MetricReport(per, means, counts, config)


def report_schema() -> dict:
    return json.loads(resources.files("navcot").joinpath("schemas/report.schema.json").read_text())

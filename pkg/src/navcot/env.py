"""Navigation environments: viewpoint graphs, episodes, trajectories and geometry.

Frame convention (used everywhere in the package): positions are meters in a
right-handed frame with +z up. Heading 0 faces +y and increases clockwise when
viewed from above, so +x is heading 90. Elevation is positive looking up.
"""

from __future__ import annotations

import heapq
import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import (
    DegeneratePositions,
    GraphInvariantError,
    MissingCaption,
    ParseError,
    UnknownViewpoint,
)


@dataclass(frozen=True)
class Viewpoint:
    id: str
    position: tuple[float, float, float]

    def __post_init__(self):
        if len(self.position) != 3 or not all(math.isfinite(c) for c in self.position):
            raise GraphInvariantError(f"viewpoint {self.id!r} has a non-finite position")


@dataclass(frozen=True)
class Pose:
    heading: float = 0.0
    elevation: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "heading", self.heading % 360.0)
        if not -90.0 <= self.elevation <= 90.0:
            raise ValueError(f"elevation {self.elevation} outside [-90, 90]")


@dataclass(frozen=True)
class Episode:
    id: str
    scan: str
    instruction: str
    gt_path: tuple[str, ...]
    heading: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "gt_path", tuple(self.gt_path))
        if not self.gt_path:
            raise ParseError(f"episode {self.id!r} has an empty gt_path")

    @property
    def start(self) -> str:
        return self.gt_path[0]

    @property
    def goal(self) -> str:
        return self.gt_path[-1]

    def to_json(self) -> dict:
        d = {"id": self.id, "scan": self.scan, "instruction": self.instruction,
             "gt_path": list(self.gt_path)}
        if self.heading:
            d["heading"] = self.heading
        return d

    @classmethod
    def from_json(cls, d: Mapping) -> "Episode":
        try:
            return cls(id=str(d["id"]), scan=str(d["scan"]), instruction=str(d["instruction"]),
                       gt_path=tuple(str(v) for v in d["gt_path"]),
                       heading=float(d.get("heading", 0.0)))
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"bad episode record: {e}") from e


@dataclass(frozen=True)
class Trajectory:
    visited: tuple[str, ...]
    stopped: bool = False

    def __post_init__(self):
        object.__setattr__(self, "visited", tuple(self.visited))
        if not self.visited:
            raise ValueError("trajectory must contain the start viewpoint")

    @property
    def final(self) -> str:
        return self.visited[-1]


def euclidean_distance(a: Viewpoint, b: Viewpoint) -> float:
    return math.dist(a.position, b.position)


class NavGraph:
    """Undirected, connected viewpoint graph with Euclidean edge weights.

    Weights are always recomputed from positions. Shortest-path distances are
    computed lazily per source (Dijkstra) and cached; the graph itself is
    immutable so the cache is safe to share between threads.
    """

    def __init__(self, viewpoints: Iterable[Viewpoint], edges: Iterable[Sequence[str]],
                 scan: str = ""):
        self.scan = scan
        vps: dict[str, Viewpoint] = {}
        for vp in viewpoints:
            if vp.id in vps:
                raise GraphInvariantError(f"duplicate viewpoint id {vp.id!r}")
            vps[vp.id] = vp
        self._vps = vps
        adj: dict[str, dict[str, float]] = {vid: {} for vid in vps}
        for e in edges:
            if len(e) != 2:
                raise GraphInvariantError(f"edge {e!r} is not a pair")
            a, b = str(e[0]), str(e[1])
            for x in (a, b):
                if x not in vps:
                    raise GraphInvariantError(f"edge ({a}, {b}) references unknown viewpoint {x!r}")
            if a == b:
                raise GraphInvariantError(f"self-loop at {a!r}")
            w = euclidean_distance(vps[a], vps[b])
            adj[a][b] = w
            adj[b][a] = w
        self._adj = adj
        self._dist_cache: dict[str, dict[str, float]] = {}
        self._pred_cache: dict[str, dict[str, str]] = {}
        self._lock = threading.Lock()
        if vps and not self._connected():
            raise GraphInvariantError(f"graph {scan!r} is not connected")

    def _connected(self) -> bool:
        start = next(iter(self._vps))
        seen = {start}
        stack = [start]
        while stack:
            for nb in self._adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == len(self._vps)

    def __contains__(self, vid) -> bool:
        return vid in self._vps

    def __len__(self) -> int:
        return len(self._vps)

    def __iter__(self) -> Iterator[Viewpoint]:
        return iter(self._vps.values())

    @property
    def ids(self) -> list[str]:
        return list(self._vps)

    def viewpoint(self, vid: str) -> Viewpoint:
        try:
            return self._vps[vid]
        except KeyError:
            raise UnknownViewpoint(f"viewpoint {vid!r} not in graph {self.scan!r}") from None

    def neighbors(self, vid: str) -> list[str]:
        self.viewpoint(vid)
        return sorted(self._adj[vid])

    def edges(self) -> list[tuple[str, str]]:
        out = set()
        for a, nbs in self._adj.items():
            for b in nbs:
                out.add((a, b) if a < b else (b, a))
        return sorted(out)

    def edge_weight(self, a: str, b: str) -> float:
        try:
            return self._adj[a][b]
        except KeyError:
            raise GraphInvariantError(f"{a!r} and {b!r} are not adjacent") from None

    def adjacent(self, a: str, b: str) -> bool:
        return b in self._adj.get(a, ())

    def _dijkstra(self, src: str) -> tuple[dict[str, float], dict[str, str]]:
        cached = self._dist_cache.get(src)
        if cached is not None:
            return cached, self._pred_cache[src]
        dist = {src: 0.0}
        pred: dict[str, str] = {}
        heap = [(0.0, src)]
        done = set()
        while heap:
            d, u = heapq.heappop(heap)
            if u in done:
                continue
            done.add(u)
            # sorted neighbor order + strict improvement keeps predecessor choice deterministic
            for v in sorted(self._adj[u]):
                nd = d + self._adj[u][v]
                if v not in dist or nd < dist[v]:
                    dist[v] = nd
                    pred[v] = u
                    heapq.heappush(heap, (nd, v))
        with self._lock:
            self._dist_cache[src] = dist
            self._pred_cache[src] = pred
        return dist, pred

    def geodesic_distance(self, a: str, b: str) -> float:
        self.viewpoint(a)
        self.viewpoint(b)
        if a == b:
            return 0.0
        return self._dijkstra(a)[0][b]

    def shortest_path(self, a: str, b: str) -> list[str]:
        self.viewpoint(a)
        self.viewpoint(b)
        _, pred = self._dijkstra(a)
        path = [b]
        while path[-1] != a:
            path.append(pred[path[-1]])
        return path[::-1]

    def path_length(self, path: Sequence[str]) -> float:
        return sum(self.edge_weight(u, v) for u, v in zip(path, path[1:]))

    def validate_path(self, path: Sequence[str]) -> None:
        for vid in path:
            self.viewpoint(vid)
        for u, v in zip(path, path[1:]):
            if not self.adjacent(u, v):
                raise GraphInvariantError(f"path step {u} -> {v} is not an edge of {self.scan!r}")

    def to_json(self) -> dict:
        return {
            "viewpoints": [{"id": vp.id, "x": vp.position[0], "y": vp.position[1], "z": vp.position[2]}
                           for vp in self._vps.values()],
            "edges": [list(e) for e in self.edges()],
        }


def geodesic_distance(g: NavGraph, a: str, b: str) -> float:
    return g.geodesic_distance(a, b)


def _wrap180(angle: float) -> float:
    """Wrap to (-180, 180]."""
    a = math.fmod(angle, 360.0)
    if a <= -180.0:
        a += 360.0
    elif a > 180.0:
        a -= 360.0
    return a


def heading_to(src: Viewpoint, dst: Viewpoint) -> float:
    dx = dst.position[0] - src.position[0]
    dy = dst.position[1] - src.position[1]
    return math.degrees(math.atan2(dx, dy)) % 360.0


def relative_pose(src: Viewpoint, agent_pose: Pose, dst: Viewpoint) -> tuple[float, float]:
    """Heading change (in (-180, 180]) and elevation change needed to face ``dst``."""
    dx, dy, dz = (d - s for d, s in zip(dst.position, src.position))
    horiz = math.hypot(dx, dy)
    if horiz == 0.0 and dz == 0.0:
        raise DegeneratePositions(f"{src.id!r} and {dst.id!r} share a position")
    if horiz == 0.0:
        dpsi = 0.0
    else:
        dpsi = _wrap180(math.degrees(math.atan2(dx, dy)) - agent_pose.heading)
    dtheta = math.degrees(math.atan2(dz, horiz)) - agent_pose.elevation
    return dpsi, dtheta


def pose_after_move(g: NavGraph, src: str, dst: str) -> Pose:
    """Agent faces its direction of travel after a move; elevation resets to level."""
    return Pose(heading=heading_to(g.viewpoint(src), g.viewpoint(dst)), elevation=0.0)


def pose_at_step(g: NavGraph, ep: Episode, path: Sequence[str]) -> Pose:
    """Pose on arrival at the last viewpoint of ``path`` (a prefix walked from the start)."""
    if len(path) < 2:
        return Pose(heading=ep.heading)
    return pose_after_move(g, path[-2], path[-1])


class CaptionTable:
    """One caption per directed navigable edge, keyed by (scan, from, to)."""

    def __init__(self, rows: Iterable[tuple[str, str, str, str]] = ()):
        self._caps: dict[tuple[str, str, str], str] = {}
        for scan, src, dst, caption in rows:
            self.add(scan, src, dst, caption)

    def add(self, scan: str, src: str, dst: str, caption: str) -> None:
        key = (scan, src, dst)
        prev = self._caps.get(key)
        if prev is not None and prev != caption:
            raise ParseError(f"conflicting captions for edge {src} -> {dst} in scan {scan}")
        self._caps[key] = caption

    def get(self, scan: str, src: str, dst: str) -> str:
        try:
            return self._caps[(scan, src, dst)]
        except KeyError:
            raise MissingCaption((scan, src, dst)) from None

    def __contains__(self, key) -> bool:
        return key in self._caps

    def __len__(self) -> int:
        return len(self._caps)

    def rows(self) -> list[dict]:
        return [{"scan": s, "from_viewpoint": a, "to_viewpoint": b, "caption": c}
                for (s, a, b), c in sorted(self._caps.items())]


# --- file IO -------------------------------------------------------------

def _read_json(path: Path):
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: {e}") from e


def read_jsonl(path) -> Iterator[dict]:
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"{path}:{lineno}: {e}") from e


def write_jsonl(path, records: Iterable[Mapping]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for rec in records:
            f.write(json.dumps(rec, ensure_ascii=False))
            f.write("\n")
            n += 1
    return n


def parse_graph(data, scan: str = "") -> NavGraph:
    try:
        vps = [Viewpoint(str(v["id"]), (float(v["x"]), float(v["y"]), float(v["z"])))
               for v in data["viewpoints"]]
        edges = [tuple(e) for e in data["edges"]]
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"malformed graph {scan!r}: {e!r}") from e
    return NavGraph(vps, edges, scan=scan)


def load_graph(graph_file, scan: str | None = None) -> NavGraph:
    """Load one graph file; the scan id defaults to the file stem."""
    path = Path(graph_file)
    return parse_graph(_read_json(path), scan=scan if scan is not None else path.stem)


def load_graphs(path) -> dict[str, NavGraph]:
    """Load a single graph file or every ``*.json`` file in a directory."""
    path = Path(path)
    files = sorted(path.glob("*.json")) if path.is_dir() else [path]
    return {f.stem: load_graph(f) for f in files}


def save_graph(g: NavGraph, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(g.to_json(), f, indent=1)
        f.write("\n")


def load_episodes(path) -> list[Episode]:
    return [Episode.from_json(d) for d in read_jsonl(path)]


def save_episodes(episodes: Iterable[Episode], path) -> int:
    return write_jsonl(path, (ep.to_json() for ep in episodes))


def load_captions(path) -> CaptionTable:
    table = CaptionTable()
    for d in read_jsonl(path):
        try:
            table.add(str(d["scan"]), str(d["from_viewpoint"]), str(d["to_viewpoint"]), str(d["caption"]))
        except KeyError as e:
            raise ParseError(f"caption record missing field {e}") from e
    return table


def save_captions(table: CaptionTable, path) -> int:
    return write_jsonl(path, table.rows())


def validate_episode(g: NavGraph, ep: Episode) -> None:
    if ep.scan != g.scan:
        raise GraphInvariantError(f"episode {ep.id!r} is on scan {ep.scan!r}, graph is {g.scan!r}")
    g.validate_path(ep.gt_path)


@dataclass
class World:
    """Everything needed to run episodes: graphs by scan, captions, episodes."""

    graphs: dict[str, NavGraph]
    captions: CaptionTable
    episodes: list[Episode] = field(default_factory=list)

    def graph_for(self, ep: Episode) -> NavGraph:
        try:
            return self.graphs[ep.scan]
        except KeyError:
            raise UnknownViewpoint(f"no graph for scan {ep.scan!r} (episode {ep.id})") from None

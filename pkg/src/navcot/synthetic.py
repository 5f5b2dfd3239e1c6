"""Seeded synthetic worlds with planted landmarks.

Each viewpoint carries one unique two-word landmark. The caption of a directed
edge a -> b describes b's landmark, and an episode's instruction names the
landmarks of gt_path[1:] in order, so the ground-truth imagination of every
move step is known by construction.
"""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass

from .env import CaptionTable, Episode, NavGraph, Viewpoint
from .errors import InvalidConfig

ADJECTIVES = ("red", "blue", "green", "wooden", "white", "black", "glass", "marble",
              "yellow", "stone", "leather", "metal")
NOUNS = ("chair", "sofa", "table", "lamp", "door", "staircase", "rug", "mirror", "painting",
         "plant", "cabinet", "bed", "sink", "fireplace", "piano", "statue", "bookshelf",
         "window", "counter", "bench")
VOCABULARY = tuple(f"{a} {n}" for a, n in itertools.product(ADJECTIVES, NOUNS))

CAPTION_TEMPLATES = (
    "a room with a {lm}",
    "a hallway leading to a {lm}",
    "a {lm} next to a wall",
    "an open area with a {lm}",
    "a corner with a {lm}",
)
MOVE_TEMPLATES = ("walk toward the {lm}", "go past the {lm}", "head to the {lm}", "continue to the {lm}")
STOP_TEMPLATES = ("stop at the {lm}", "wait near the {lm}", "stop next to the {lm}")

MIN_SEPARATION = 2.0  # meters between any two viewpoints
MAX_HOPS = 6


@dataclass
class SyntheticWorld:
    graph: NavGraph
    captions: CaptionTable
    episodes: list[Episode]
    landmark_of: dict[str, str]  # viewpoint id -> planted landmark

    @property
    def scan(self) -> str:
        return self.graph.scan

    def __iter__(self):
        # unpacks as (graph, captions, episodes)
        return iter((self.graph, self.captions, self.episodes))

    def planted_landmarks(self, ep: Episode) -> list[str]:
        return [self.landmark_of[v] for v in ep.gt_path[1:]]


def _positions(rng: random.Random, n: int) -> list[tuple[float, float, float]]:
    side = MIN_SEPARATION * 2.0 * math.sqrt(n) + 4.0
    pts: list[tuple[float, float, float]] = []
    while len(pts) < n:
        p = (round(rng.uniform(0, side), 3), round(rng.uniform(0, side), 3),
             round(rng.uniform(-0.5, 0.5), 3))
        if all(math.dist(p, q) >= MIN_SEPARATION for q in pts):
            pts.append(p)
    return pts


def _edges(pts, branching: int) -> list[tuple[int, int]]:
    n = len(pts)
    pairs = sorted(((math.dist(pts[i], pts[j]), i, j) for i in range(n) for j in range(i + 1, n)))
    # minimum spanning tree (Kruskal) for connectivity
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    edges = set()
    for _, i, j in pairs:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
            edges.add((i, j))
    # then shortest remaining pairs until mean degree reaches the branching factor
    target = min(len(pairs), math.ceil(n * branching / 2))
    for _, i, j in pairs:
        if len(edges) >= target:
            break
        edges.add((i, j))
    return sorted(edges)


def _instruction(rng: random.Random, landmarks: list[str]) -> str:
    clauses = [rng.choice(MOVE_TEMPLATES).format(lm=lm) for lm in landmarks[:-1]]
    clauses.append(rng.choice(STOP_TEMPLATES).format(lm=landmarks[-1]))
    if len(clauses) == 1:
        text = clauses[0]
    else:
        text = ", then ".join(clauses[:-1]) + " and " + clauses[-1]
    return text[0].upper() + text[1:] + "."


def gen_synthetic_world(seed: int, n_viewpoints: int, branching: int = 3, n_episodes: int = 50,
                        scan: str | None = None) -> SyntheticWorld:
    """Pure function of its arguments. Goals sit more than 3 m (geodesic) from the start
    whenever the graph allows it."""
    if n_viewpoints < 2:
        raise InvalidConfig("n_viewpoints must be >= 2")
    if n_viewpoints > len(VOCABULARY):
        raise InvalidConfig(f"n_viewpoints must be <= {len(VOCABULARY)} (landmark vocabulary size)")
    if branching < 1:
        raise InvalidConfig("branching must be >= 1")
    if n_episodes < 0:
        raise InvalidConfig("n_episodes must be >= 0")
    rng = random.Random(seed)
    scan = scan or f"synth{seed}"

    pts = _positions(rng, n_viewpoints)
    ids = [f"v{i:03d}" for i in range(n_viewpoints)]
    graph = NavGraph([Viewpoint(vid, p) for vid, p in zip(ids, pts)],
                     [(ids[i], ids[j]) for i, j in _edges(pts, branching)], scan=scan)

    landmark_of = dict(zip(ids, rng.sample(VOCABULARY, n_viewpoints)))
    captions = CaptionTable()
    for a, b in graph.edges():
        for src, dst in ((a, b), (b, a)):
            captions.add(scan, src, dst, rng.choice(CAPTION_TEMPLATES).format(lm=landmark_of[dst]))

    episodes = []
    for k in range(n_episodes):
        start = rng.choice(ids)
        far, near = [], []
        for goal in ids:
            if goal == start:
                continue
            path = graph.shortest_path(start, goal)
            if len(path) - 1 > MAX_HOPS:
                continue
            (far if graph.geodesic_distance(start, goal) > 3.0 else near).append(goal)
        goal = rng.choice(far or near)
        path = graph.shortest_path(start, goal)
        episodes.append(Episode(
            id=f"{scan}_ep{k:04d}", scan=scan,
            instruction=_instruction(rng, [landmark_of[v] for v in path[1:]]),
            gt_path=tuple(path),
        ))
    return SyntheticWorld(graph, captions, episodes, landmark_of)

import json
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from navcot.env import (
    Pose,
    Viewpoint,
    euclidean_distance,
    geodesic_distance,
    load_captions,
    load_episodes,
    load_graph,
    relative_pose,
    save_captions,
    save_episodes,
    save_graph,
)
from navcot.errors import DegeneratePositions, GraphInvariantError, ParseError, UnknownViewpoint
from navcot.synthetic import gen_synthetic_world

from oracles import all_simple_path_min, norm, random_graph, trig_relative_pose


def _write(tmp_path, obj, name="g.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return p


def test_load_minimal_graph(tmp_path):
    p = _write(tmp_path, {"viewpoints": [{"id": "a", "x": 0, "y": 0, "z": 0},
                                         {"id": "b", "x": 1, "y": 0, "z": 0}],
                          "edges": [["a", "b"]]})
    g = load_graph(p)
    assert g.edges() == [("a", "b")]
    assert g.scan == "g"


def test_dangling_edge_rejected(tmp_path):
    p = _write(tmp_path, {"viewpoints": [{"id": "a", "x": 0, "y": 0, "z": 0}], "edges": [["a", "zz"]]})
    with pytest.raises(GraphInvariantError):
        load_graph(p)


def test_disconnected_graph_rejected(tmp_path):
    vps = [{"id": c, "x": i, "y": 0, "z": 0} for i, c in enumerate("abcd")]
    p = _write(tmp_path, {"viewpoints": vps, "edges": [["a", "b"], ["c", "d"]]})
    with pytest.raises(GraphInvariantError, match="not connected"):
        load_graph(p)


@pytest.mark.parametrize("bad", ["{", '{"viewpoints": 3}', '{"viewpoints": [{"id": "a"}], "edges": []}'])
def test_malformed_graph_file(tmp_path, bad):
    p = tmp_path / "bad.json"
    p.write_text(bad)
    with pytest.raises(ParseError):
        load_graph(p)


def test_self_loop_and_nonfinite_rejected(tmp_path):
    with pytest.raises(GraphInvariantError):
        load_graph(_write(tmp_path, {"viewpoints": [{"id": "a", "x": 0, "y": 0, "z": 0}],
                                     "edges": [["a", "a"]]}))
    with pytest.raises(GraphInvariantError):
        Viewpoint("a", (0.0, math.nan, 0.0))


def test_synthetic_edge_weights_are_recomputed(tmp_path):
    world = gen_synthetic_world(3, 10, 3, 5)
    save_graph(world.graph, tmp_path / "w.json")
    raw = json.loads((tmp_path / "w.json").read_text())
    pos = {v["id"]: (v["x"], v["y"], v["z"]) for v in raw["viewpoints"]}
    g = load_graph(tmp_path / "w.json")
    for a, b in raw["edges"]:
        assert g.edge_weight(a, b) == pytest.approx(norm(pos[a], pos[b]), abs=1e-12)


def test_euclidean_examples():
    a = Viewpoint("a", (0, 0, 0))
    assert euclidean_distance(a, a) == 0
    assert euclidean_distance(a, Viewpoint("b", (3, 4, 0))) == 5


@given(st.tuples(*[st.floats(-1e3, 1e3)] * 3), st.tuples(*[st.floats(-1e3, 1e3)] * 3))
def test_euclidean_matches_component_squares(p, q):
    a, b = Viewpoint("a", p), Viewpoint("b", q)
    expected = math.sqrt(sum((x - y) ** 2 for x, y in zip(p, q)))
    assert euclidean_distance(a, b) == pytest.approx(expected, rel=1e-12, abs=1e-9)
    assert euclidean_distance(a, b) == euclidean_distance(b, a)


def test_geodesic_examples(line_graph):
    assert geodesic_distance(line_graph, "A", "A") == 0
    assert geodesic_distance(line_graph, "A", "C") == 5
    assert line_graph.shortest_path("A", "C") == ["A", "B", "C"]
    with pytest.raises(UnknownViewpoint):
        geodesic_distance(line_graph, "A", "nope")


def test_geodesic_matches_simple_path_enumeration():
    rng = random.Random(12)
    for trial in range(25):
        g = random_graph(rng, 12, extra_edges=6)
        ids = g.ids
        for _ in range(6):
            a, b = rng.choice(ids), rng.choice(ids)
            assert g.geodesic_distance(a, b) == pytest.approx(all_simple_path_min(g, a, b), abs=1e-9)


def test_geodesic_metric_properties():
    rng = random.Random(5)
    g = random_graph(rng, 10, extra_edges=5)
    ids = g.ids
    for a in ids:
        assert g.geodesic_distance(a, a) == 0
        for b in ids:
            d_ab = g.geodesic_distance(a, b)
            assert d_ab == pytest.approx(g.geodesic_distance(b, a), abs=1e-12)
            # edges are Euclidean-weighted, so the straight line is a lower bound
            assert d_ab >= euclidean_distance(g.viewpoint(a), g.viewpoint(b)) - 1e-9
            for c in ids:
                assert d_ab <= g.geodesic_distance(a, c) + g.geodesic_distance(c, b) + 1e-9


def test_geodesic_bounded_by_explicit_path():
    rng = random.Random(8)
    g = random_graph(rng, 9, extra_edges=4)
    from oracles import random_walk
    for _ in range(50):
        walk = random_walk(g, rng, rng.choice(g.ids), rng.randint(1, 7))
        assert g.geodesic_distance(walk[0], walk[-1]) <= g.path_length(walk) + 1e-9


def test_relative_pose_examples():
    here = Viewpoint("a", (0, 0, 0))
    ahead = Viewpoint("b", (0, 5, 0))
    assert relative_pose(here, Pose(0, 0), ahead) == (0.0, 0.0)
    assert relative_pose(here, Pose(0, 0), Viewpoint("r", (5, 0, 0)))[0] == pytest.approx(90)
    assert relative_pose(here, Pose(0, 0), Viewpoint("l", (-5, 0, 0)))[0] == pytest.approx(-90)
    assert relative_pose(here, Pose(0, 0), Viewpoint("back", (0, -5, 0)))[0] == 180.0
    with pytest.raises(DegeneratePositions):
        relative_pose(here, Pose(), Viewpoint("same", (0, 0, 0)))


def test_relative_pose_matches_trig_oracle():
    rng = random.Random(99)
    for _ in range(2000):
        src = tuple(rng.uniform(-10, 10) for _ in range(3))
        dst = tuple(rng.uniform(-10, 10) for _ in range(3))
        heading = rng.uniform(0, 360)
        dpsi, dtheta = relative_pose(Viewpoint("s", src), Pose(heading, 0), Viewpoint("d", dst))
        o_psi, o_theta = trig_relative_pose(src, heading, dst)
        assert -180 < dpsi <= 180
        assert dpsi == pytest.approx(o_psi, abs=1e-7)
        assert dtheta == pytest.approx(o_theta, abs=1e-7)


def test_episode_and_caption_round_trip(tmp_path, world):
    save_episodes(world.episodes, tmp_path / "e.jsonl")
    assert load_episodes(tmp_path / "e.jsonl") == world.episodes
    save_captions(world.captions, tmp_path / "c.jsonl")
    assert load_captions(tmp_path / "c.jsonl").rows() == world.captions.rows()


def test_episode_optional_heading(tmp_path):
    p = tmp_path / "e.jsonl"
    p.write_text('{"id": "e", "scan": "s", "instruction": "go", "gt_path": ["a"], "heading": 90}\n'
                 '{"id": "f", "scan": "s", "instruction": "go", "gt_path": ["a"]}\n')
    e, f = load_episodes(p)
    assert e.heading == 90 and f.heading == 0


def test_empty_gt_path_rejected(tmp_path):
    p = tmp_path / "e.jsonl"
    p.write_text('{"id": "e", "scan": "s", "instruction": "go", "gt_path": []}\n')
    with pytest.raises(ParseError):
        load_episodes(p)


# --- synthetic worlds ------------------------------------------------------------

def _dump(world, d):
    d.mkdir()
    save_graph(world.graph, d / "g.json")
    save_captions(world.captions, d / "c.jsonl")
    save_episodes(world.episodes, d / "e.jsonl")
    return [(d / n).read_bytes() for n in ("g.json", "c.jsonl", "e.jsonl")]


def test_synthetic_world_deterministic(tmp_path):
    a = _dump(gen_synthetic_world(1, 12, 3, 20), tmp_path / "a")
    b = _dump(gen_synthetic_world(1, 12, 3, 20), tmp_path / "b")
    assert a == b
    assert a != _dump(gen_synthetic_world(2, 12, 3, 20), tmp_path / "c")


def test_two_viewpoint_world_has_one_step_episodes():
    world = gen_synthetic_world(4, 2, 3, 10)
    assert all(len(ep.gt_path) == 2 for ep in world.episodes)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 25), st.integers(1, 5))
def test_synthetic_world_invariants(seed, n, branching):
    world = gen_synthetic_world(seed, n, branching, 8)
    g = world.graph
    for ep in world.episodes:
        g.validate_path(ep.gt_path)
        assert len(set(ep.gt_path)) == len(ep.gt_path)
        path_captions = " ".join(world.captions.get(g.scan, a, b) for a, b in zip(ep.gt_path, ep.gt_path[1:]))
        mentioned = [lm for lm in world.planted_landmarks(ep) if lm in ep.instruction.lower()]
        assert mentioned and all(lm in path_captions for lm in mentioned)
        positions = [ep.instruction.lower().index(lm) for lm in world.planted_landmarks(ep)]
        assert positions == sorted(positions)
    for a, b in g.edges():
        assert (g.scan, a, b) in world.captions and (g.scan, b, a) in world.captions

import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from navcot.env import Episode
from navcot.errors import EmptyLandmarks, InvalidGtAction, MalformedLandmarks, ProviderGap
from navcot.gt_labels import (
    NO_LANDMARK_SENTINEL,
    ExactMatchSimilarity,
    HttpSimilarity,
    LabelStats,
    LandmarkCache,
    LandmarkList,
    SimilarityRow,
    TableSimilarity,
    build_cot_label,
    build_landmark_prompt,
    check_labels,
    label_dataset,
    load_labels,
    parse_landmark_list,
    save_labels,
    save_similarity_table,
    select_imagination,
)
from navcot.http import EndpointConfig, JsonEndpoint, http_extractor
from navcot.prompting import parse_cot

from conftest import FIXTURES
from oracles import linear_argmax


def test_landmark_prompt_golden():
    prompt = build_landmark_prompt("Walk along the rug past the statue on the wooden table.")
    assert prompt == (FIXTURES / "landmark_prompt.txt").read_text()
    assert "1.rug;\n2.statue;\n3.wooden table." in prompt
    assert build_landmark_prompt("Go.").endswith("Instruction: Go.\nLandmarks:")
    with pytest.raises(ValueError):
        build_landmark_prompt("  ")


@pytest.mark.parametrize("text, items", [
    ("1.rug; 2.statue; 3.wooden table.", ("rug", "statue", "wooden table")),
    ("", ()),
    ("1.door\n2.Door", ("door",)),
    ("Landmarks:\n1. Rug;\n2. statue;\n3. wooden  table.", ("rug", "statue", "wooden table")),
    ("1) hallway\n2) kitchen", ("hallway", "kitchen")),
])
def test_parse_landmark_list(text, items):
    assert parse_landmark_list(text).items == items


def test_parse_landmark_list_malformed():
    with pytest.raises(MalformedLandmarks):
        parse_landmark_list("rug, statue")


def test_select_imagination_examples():
    lms = LandmarkList(("a", "b", "c"))
    assert select_imagination(lms, SimilarityRow("e", 0, (0.1, 0.9, 0.2))) == (1, "b")
    assert select_imagination(lms, SimilarityRow("e", 0, (0.5, 0.5, 0.5))) == (0, "a")
    assert select_imagination(lms, SimilarityRow("e", 0, (0.1, 0.7, 0.7))) == (1, "b")
    with pytest.raises(EmptyLandmarks):
        select_imagination(LandmarkList(()), SimilarityRow("e", 0, ()))


def test_select_imagination_matches_linear_scan():
    rng = random.Random(11)
    for _ in range(2000):
        m = rng.randint(1, 8)
        scores = tuple(rng.choice([0.0, 0.5, 1.0, rng.random()]) for _ in range(m))
        lms = LandmarkList(tuple(f"l{i}" for i in range(m)))
        assert select_imagination(lms, SimilarityRow("e", 0, scores))[0] == linear_argmax(scores)


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=10))
def test_select_imagination_monotone_invariance(scores):
    lms = LandmarkList(tuple(f"l{i}" for i in range(len(scores))))
    k = select_imagination(lms, SimilarityRow("e", 0, tuple(scores)))[0]
    transformed = tuple(3.0 * s + 7.0 for s in scores)
    # strictly increasing maps keep the argmax (ties included) as long as they stay distinct in float
    if len(set(transformed)) == len(set(scores)):
        assert select_imagination(lms, SimilarityRow("e", 0, transformed))[0] == k


def test_build_cot_label():
    lb = build_cot_label("ep", 1, "open door", "C", ["A", "B", "C"])
    assert lb.rendered == "Imagination: open door. Filtered observation: C matches the imagination. Action: C."
    stop = build_cot_label("ep", 2, "wooden table", "A", ["A"])
    assert stop.rendered.endswith("Action: A.")
    with pytest.raises(InvalidGtAction):
        build_cot_label("ep", 1, "door", "D", ["A", "B", "C"])


def test_labels_match_planted_landmarks(world, labels):
    by_key = {(lb.episode, lb.t): lb for lb in labels}
    for ep in world.episodes:
        planted = world.planted_landmarks(ep)
        for t in range(len(ep.gt_path)):
            lb = by_key[(ep.id, t)]
            expected = planted[t] if t < len(planted) else planted[-1]
            assert lb.imagination == expected


def test_label_counts_and_strict_parse(world, labels):
    assert len(labels) == sum(len(ep.gt_path) for ep in world.episodes)
    check_labels(labels)
    for lb in labels:
        c = parse_cot(lb.rendered, {lb.gt_action}, strict=True)
        assert c.filtered == c.action == lb.gt_action
    stops = [lb for lb in labels if lb.gt_action == "A"]
    assert len(stops) == len(world.episodes)


def test_single_step_episode_gets_one_stop_label(world, graphs, landmarks):
    v = world.graph.ids[0]
    ep = Episode("solo", world.scan, "Stop here.", (v,))
    out = label_dataset([ep], graphs, world.captions, LandmarkCache({"solo": ["red door"]}), ExactMatchSimilarity())
    assert [(lb.t, lb.gt_action, lb.imagination) for lb in out] == [(0, "A", "red door")]


def test_zero_landmarks_use_sentinel(world, graphs):
    ep = world.episodes[0]
    stats = LabelStats()
    out = label_dataset([ep], graphs, world.captions, LandmarkCache({ep.id: []}), ExactMatchSimilarity(),
                        stats=stats)
    assert {lb.imagination for lb in out} == {NO_LANDMARK_SENTINEL}
    assert stats.zero_landmark_episodes == [ep.id]


def test_table_provider_gap(tmp_path, world, graphs, landmarks):
    ep = world.episodes[0]
    rows = [SimilarityRow(ep.id, t, tuple(1.0 for _ in world.planted_landmarks(ep)))
            for t in range(1, len(ep.gt_path) - 1)]
    table = TableSimilarity(rows)
    with pytest.raises(ProviderGap, match=rf"episode={ep.id}, t=0"):
        label_dataset([ep], graphs, world.captions, landmarks, table)
    with pytest.raises(ProviderGap, match="missing.jsonl"):
        TableSimilarity.load(tmp_path / "missing.jsonl")


def test_table_provider_round_trip(tmp_path, world, graphs, landmarks, labels):
    exact = ExactMatchSimilarity()
    rows = []
    for ep in world.episodes:
        lms = landmarks.landmarks(ep)
        for t in range(len(ep.gt_path) - 1):
            cap = world.captions.get(world.scan, ep.gt_path[t], ep.gt_path[t + 1])
            rows.append(exact.row(ep, t, lms, cap))
    save_similarity_table(rows, tmp_path / "sim.jsonl")
    again = label_dataset(world.episodes, graphs, world.captions, landmarks,
                          TableSimilarity.load(tmp_path / "sim.jsonl"))
    assert again == labels


def test_labels_file_round_trip(tmp_path, labels):
    save_labels(labels, tmp_path / "l.jsonl")
    assert load_labels(tmp_path / "l.jsonl") == labels


def test_landmark_cache_calls_extractor_once(tmp_path, world):
    calls = []

    def extractor(prompt):
        calls.append(prompt)
        return "1.sofa; 2.lamp."

    cache = LandmarkCache(extractor=extractor)
    ep = world.episodes[0]
    assert cache.landmarks(ep).items == ("sofa", "lamp")
    assert cache.landmarks(ep).items == ("sofa", "lamp")
    assert len(calls) == 1 and cache.extraction_calls == 1
    cache.save(tmp_path / "lm.jsonl")
    reloaded = LandmarkCache.load(tmp_path / "lm.jsonl", extractor)
    assert reloaded.landmarks(ep).items == ("sofa", "lamp") and reloaded.extraction_calls == 0
    with pytest.raises(ProviderGap):
        LandmarkCache().landmarks(ep)


def test_http_extractor_and_similarity(mock_server, world):
    mock_server.reply = lambda body: "1.rug; 2.statue; 3.wooden table."
    endpoint = JsonEndpoint(EndpointConfig(url=mock_server.url, backoff_base=0.001))
    cache = LandmarkCache(extractor=http_extractor(endpoint))
    ep = world.episodes[0]
    assert cache.landmarks(ep).items == ("rug", "statue", "wooden table")
    sent = mock_server.requests[-1]["body"]
    assert sent["temperature"] == 0 and "Walk along the rug" in sent["messages"][0]["content"]

    mock_server.similarity = lambda body: {"scores": [0.1 * i for i in range(len(body["landmarks"]))]}
    sim_url = mock_server.url.replace("/chat/completions", "/similarity")
    provider = HttpSimilarity(JsonEndpoint(EndpointConfig(url=sim_url, backoff_base=0.001)))
    row = provider.row(ep, 0, cache.landmarks(ep), "a rug")
    assert row.scores == (0.0, 0.1, 0.2)
    mock_server.similarity = lambda body: {"scores": [1.0]}
    with pytest.raises(ProviderGap):
        provider.row(ep, 0, cache.landmarks(ep), "a rug")

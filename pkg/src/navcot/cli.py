"""Command line entry point: ``navcot {gen,label,export,run,eval}``."""

from __future__ import annotations

import argparse
import json
import logging
import subprocess
import sys
from pathlib import Path

from . import __version__
from .backends import make_backend
from .config import Config
from .dataset_export import ExportOptions, ExportReport, export_task, sample_augmentation, write_records
from .env import load_captions, load_episodes, load_graphs, read_jsonl, save_captions, save_episodes, save_graph
from .errors import InvalidConfig, NavCotError
from .gt_labels import (
    ExactMatchSimilarity,
    HttpSimilarity,
    LabelStats,
    LandmarkCache,
    TableSimilarity,
    check_labels,
    label_dataset,
    load_labels,
    save_labels,
)
from .http import EndpointConfig, JsonEndpoint, http_extractor
from .metrics import evaluate
from .runtime import EpisodeFailure, RunConfig, load_traces, run_batch, save_traces
from .synthetic import gen_synthetic_world

log = logging.getLogger("navcot")


def version_string() -> str:
    try:
        sha = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        sha = ""
    return f"{__version__}+g{sha}" if sha else __version__


def _config(args) -> Config:
    cfg = Config.load(args.config) if args.config else Config()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.paths.output_dir = str(Path(args.out).resolve())
    return cfg


def _world(cfg: Config):
    graphs = load_graphs(cfg.path("graphs"))
    captions = load_captions(cfg.path("captions"))
    episodes = load_episodes(cfg.path("episodes"))
    return graphs, captions, episodes


def _endpoint_config(cfg: Config, temperature: float = 0.0) -> EndpointConfig:
    b = cfg.backend
    if not b.url:
        raise InvalidConfig("backend.url is not set")
    return EndpointConfig(url=b.url, model=b.model, timeout=b.timeout, max_retries=b.max_retries,
                          backoff_base=b.backoff_base, requests_per_second=b.requests_per_second,
                          temperature=temperature, max_tokens=b.max_tokens)


def cmd_gen(args) -> int:
    out = Path(args.out or ".")
    world = gen_synthetic_world(args.seed if args.seed is not None else 1, args.n_viewpoints,
                                args.branching, args.episodes)
    (out / "graphs").mkdir(parents=True, exist_ok=True)
    save_graph(world.graph, out / "graphs" / f"{world.scan}.json")
    save_captions(world.captions, out / "captions.jsonl")
    save_episodes(world.episodes, out / "episodes.jsonl")
    LandmarkCache({ep.id: world.planted_landmarks(ep) for ep in world.episodes}).save(out / "landmarks.jsonl")
    cfg = Config(seed=args.seed or 0)
    cfg.paths.graphs = "graphs"
    cfg.paths.captions = "captions.jsonl"
    cfg.paths.episodes = "episodes.jsonl"
    cfg.paths.landmarks = "landmarks.jsonl"
    cfg.paths.labels = "out/labels.jsonl"
    cfg.paths.output_dir = "out"
    cfg.label.similarity = "exact"
    cfg.save(out / "config.json")
    print(f"wrote {len(world.graph)} viewpoints, {len(world.episodes)} episodes to {out}")
    return 0


def cmd_label(args) -> int:
    cfg = _config(args)
    if args.similarity:
        cfg.label.similarity = args.similarity
    graphs, captions, episodes = _world(cfg)
    lm_path = cfg.path("landmarks", required=False, must_exist=False)

    extractor = None
    if cfg.label.extract == "http":
        extractor = http_extractor(JsonEndpoint(_endpoint_config(cfg)))
    source = LandmarkCache.load(lm_path, extractor) if lm_path and lm_path.exists() \
        else LandmarkCache(extractor=extractor)

    kind = cfg.label.similarity
    if kind == "table":
        similarity = TableSimilarity.load(cfg.path("similarity", must_exist=False))
    elif kind == "exact":
        similarity = ExactMatchSimilarity()
    elif kind == "http":
        if not cfg.label.similarity_url:
            raise InvalidConfig("label.similarity_url is not set")
        similarity = HttpSimilarity(JsonEndpoint(EndpointConfig(url=cfg.label.similarity_url)))
    else:
        raise InvalidConfig(f"unknown similarity provider {kind!r}")

    stats = LabelStats()
    labels = label_dataset(episodes, graphs, captions, source, similarity, stats=stats)
    check_labels(labels)
    out = cfg.path("labels", required=False, must_exist=False) or cfg.output_dir / "labels.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_labels(labels, out)
    if source.extraction_calls and lm_path:
        source.save(lm_path)
    print(f"{stats.summary()} extraction_calls={source.extraction_calls} -> {out}")
    return 0


def cmd_export(args) -> int:
    cfg = _config(args)
    for name in ("task", "aug_n", "aug_seed"):
        if getattr(args, name) is not None:
            setattr(cfg.export, name, getattr(args, name))
    graphs, captions, episodes = _world(cfg)
    labels = load_labels(cfg.path("labels"))
    if cfg.export.aug_n is not None:
        aug_path = cfg.path("aug_episodes", required=False)
        pool = load_episodes(aug_path) if aug_path else episodes
        sample = sample_augmentation(pool, cfg.export.aug_n, cfg.export.aug_seed)
        episodes = sample if aug_path is None else episodes + sample
    opts = ExportOptions(history_mode=cfg.export.history_mode, include_example=cfg.export.include_example,
                         char_budget=cfg.export.char_budget)
    report = ExportReport()
    task = cfg.export.task.upper()
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    out = cfg.output_dir / f"dataset_{task.lower()}.jsonl"
    n = write_records(export_task(task, labels, episodes, graphs, captions, opts, report), out)
    print(f"task={task} records={n} truncated={report.truncated} "
          f"over_budget={len(report.over_budget)} -> {out}")
    return 0


def _load_script(path: Path):
    rows = list(read_jsonl(path))
    if rows and all("episode" in r and "t" in r for r in rows):
        return {(str(r["episode"]), int(r["t"])): r["completion"] for r in rows}
    return [r["completion"] for r in rows]


def cmd_run(args) -> int:
    cfg = _config(args)
    r = cfg.run
    for flag, attr in (("max_steps", "max_steps"), ("history", "history_mode"),
                       ("fallback", "fallback_policy"), ("parallelism", "parallelism")):
        if getattr(args, flag) is not None:
            setattr(r, attr, getattr(args, flag))
    if args.backend:
        cfg.backend.kind = args.backend
    run_cfg = RunConfig(max_steps=r.max_steps, history_mode=r.history_mode, temperature=r.temperature,
                        seed=cfg.seed, fallback_policy=r.fallback_policy)
    graphs, captions, episodes = _world(cfg)

    kind = cfg.backend.kind
    backend = make_backend(
        kind,
        labels=load_labels(cfg.path("labels")) if kind == "oracle" else None,
        seed=cfg.seed,
        script=_load_script(cfg.path("script")) if kind == "scripted" else None,
        endpoint=_endpoint_config(cfg, r.temperature) if kind == "http" else None,
    )
    backend.health_check()

    results = run_batch(episodes, graphs, captions, backend, run_cfg, parallelism=r.parallelism)
    meta = {"config_hash": cfg.hash(), "backend": backend.descriptor(), "version": version_string(),
            "parse_policy": "lenient parse, 1 retry on malformed output, then fallback"}
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    out = cfg.output_dir / "traces.jsonl"
    save_traces(results, out, meta)
    failures = [x for x in results if isinstance(x, EpisodeFailure)]
    for f in failures:
        print(f"error: episode {f.episode}: {f.error_type}: {f.message}", file=sys.stderr)
    print(f"episodes={len(results)} failed={len(failures)} -> {out}")
    return 1 if failures else 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    traces = Path(args.traces) if args.traces else cfg.output_dir / "traces.jsonl"
    results = load_traces(traces)
    graphs, _, episodes = _world(cfg)
    report = evaluate(results, episodes, graphs)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    (cfg.output_dir / "report.json").write_text(json.dumps(report.to_json(), indent=2) + "\n", encoding="utf-8")
    text = report.to_text()
    (cfg.output_dir / "report.txt").write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="navcot", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic world")
    g.add_argument("--n-viewpoints", type=int, default=12)
    g.add_argument("--branching", type=int, default=3)
    g.add_argument("--episodes", type=int, default=50)
    g.set_defaults(func=cmd_gen)

    lb = sub.add_parser("label", parents=[common], help="build ground-truth CoT labels")
    lb.add_argument("--similarity", choices=("table", "exact", "http"))
    lb.set_defaults(func=cmd_label)

    ex = sub.add_parser("export", parents=[common], help="export an instruction-following dataset")
    ex.add_argument("--task", choices=("fi", "vif", "ap", "cot"))
    ex.add_argument("--aug-n", type=int)
    ex.add_argument("--aug-seed", type=int)
    ex.set_defaults(func=cmd_export)

    rn = sub.add_parser("run", parents=[common], help="run episodes against a reasoner backend")
    rn.add_argument("--backend", choices=("http", "oracle", "scripted", "random"))
    rn.add_argument("--parallelism", type=int)
    rn.add_argument("--max-steps", type=int)
    rn.add_argument("--history", choices=("none", "all", "last"))
    rn.add_argument("--fallback", choices=("first_nonstop", "stop"))
    rn.set_defaults(func=cmd_run)

    ev = sub.add_parser("eval", parents=[common], help="score traces")
    ev.add_argument("--traces")
    ev.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (NavCotError, FileNotFoundError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command line front end.

Subcommands cover the whole workflow: generate a synthetic corpus,
prepare features and segments, simulate annotation runs, evaluate a
checkpoint, serve the annotation API, and summarize finished runs.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .embeddings import save_embedding, write_manifest
from .evaluation import ErReport, export_metrics_csv
from .features import compute_logmel, load_audio, save_logmel
from .model import load_model
from .orchestrator import (
    EXPERIMENTS,
    ProjectConfig,
    PreparedCorpus,
    embed_corpus,
    evaluate_model,
    export_runs_csv,
    export_summary_csv,
    export_trace_csv,
    run_experiment_suite,
    segment_corpus,
    summarize_rows,
    _system_of,
)
from .segmentation import export_segment_table
from .synth import (
    dense_preset,
    generate,
    load_corpus_manifest,
    rare_preset,
    save_corpus,
)

log = logging.getLogger(__name__)

PRESETS = {"rare": rare_preset, "dense": dense_preset}


def _add_generate(sub):
    p = sub.add_parser("generate", help="render a synthetic corpus to WAV files")
    p.add_argument("--preset", choices=sorted(PRESETS), default="rare")
    p.add_argument("--recordings", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)


def cmd_generate(args) -> int:
    make = PRESETS[args.preset]
    spec = make(seed=args.seed) if args.recordings is None else \
        make(n_recordings=args.recordings, seed=args.seed)
    clips, truth = generate(spec)
    save_corpus(clips, truth, args.out)
    log.info("wrote %d recordings (%.1f min, positive fraction %.2f%%) to %s",
             len(clips), truth.total_duration_s() / 60,
             100 * truth.positive_fraction(), args.out)
    return 0


def _add_prepare(sub):
    p = sub.add_parser("prepare", help="compute features, embeddings, segments")
    p.add_argument("--corpus", required=True, help="directory with corpus.json")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0, help="embedding projection seed")
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--context", type=int, default=2)
    p.add_argument("--segmentation", choices=("variable", "fixed"),
                   default="variable")
    p.add_argument("--fixed-length", type=float, default=2.0)
    p.set_defaults(func=cmd_prepare)


def _load_clips(corpus_dir: str):
    manifest = load_corpus_manifest(Path(corpus_dir) / "corpus.json")
    clips = [load_audio(Path(corpus_dir) / f"{rid}.wav", recording_id=rid)
             for rid in sorted(manifest.durations)]
    return clips, manifest


def _prepare_config(args, class_names) -> ProjectConfig:
    return ProjectConfig(
        class_names=tuple(class_names), seed=0,
        segmentation=args.segmentation, fixed_len_s=args.fixed_length,
        embedding_seed=args.seed, embedding_dim=args.dim,
        embedding_context=args.context)


def cmd_prepare(args) -> int:
    clips, manifest = _load_clips(args.corpus)
    config = _prepare_config(args, manifest.class_names)
    out = Path(args.out)
    (out / "features").mkdir(parents=True, exist_ok=True)
    (out / "embeddings").mkdir(parents=True, exist_ok=True)

    files = {}
    for clip in clips:
        spec = compute_logmel(clip, config.feature)
        save_logmel(spec, out / "features" / f"{clip.recording_id}.lmel")
    embeddings = embed_corpus(clips, config)
    for rid in sorted(embeddings):
        rel = f"{rid}.emb"
        save_embedding(embeddings[rid], out / "embeddings" / rel)
        files[rid] = rel
    write_manifest(out / "embeddings" / "manifest.json",
                   dim=config.embedding_dim, files=files)

    segments = segment_corpus(embeddings, config)
    (out / "segments.csv").write_text(export_segment_table(segments))
    log.info("prepared %d recordings into %d segments", len(clips), len(segments))
    print(len(segments))
    return 0


def _add_simulate(sub):
    p = sub.add_parser("simulate", help="run annotation simulations per config")
    p.add_argument("--config", required=True, help="JSON run description")
    p.add_argument("--seed", type=int, default=None,
                   help="replace the config's seed list with this one seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)


def read_run_config(path: str) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    if "systems" not in doc and "experiment" in doc:
        doc["systems"] = list(EXPERIMENTS[doc["experiment"]])
    for key in ("corpus", "systems", "seeds"):
        if key not in doc:
            raise ValueError(f"run config is missing {key!r}")
    return doc


def _corpora_from_config(doc: dict):
    import dataclasses

    c = doc["corpus"]
    make = PRESETS[c.get("preset", "rare")]
    spec = make(n_recordings=c.get("n_recordings", 60), seed=c.get("seed", 0))
    test_spec = make(n_recordings=c.get("test_n_recordings", 20),
                     seed=c.get("test_seed", c.get("seed", 0) + 7000))
    if "recording_len_s" in c:
        spec = dataclasses.replace(spec, recording_len_s=c["recording_len_s"])
        test_spec = dataclasses.replace(test_spec,
                                        recording_len_s=c["recording_len_s"])
    clips, truth = generate(spec)
    test_clips, test_truth = generate(test_spec)
    return clips, truth, test_clips, test_truth


def _overrides_from_config(doc: dict) -> dict:
    from .model import TrainingConfig

    overrides = dict(doc.get("overrides", {}))
    if "checkpoints" in overrides:
        overrides["checkpoints"] = tuple(overrides["checkpoints"])
    if "training" in overrides:
        overrides["training"] = TrainingConfig(**overrides["training"])
    return overrides


def cmd_simulate(args) -> int:
    doc = read_run_config(args.config)
    seeds = [args.seed] if args.seed is not None else list(doc["seeds"])
    clips, truth, test_clips, test_truth = _corpora_from_config(doc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    runs, rows = run_experiment_suite(
        doc["systems"], seeds, clips, truth, test_clips, test_truth,
        class_names=truth.class_names, **_overrides_from_config(doc))

    (out / "metrics.csv").write_text(export_metrics_csv(rows))
    (out / "runs.csv").write_text(export_runs_csv(runs))
    (out / "summary.csv").write_text(export_summary_csv(summarize_rows(rows)))
    for run in runs:
        name = f"trace_sys{_system_of(run.config)}_seed{run.config.seed}.csv"
        (out / name).write_text(export_trace_csv(run.trace_rows))
    log.info("wrote %d runs to %s", len(runs), out)
    return 0


def _add_evaluate(sub):
    p = sub.add_parser("evaluate", help="score a model checkpoint on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--seed", type=int, default=0, help="embedding projection seed")
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--context", type=int, default=2)
    p.add_argument("--out", default=None, help="write the report here, else stdout")
    p.set_defaults(func=cmd_evaluate)


def cmd_evaluate(args) -> int:
    clips, manifest = _load_clips(args.corpus)
    model = load_model(args.model)
    config = ProjectConfig(
        class_names=tuple(manifest.class_names), seed=0,
        embedding_seed=args.seed, embedding_dim=args.dim,
        embedding_context=args.context)
    embeddings = embed_corpus(clips, config)
    prepared = PreparedCorpus(
        embeddings=embeddings, segments=[],
        durations={c.recording_id: c.duration_s for c in clips})
    report = evaluate_model(model, prepared, manifest)
    text = export_metrics_csv([{"system": 0, "seed": args.seed,
                                "budget_fraction": 1.0, "report": report}])
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _add_serve(sub):
    p = sub.add_parser("serve", help="run the annotation HTTP service")
    p.add_argument("--root", required=True, help="project storage directory")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)


def cmd_serve(args) -> int:
    import uvicorn

    from .service import build_app

    app = build_app(Path(args.root))
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def _add_report(sub):
    p = sub.add_parser("report", help="summarize a finished simulation directory")
    p.add_argument("--runs", required=True, help="directory with metrics.csv")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)


def cmd_report(args) -> int:
    path = Path(args.runs) / "metrics.csv"
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.append({
                "system": int(r["system"]), "seed": int(r["seed"]),
                "budget_fraction": float(r["budget_fraction"]),
                "report": ErReport(s=int(r["S"]), d=int(r["D"]),
                                   i=int(r["I"]), n=int(r["N"])),
            })
    text = export_summary_csv(summarize_rows(rows))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sedal",
        description="active learning toolkit for sound event detection")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_generate(sub)
    _add_prepare(sub)
    _add_simulate(sub)
    _add_evaluate(sub)
    _add_serve(sub)
    _add_report(sub)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

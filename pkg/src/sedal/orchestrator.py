"""Iterative annotate-train-select loop and the seven benchmark systems.

The loop alternates between picking a batch of candidate segments,
asking the (simulated) annotator for labels, and, whenever the labeled
duration crosses the next budget checkpoint, training a fresh model and
scoring it on a held-out corpus.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .embeddings import EmbeddingSequence, RandomProjectionProvider, embed
from .evaluation import ErReport, build_roll, error_rate
from .features import AudioClip, FeatureConfig, compute_logmel
from .model import (
    TrainingConfig,
    TrainingExample,
    attention_pool,
    detect_events,
    forward,
    train_ensemble,
)
from .segmentation import CandidateSegment, make_segment_id, segment_recording
from .selection import SelectionState, compute_predictions, select_batch
from .synth import GroundTruth, simulate_annotation

log = logging.getLogger(__name__)

STRATEGIES = ("random", "mfft", "uncertainty")
SEGMENTATIONS = ("variable", "fixed")
ANNOTATION_UNITS = ("segment", "recording")
LABEL_TYPES = ("weak", "strong")
TRAINING_INPUTS = ("recording-context", "segments-only")

DEFAULT_CHECKPOINTS = tuple(k / 100 for k in range(1, 11)) + (0.2, 1.0)


@dataclass(frozen=True)
class ProjectConfig:
    class_names: tuple
    seed: int
    strategy: str = "mfft"
    segmentation: str = "variable"
    fixed_len_s: float = 2.0
    annotation_unit: str = "segment"
    label_type: str = "weak"
    training_input: str = "recording-context"
    batch_fraction: float = 0.005
    checkpoints: tuple = DEFAULT_CHECKPOINTS
    feature: FeatureConfig = FeatureConfig()
    embedding_seed: int = 0  # fixed extractor, deliberately not the run seed
    embedding_dim: int = 128
    embedding_context: int = 2
    training: TrainingConfig = field(default_factory=TrainingConfig)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.segmentation not in SEGMENTATIONS:
            raise ValueError(f"unknown segmentation {self.segmentation!r}")
        if self.annotation_unit not in ANNOTATION_UNITS:
            raise ValueError(f"unknown annotation unit {self.annotation_unit!r}")
        if self.label_type not in LABEL_TYPES:
            raise ValueError(f"unknown label type {self.label_type!r}")
        if self.training_input not in TRAINING_INPUTS:
            raise ValueError(f"unknown training input {self.training_input!r}")
        if not self.class_names:
            raise ValueError("class list is empty")
        if not self.checkpoints:
            raise ValueError("no checkpoints")
        cps = list(self.checkpoints)
        if cps != sorted(set(cps)) or cps[0] <= 0.0 or cps[-1] > 1.0:
            raise ValueError("checkpoints must be ascending within (0, 1]")
        if not 0.0 < self.batch_fraction <= 1.0:
            raise ValueError("batch fraction must be within (0, 1]")


# the seven benchmark systems: (segmentation unit, label type, strategy,
# training input); "recording" as the unit implies one candidate per file
SYSTEM_TABLE = {
    1: ("variable", "weak", "random", "recording-context"),
    2: ("variable", "weak", "random", "segments-only"),
    3: ("variable", "strong", "random", "recording-context"),
    4: ("recording", "strong", "random", "recording-context"),
    5: ("variable", "weak", "mfft", "recording-context"),
    6: ("variable", "weak", "uncertainty", "recording-context"),
    7: ("fixed", "weak", "mfft", "recording-context"),
}

EXPERIMENTS = {
    "A1": (1, 2),
    "A2": (3, 4),
    "B": (1, 5, 6),
    "C": (5, 7),
}


def config_from_doc(doc: dict) -> ProjectConfig:
    """Build a config from a parsed JSON document, rejecting unknown keys."""
    fields = dict(doc)
    known = {f.name for f in dataclasses.fields(ProjectConfig)}
    unknown = set(fields) - known
    if unknown:
        raise ValueError(f"unknown config keys {sorted(unknown)}")
    if "class_names" not in fields:
        raise ValueError("config needs class_names")
    fields["class_names"] = tuple(fields["class_names"])
    fields.setdefault("seed", 0)
    if "checkpoints" in fields:
        fields["checkpoints"] = tuple(fields["checkpoints"])
    if isinstance(fields.get("training"), dict):
        fields["training"] = TrainingConfig(**fields["training"])
    if isinstance(fields.get("feature"), dict):
        fields["feature"] = FeatureConfig(**fields["feature"])
    return ProjectConfig(**fields)


def config_to_doc(config: ProjectConfig) -> dict:
    doc = dataclasses.asdict(config)
    doc["class_names"] = list(config.class_names)
    doc["checkpoints"] = list(config.checkpoints)
    return doc


def system_preset(system: int, class_names, seed: int, **overrides) -> ProjectConfig:
    if system not in SYSTEM_TABLE:
        raise ValueError(f"unknown system {system}")
    unit, label_type, strategy, training_input = SYSTEM_TABLE[system]
    fields = dict(
        class_names=tuple(class_names),
        seed=seed,
        strategy=strategy,
        segmentation="fixed" if unit == "fixed" else "variable",
        annotation_unit="recording" if unit == "recording" else "segment",
        label_type=label_type,
        training_input=training_input,
    )
    fields.update(overrides)
    return ProjectConfig(**fields)


@dataclass
class PreparedCorpus:
    embeddings: dict
    segments: list
    durations: dict

    def total_duration_s(self) -> float:
        return sum(s.duration_s for s in self.segments)


def embed_corpus(clips: list[AudioClip], config: ProjectConfig) -> dict:
    """Log-mel features plus the frozen random-projection embedding."""
    specs = [compute_logmel(clip, config.feature) for clip in clips]
    provider = RandomProjectionProvider(seed=config.embedding_seed,
                                        dim=config.embedding_dim,
                                        context=config.embedding_context)
    provider.fit(specs)
    return {spec.recording_id: embed(spec, provider) for spec in specs}


def whole_recording_segment(emb: EmbeddingSequence) -> CandidateSegment:
    t = len(emb.values)
    return CandidateSegment(
        segment_id=make_segment_id(emb.recording_id, 0, t),
        recording_id=emb.recording_id, start_frame=0, end_frame=t,
        hop_s=emb.hop_s, mean_embedding=emb.values.mean(axis=0))


def segment_corpus(embeddings: dict, config: ProjectConfig) -> list[CandidateSegment]:
    segments = []
    for rid in sorted(embeddings):
        emb = embeddings[rid]
        if config.annotation_unit == "recording":
            segments.append(whole_recording_segment(emb))
        else:
            segments.extend(segment_recording(emb, mode=config.segmentation,
                                              fixed_len_s=config.fixed_len_s))
    return segments


def prepare_corpus(clips: list[AudioClip], config: ProjectConfig) -> PreparedCorpus:
    embeddings = embed_corpus(clips, config)
    return PreparedCorpus(
        embeddings=embeddings,
        segments=segment_corpus(embeddings, config),
        durations={clip.recording_id: clip.duration_s for clip in clips})


def _frame_span(onset_s: float, offset_s: float, hop_s: float) -> tuple[int, int]:
    a = int(np.floor(onset_s / hop_s + 1e-9))
    b = int(np.ceil(offset_s / hop_s - 1e-9))
    return a, b


def activity_regions(events, start_frame: int, end_frame: int,
                     class_names, hop_s: float) -> list:
    """Maximal runs of constant class activity, as (start, end, target)."""
    index = {name: k for k, name in enumerate(class_names)}
    n = end_frame - start_frame
    act = np.zeros((n, len(class_names)))
    for ev in events:
        a, b = _frame_span(ev.onset_s, ev.offset_s, hop_s)
        a = max(a - start_frame, 0)
        b = min(b - start_frame, n)
        if b > a:
            act[a:b, index[ev.class_name]] = 1.0
    regions = []
    run_start = 0
    for t in range(1, n + 1):
        if t == n or not np.array_equal(act[t], act[run_start]):
            regions.append((start_frame + run_start, start_frame + t,
                            act[run_start].copy()))
            run_start = t
    return regions


def _target_vector(labels, class_names) -> np.ndarray:
    return np.array([1.0 if name in labels else 0.0 for name in class_names])


def build_training_examples(config: ProjectConfig,
                            corpus: PreparedCorpus,
                            state: SelectionState,
                            strong_events: dict) -> list[TrainingExample]:
    """Annotated segments to training examples, per the configured regime.

    recording-context keeps whole recordings with loss regions at the
    annotated spans; segments-only cuts each annotated span out into a
    free-standing example. A cut example carries one zero row on each
    side: context stacking clamps out-of-range offsets to the boundary
    row, so the guard rows make everything beyond the cut read as
    silence instead of a copy of the edge frame. Strong annotations
    become constant-activity runs so the frame-wise loss sees exact
    targets.
    """
    examples = []
    if config.training_input == "recording-context":
        by_recording = {}
        for sid in sorted(state.annotated):
            seg = state.segments[sid]
            by_recording.setdefault(seg.recording_id, []).append(sid)
        for rid in sorted(by_recording):
            emb = corpus.embeddings[rid]
            regions = []
            for sid in by_recording[rid]:
                seg = state.segments[sid]
                regions.extend(_segment_regions(config, state, strong_events, seg))
            examples.append(TrainingExample(recording_id=rid, emb=emb,
                                            regions=regions))
        return examples

    for sid in sorted(state.annotated):
        seg = state.segments[sid]
        emb = corpus.embeddings[seg.recording_id]
        guard = np.zeros((1, emb.values.shape[1]))
        cut = EmbeddingSequence(
            values=np.concatenate(
                [guard, emb.values[seg.start_frame:seg.end_frame], guard]),
            recording_id=sid, hop_s=emb.hop_s)
        shifted = [
            (a - seg.start_frame + 1, b - seg.start_frame + 1, tau)
            for a, b, tau in _segment_regions(config, state, strong_events, seg)
        ]
        examples.append(TrainingExample(recording_id=sid, emb=cut, regions=shifted))
    return examples


def _segment_regions(config, state, strong_events, seg):
    if config.label_type == "weak":
        tau = _target_vector(state.annotated[seg.segment_id], config.class_names)
        return [(seg.start_frame, seg.end_frame, tau)]
    return activity_regions(strong_events[seg.segment_id], seg.start_frame,
                            seg.end_frame, config.class_names, seg.hop_s)


def evaluate_model(model, corpus: PreparedCorpus,
                   truth: GroundTruth) -> ErReport:
    total = ErReport(0, 0, 0, 0)
    for rid in sorted(corpus.embeddings):
        duration = corpus.durations[rid]
        ref = build_roll(truth.events.get(rid, []), duration, list(model.class_names))
        hyp = build_roll(detect_events(model, corpus.embeddings[rid]), duration,
                         list(model.class_names))
        total = total + error_rate(ref, hyp)
    return total


def _merged_intervals(events) -> list:
    out = []
    for on, off in sorted((e.onset_s, e.offset_s) for e in events):
        if out and on <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], off))
        else:
            out.append((on, off))
    return out


def labeled_positive_fraction(state: SelectionState, truth: GroundTruth) -> float:
    """Share of annotated duration overlapping at least one true event."""
    merged = {rid: _merged_intervals(evs) for rid, evs in truth.events.items()}
    labeled = 0.0
    positive = 0.0
    for sid in state.annotated:
        seg = state.segments[sid]
        labeled += seg.duration_s
        for on, off in merged.get(seg.recording_id, []):
            positive += max(0.0, min(seg.end_s, off) - max(seg.start_s, on))
    return positive / labeled if labeled else 0.0


@dataclass
class CheckpointResult:
    budget_fraction: float
    labeled_duration_s: float
    labeled_fraction: float
    report: ErReport
    labeled_positive_fraction: float
    wall_time_s: float


@dataclass
class RunResult:
    config: ProjectConfig
    checkpoints: list
    trace_rows: list
    exhausted: bool


def export_trace_csv(rows) -> str:
    """Columns: iteration, pick_index, segment_id, strategy, J_value,
    distance_to_S; the value columns stay empty where undefined."""
    lines = ["iteration,pick_index,segment_id,strategy,J_value,distance_to_S"]
    for r in rows:
        j = "" if r["J_value"] is None else repr(r["J_value"])
        d = "" if r["distance_to_S"] is None else repr(r["distance_to_S"])
        lines.append(f"{r['iteration']},{r['pick_index']},{r['segment_id']},"
                     f"{r['strategy']},{j},{d}")
    return "\n".join(lines) + "\n"


def round_seed(seed: int, rounds: int) -> int:
    """Training round seed; fresh parameters every round, reproducibly."""
    return int(np.random.default_rng((seed, 101, rounds)).integers(2**63))


def _pooled_outputs(model, corpus: PreparedCorpus) -> dict:
    pooled = {}
    by_recording = {}
    for seg in corpus.segments:
        by_recording.setdefault(seg.recording_id, []).append(seg)
    for rid in sorted(by_recording):
        p, w = forward(model, corpus.embeddings[rid])
        for seg in by_recording[rid]:
            pooled[seg.segment_id] = attention_pool(p, w, seg.start_frame,
                                                    seg.end_frame)
    return pooled


def run_active_learning(config: ProjectConfig,
                        corpus: PreparedCorpus,
                        truth: GroundTruth,
                        test_corpus: PreparedCorpus,
                        test_truth: GroundTruth) -> RunResult:
    started = time.perf_counter()
    state = SelectionState.create(corpus.segments, seed=config.seed)
    total = state.total_duration_s()
    quota_s = config.batch_fraction * total

    strong_events = {}
    trace = []
    results = []
    remaining = list(config.checkpoints)
    model = None
    detections = {}  # per-recording events from the latest model
    pooled = None
    rounds = 0

    while remaining and state.unlabeled:
        predictions = None
        if config.strategy == "mfft" and state.annotated:
            predictions = compute_predictions(state, detections)
        batch = select_batch(config.strategy, state, quota_s,
                             predictions=predictions, pooled_outputs=pooled)
        for k, pick in enumerate(batch.picks):
            seg = state.segments[pick.segment_id]
            if config.label_type == "strong":
                events = simulate_annotation(seg, truth, mode="strong")
                strong_events[seg.segment_id] = events
                labels = frozenset(e.class_name for e in events)
            else:
                labels = simulate_annotation(seg, truth, mode="weak")
            state.mark_annotated(seg.segment_id, labels)
            trace.append({"iteration": state.iteration, "pick_index": k,
                          "segment_id": seg.segment_id,
                          "strategy": config.strategy,
                          "J_value": pick.j_value,
                          "distance_to_S": pick.distance_to_s})

        labeled = state.labeled_duration_s()
        fraction = labeled / total
        log.info("iteration %d: %d picks, labeled %.2f%%",
                 state.iteration, len(batch.picks), 100 * fraction)

        crossed = [cp for cp in remaining if fraction + 1e-9 >= cp]
        if not state.unlabeled:
            crossed = list(remaining)
        if not crossed:
            continue
        remaining = remaining[len(crossed):]

        examples = build_training_examples(config, corpus, state, strong_events)
        mode = config.label_type
        model, history = train_ensemble(examples, list(config.class_names), mode,
                                        config.training,
                                        seed=round_seed(config.seed, rounds))
        rounds += 1
        detections = {rid: detect_events(model, corpus.embeddings[rid])
                      for rid in sorted(corpus.embeddings)}
        if config.strategy == "uncertainty":
            pooled = _pooled_outputs(model, corpus)

        report = evaluate_model(model, test_corpus, test_truth)
        lpf = labeled_positive_fraction(state, truth)
        elapsed = time.perf_counter() - started
        for cp in crossed:
            results.append(CheckpointResult(
                budget_fraction=cp, labeled_duration_s=labeled,
                labeled_fraction=fraction, report=report,
                labeled_positive_fraction=lpf, wall_time_s=elapsed))
        log.info("checkpoint %s: ER %.3f after %d epochs, %.1f s",
                 "/".join(f"{cp:g}" for cp in crossed), report.er,
                 history.stopped_epoch + 1, elapsed)

    return RunResult(config=config, checkpoints=results, trace_rows=trace,
                     exhausted=not state.unlabeled)


def run_experiment_suite(systems, seeds, corpus: list[AudioClip],
                         truth: GroundTruth, test_clips: list[AudioClip],
                         test_truth: GroundTruth, class_names,
                         **overrides) -> tuple[list[RunResult], list[dict]]:
    """Cartesian product of systems and seeds over one shared corpus.

    Feature extraction and embedding are shared across runs (the
    extractor is frozen); only the candidate pool differs between
    segmentation regimes, so it is prepared once per regime.
    """
    configs = {(system, seed): system_preset(system, class_names, seed, **overrides)
               for system in systems for seed in seeds}
    embeddings = test_embeddings = None
    pools = {}
    runs = []
    rows = []
    for (system, seed), config in sorted(configs.items()):
        if embeddings is None:
            embeddings = embed_corpus(corpus, config)
            test_embeddings = embed_corpus(test_clips, config)
        regime = (config.segmentation, config.annotation_unit, config.fixed_len_s)
        if regime not in pools:
            pools[regime] = segment_corpus(embeddings, config)
        prepared = PreparedCorpus(
            embeddings=embeddings, segments=pools[regime],
            durations={c.recording_id: c.duration_s for c in corpus})
        test_prepared = PreparedCorpus(
            embeddings=test_embeddings,
            segments=[],
            durations={c.recording_id: c.duration_s for c in test_clips})
        log.info("running system %d seed %d", system, seed)
        result = run_active_learning(config, prepared, truth,
                                     test_prepared, test_truth)
        runs.append(result)
        for cp in result.checkpoints:
            rows.append({"system": system, "seed": seed,
                         "budget_fraction": cp.budget_fraction,
                         "report": cp.report})
    return runs, rows


def export_runs_csv(runs: list[RunResult]) -> str:
    """Budget bookkeeping per run and checkpoint.

    Wall times stay out on purpose so repeated invocations produce
    byte-identical files; they go to the log stream instead.
    """
    lines = ["system,seed,budget_fraction,labeled_duration_s,"
             "labeled_fraction,labeled_positive_fraction"]
    for run in runs:
        system = _system_of(run.config)
        for cp in run.checkpoints:
            lines.append(f"{system},{run.config.seed},{cp.budget_fraction!r},"
                         f"{cp.labeled_duration_s!r},{cp.labeled_fraction!r},"
                         f"{cp.labeled_positive_fraction!r}")
    return "\n".join(lines) + "\n"


def _system_of(config: ProjectConfig) -> int:
    key = (config.segmentation if config.annotation_unit == "segment" else "recording",
           config.label_type, config.strategy, config.training_input)
    for system, row in SYSTEM_TABLE.items():
        if row == key:
            return system
    return 0  # custom configuration, no table row


def summarize_rows(rows) -> list[dict]:
    """Median ER per system and checkpoint, rows sorted for stable output."""
    groups = {}
    for r in rows:
        groups.setdefault((r["system"], r["budget_fraction"]), []).append(
            r["report"].er)
    out = []
    for (system, budget), ers in sorted(groups.items()):
        out.append({"system": system, "budget_fraction": budget,
                    "median_er": float(np.median(ers)), "n_runs": len(ers)})
    return out


def export_summary_csv(summary) -> str:
    lines = ["system,budget_fraction,median_er,n_runs"]
    for r in summary:
        lines.append(f"{r['system']},{r['budget_fraction']!r},"
                     f"{r['median_er']!r},{r['n_runs']}")
    return "\n".join(lines) + "\n"

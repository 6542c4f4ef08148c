"""Batch sample selection: mismatch-first farthest-traversal and baselines.

The unit of selection is a candidate segment. Strategies:

- mfft: rank unlabeled segments by ascending similarity J between
  model-predicted labels and nearest-neighbor propagated labels, and
  within each similarity tier pick the segment farthest from everything
  already annotated or already picked. The first batch, with nothing
  annotated yet, is pure farthest traversal from a random start.
- random: uniform draw without replacement.
- uncertainty: ascending min-class certainty 2*|o_c - 0.5|.

All ties break toward the lowest segment_id, which makes every
strategy a deterministic function of (state, seed, iteration).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .segmentation import CandidateSegment

LabelSet = frozenset


def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
    """1 - cos(u, v), in [0, 2]; degenerate (near-zero) vectors give 1."""
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu < 1e-12 or nv < 1e-12:
        return 1.0
    return float(np.clip(1.0 - float(np.dot(u, v)) / (nu * nv), 0.0, 2.0))


class MeanEmbeddingDistances:
    """Pairwise cosine distances between segment mean embeddings.

    The full matrix is materialized once; segment mean embeddings are
    frozen after preparation, so distances never change during a run.
    """

    def __init__(self, segments: list[CandidateSegment]):
        self.ids = sorted(s.segment_id for s in segments)
        self.index = {sid: k for k, sid in enumerate(self.ids)}
        by_id = {s.segment_id: s for s in segments}
        E = np.stack([by_id[sid].mean_embedding for sid in self.ids])
        norms = np.linalg.norm(E, axis=1)
        ok = norms >= 1e-12
        U = np.where(ok[:, None], E / np.where(ok, norms, 1.0)[:, None], 0.0)
        D = 1.0 - U @ U.T
        bad = ~ok
        D[bad, :] = 1.0
        D[:, bad] = 1.0
        self.matrix = np.clip(D, 0.0, 2.0)

    def pairwise(self, a: str, b: str) -> float:
        return float(self.matrix[self.index[a], self.index[b]])

    def to_many(self, a: str, others: list[str]) -> np.ndarray:
        row = self.matrix[self.index[a]]
        return row[[self.index[o] for o in others]]


class MatrixDistances:
    """Distance source backed by an explicit matrix (tests, replays)."""

    def __init__(self, ids: list[str], matrix: np.ndarray):
        self.ids = list(ids)
        self.index = {sid: k for k, sid in enumerate(self.ids)}
        self.matrix = np.asarray(matrix, dtype=np.float64)

    def pairwise(self, a: str, b: str) -> float:
        return float(self.matrix[self.index[a], self.index[b]])

    def to_many(self, a: str, others: list[str]) -> np.ndarray:
        row = self.matrix[self.index[a]]
        return row[[self.index[o] for o in others]]


@dataclass
class PredictionPair:
    segment_id: str
    model_labels: LabelSet
    propagated_labels: LabelSet
    similarity: float


@dataclass
class SelectionState:
    """Bookkeeping for the selection loop over one candidate pool.

    Every segment is in exactly one of: annotated, selected_in_batch
    (picked, awaiting labels), or unlabeled.
    """

    segments: dict[str, CandidateSegment]
    distances: object
    seed: int
    annotated: dict[str, LabelSet] = field(default_factory=dict)
    selected_in_batch: list[str] = field(default_factory=list)
    unlabeled: set = field(default_factory=set)
    iteration: int = 0

    @classmethod
    def create(cls, segments: list[CandidateSegment], seed: int,
               distances=None) -> "SelectionState":
        if distances is None:
            distances = MeanEmbeddingDistances(segments)
        return cls(segments={s.segment_id: s for s in segments},
                   distances=distances, seed=seed,
                   unlabeled={s.segment_id for s in segments})

    def mark_annotated(self, segment_id: str, labels: LabelSet) -> None:
        if segment_id not in self.selected_in_batch:
            raise KeyError(f"{segment_id} is not awaiting annotation")
        self.selected_in_batch.remove(segment_id)
        self.annotated[segment_id] = frozenset(labels)

    def labeled_duration_s(self) -> float:
        return sum(self.segments[sid].duration_s for sid in self.annotated)

    def total_duration_s(self) -> float:
        return sum(s.duration_s for s in self.segments.values())


def jaccard_similarity(a, b) -> float:
    union = set(a) | set(b)
    if not union:
        return 1.0
    return len(set(a) & set(b)) / len(union)


def propagate_labels(state: SelectionState) -> dict:
    """Nearest-annotated-neighbor labels for every unlabeled segment.

    Distance ties resolve to the annotated segment with the lowest id.
    """
    if not state.annotated:
        raise ValueError("no annotated segments to propagate from")
    sources = sorted(state.annotated)
    out = {}
    for sid in sorted(state.unlabeled):
        d = state.distances.to_many(sid, sources)
        best = int(np.argmin(d))  # first minimum = lowest source id
        out[sid] = state.annotated[sources[best]]
    return out


def derive_model_labels(events, segment: CandidateSegment,
                        min_overlap_s: float = 0.02) -> LabelSet:
    """Classes of detected events overlapping the segment by >= one frame."""
    labels = set()
    for ev in events:
        overlap = min(segment.end_s, ev.offset_s) - max(segment.start_s, ev.onset_s)
        if overlap >= min_overlap_s - 1e-9:
            labels.add(ev.class_name)
    return frozenset(labels)


def compute_predictions(state: SelectionState,
                        events_by_recording: dict) -> list[PredictionPair]:
    """Per-iteration A_x, B_x and their Jaccard similarity for unlabeled segments."""
    propagated = propagate_labels(state)
    pairs = []
    for sid in sorted(state.unlabeled):
        seg = state.segments[sid]
        a = derive_model_labels(events_by_recording.get(seg.recording_id, []), seg)
        b = propagated[sid]
        pairs.append(PredictionPair(segment_id=sid, model_labels=a,
                                    propagated_labels=b,
                                    similarity=jaccard_similarity(a, b)))
    return pairs


@dataclass
class PickRecord:
    segment_id: str
    j_value: float | None
    distance_to_s: float | None


@dataclass
class BatchSelection:
    picks: list[PickRecord]
    exhausted: bool

    @property
    def segment_ids(self) -> list[str]:
        return [p.segment_id for p in self.picks]


def _quota_reached(state, picks, quota_s, quota_count) -> bool:
    if quota_count is not None:
        return len(picks) >= quota_count
    return sum(state.segments[p.segment_id].duration_s for p in picks) >= quota_s


def _argmax_lowest_id(ids: list[str], scores: np.ndarray) -> int:
    best = 0
    for k in range(1, len(ids)):
        if scores[k] > scores[best]:
            best = k
    return best


def select_batch(strategy: str,
                 state: SelectionState,
                 batch_quota_s: float,
                 predictions: list[PredictionPair] | None = None,
                 pooled_outputs: dict | None = None,
                 quota_count: int | None = None) -> BatchSelection:
    """Pick the next batch; picked ids move from unlabeled to selected_in_batch.

    The quota is a duration by default (first pick reaching it closes
    the batch); quota_count switches to a fixed segment count. The rng
    is derived from (state seed, iteration counter) so repeated runs
    reproduce byte-identical picks.
    """
    if state.selected_in_batch:
        raise RuntimeError("previous batch is still open")
    if not state.unlabeled:
        raise ValueError("no unlabeled segments remain")
    rng = np.random.default_rng((state.seed, state.iteration))
    state.iteration += 1

    if strategy == "random":
        picks = _select_random(state, rng, batch_quota_s, quota_count)
    elif strategy == "uncertainty":
        if pooled_outputs is None:
            picks = _select_random(state, rng, batch_quota_s, quota_count)
        else:
            picks = _select_uncertainty(state, pooled_outputs, batch_quota_s, quota_count)
    elif strategy == "mfft":
        picks = _select_mfft(state, rng, predictions, batch_quota_s, quota_count)
    else:
        raise ValueError(f"unknown strategy {strategy!r}")

    for p in picks:
        state.unlabeled.remove(p.segment_id)
        state.selected_in_batch.append(p.segment_id)
    return BatchSelection(picks=picks, exhausted=not state.unlabeled)


def _select_random(state, rng, quota_s, quota_count):
    pool = sorted(state.unlabeled)
    order = rng.permutation(len(pool))
    picks = []
    for k in order:
        picks.append(PickRecord(segment_id=pool[k], j_value=None, distance_to_s=None))
        if _quota_reached(state, picks, quota_s, quota_count):
            break
    return picks


def _select_uncertainty(state, pooled_outputs, quota_s, quota_count):
    pool = sorted(state.unlabeled)
    certainty = np.array([
        min(2.0 * abs(o - 0.5) for o in pooled_outputs[sid]) for sid in pool
    ])
    picks = []
    for k in np.argsort(certainty, kind="stable"):  # ties keep id order
        picks.append(PickRecord(segment_id=pool[k], j_value=None, distance_to_s=None))
        if _quota_reached(state, picks, quota_s, quota_count):
            break
    return picks


def _select_mfft(state, rng, predictions, quota_s, quota_count):
    pool = sorted(state.unlabeled)
    if state.annotated and predictions is None:
        raise ValueError("mfft needs per-iteration predictions once annotations exist")
    if predictions is not None:
        j_by_id = {p.segment_id: p.similarity for p in predictions}
        missing = [sid for sid in pool if sid not in j_by_id]
        if missing:
            raise ValueError(f"predictions missing for {missing[:3]}")
    else:
        j_by_id = {sid: None for sid in pool}

    # d(x, S) with S = annotated u already-picked, maintained incrementally;
    # min() over the same floats matches a fresh recomputation exactly.
    d_to_s = {}
    anchors = sorted(state.annotated)
    for sid in pool:
        if anchors:
            d_to_s[sid] = float(np.min(state.distances.to_many(sid, anchors)))
        else:
            d_to_s[sid] = None

    def tiers():
        if predictions is None:
            return [sorted(pool)]
        levels = sorted({j_by_id[sid] for sid in pool})
        return [sorted(sid for sid in pool if j_by_id[sid] == lv) for lv in levels]

    picks = []
    unpicked = set(pool)
    no_anchor_yet = not anchors

    for tier in tiers():
        while tier:
            if no_anchor_yet:
                # nothing to be far from: seed the traversal at random
                k = int(rng.integers(len(tier)))
                sid = tier.pop(k)
                picks.append(PickRecord(segment_id=sid, j_value=j_by_id[sid],
                                        distance_to_s=None))
                no_anchor_yet = False
            else:
                scores = np.array([d_to_s[s] for s in tier])
                k = _argmax_lowest_id(tier, scores)
                sid = tier.pop(k)
                picks.append(PickRecord(segment_id=sid, j_value=j_by_id[sid],
                                        distance_to_s=d_to_s[sid]))
            unpicked.remove(sid)
            for other in unpicked:
                d = state.distances.pairwise(other, sid)
                if d_to_s[other] is None or d < d_to_s[other]:
                    d_to_s[other] = d
            if _quota_reached(state, picks, quota_s, quota_count):
                return picks
    return picks

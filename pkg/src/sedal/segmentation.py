"""Change-point segmentation of embedding sequences.

A change likelihood is computed per frame as the cosine distance
between the mean embedding of the past M frames and that of the
future M frames. Peaks in the likelihood become segment boundaries,
subject to a one second minimum segment length. A fixed-length
segmenter is provided as a baseline.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import EmbeddingSequence

DEFAULT_HALF_WINDOW = 24
DEFAULT_PEAK_THRESHOLD = 0.1
MIN_SEGMENT_S = 1.0


@dataclass
class ChangeLikelihoodSeries:
    """delta(t) for t in [M, T-M]; positions outside that range do not exist."""

    values: np.ndarray
    M: int

    @property
    def first_t(self) -> int:
        return self.M

    def frame_of(self, index: int) -> int:
        return self.M + index


@dataclass
class CandidateSegment:
    segment_id: str
    recording_id: str
    start_frame: int
    end_frame: int
    hop_s: float
    mean_embedding: np.ndarray

    @property
    def start_s(self) -> float:
        return self.start_frame * self.hop_s

    @property
    def end_s(self) -> float:
        return self.end_frame * self.hop_s

    @property
    def duration_s(self) -> float:
        return (self.end_frame - self.start_frame) * self.hop_s


def change_likelihood(emb: EmbeddingSequence, M: int = DEFAULT_HALF_WINDOW) -> ChangeLikelihoodSeries:
    """Cosine distance between past-M and future-M mean embeddings.

    Defined for t in [M, T-M]: the past window is rows t-M..t-1, the
    future window rows t..t+M-1. Either window mean having near-zero
    norm yields delta(t) = 0.
    """
    y = emb.values
    T = y.shape[0]
    if T < 2 * M:
        raise ValueError(f"need at least {2 * M} frames, got {T}")
    csum = np.concatenate([np.zeros((1, y.shape[1])), np.cumsum(y, axis=0)], axis=0)
    ts = np.arange(M, T - M + 1)
    past = (csum[ts] - csum[ts - M]) / M
    future = (csum[ts + M] - csum[ts]) / M
    pn = np.linalg.norm(past, axis=1)
    fn = np.linalg.norm(future, axis=1)
    dots = np.sum(past * future, axis=1)
    ok = (pn >= 1e-12) & (fn >= 1e-12)
    values = np.zeros(len(ts))
    values[ok] = 1.0 - dots[ok] / (pn[ok] * fn[ok])
    values = np.clip(values, 0.0, 2.0)
    return ChangeLikelihoodSeries(values=values, M=M)


def detect_change_points(series: ChangeLikelihoodSeries,
                         total_frames: int,
                         min_gap_s: float = MIN_SEGMENT_S,
                         threshold: float = DEFAULT_PEAK_THRESHOLD,
                         hop_s: float = 0.02) -> list[int]:
    """Pick peaks of the likelihood series as change points.

    A candidate peak is interior to the series, at least as large as
    every value within +-M positions, strictly larger than at least
    one immediate neighbor, and at or above the threshold. Scanning
    left to right, candidates within min_gap_s of the last accepted
    point, or of either recording boundary, are skipped; this keeps
    every resulting segment at least min_gap_s long.
    """
    v = series.values
    M = series.M
    n = len(v)
    gap = int(round(min_gap_s / hop_s))
    accepted: list[int] = []
    for i in range(1, n - 1):
        if v[i] < threshold:
            continue
        lo = max(0, i - M)
        if v[i] < v[lo : i + M + 1].max():
            continue
        if not (v[i] > v[i - 1] or v[i] > v[i + 1]):
            continue  # plateau interior, its edges already qualify
        t = series.frame_of(i)
        if t < gap or total_frames - t < gap:
            continue
        if accepted and t - accepted[-1] < gap:
            continue
        accepted.append(t)
    return accepted


def make_segment_id(recording_id: str, start_frame: int, end_frame: int) -> str:
    return f"{recording_id}/{start_frame:06d}-{end_frame:06d}"


def _build_segments(emb: EmbeddingSequence, bounds: list[int]) -> list[CandidateSegment]:
    segments = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        segments.append(CandidateSegment(
            segment_id=make_segment_id(emb.recording_id, a, b),
            recording_id=emb.recording_id,
            start_frame=a,
            end_frame=b,
            hop_s=emb.hop_s,
            mean_embedding=emb.values[a:b].mean(axis=0),
        ))
    return segments


def segment_recording(emb: EmbeddingSequence,
                      mode: str = "variable",
                      fixed_len_s: float = 2.0,
                      M: int = DEFAULT_HALF_WINDOW,
                      threshold: float = DEFAULT_PEAK_THRESHOLD,
                      min_gap_s: float = MIN_SEGMENT_S) -> list[CandidateSegment]:
    """Cut one recording into candidate segments that tile it exactly.

    variable mode: boundaries at detected change points. Recordings too
    short for the analysis window become a single segment. fixed mode:
    consecutive fixed_len_s windows; a final remainder shorter than the
    minimum segment length is absorbed into the last window.
    """
    T = emb.n_frames
    if mode == "variable":
        if T < 2 * M:
            points: list[int] = []
        else:
            series = change_likelihood(emb, M=M)
            points = detect_change_points(series, total_frames=T, min_gap_s=min_gap_s,
                                          threshold=threshold, hop_s=emb.hop_s)
        bounds = [0] + points + [T]
    elif mode == "fixed":
        step = int(round(fixed_len_s / emb.hop_s))
        min_len = int(round(min_gap_s / emb.hop_s))
        bounds = list(range(0, T, step)) + [T]
        if len(bounds) >= 3 and bounds[-1] - bounds[-2] < min_len:
            del bounds[-2]  # absorb short remainder into the last window
        if bounds[-1] == bounds[-2]:
            del bounds[-1]
    else:
        raise ValueError(f"unknown segmentation mode {mode!r}")
    return _build_segments(emb, bounds)


def export_segment_table(segments: list[CandidateSegment]) -> str:
    """CSV export: segment_id, recording_id, start_s, end_s."""
    lines = ["segment_id,recording_id,start_s,end_s"]
    for s in segments:
        lines.append(f"{s.segment_id},{s.recording_id},{s.start_s!r},{s.end_s!r}")
    return "\n".join(lines) + "\n"

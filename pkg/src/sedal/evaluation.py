"""Segment-based error rate over one-second evaluation segments."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SEGMENT_LEN_S = 1.0


@dataclass
class EventRoll:
    """Per-class activity over consecutive one-second segments.

    active[k, c] is True when any event of class c intersects segment
    [k, k+1) with positive measure; touching a boundary does not count.
    """

    active: np.ndarray  # n_segments x C, bool
    class_names: list[str]

    @property
    def n_segments(self) -> int:
        return self.active.shape[0]


@dataclass
class ErReport:
    s: int = 0
    d: int = 0
    i: int = 0
    n: int = 0

    @property
    def er(self) -> float:
        if self.n == 0:
            return math.nan
        return (self.s + self.d + self.i) / self.n

    def __add__(self, other: "ErReport") -> "ErReport":
        return ErReport(self.s + other.s, self.d + other.d,
                        self.i + other.i, self.n + other.n)


def build_roll(events, duration_s: float, class_names: list[str],
               segment_len_s: float = SEGMENT_LEN_S) -> EventRoll:
    """Mark class activity per evaluation segment from an event list.

    The final partial segment counts as a full one. Events must lie
    within the recording.
    """
    n_segments = max(1, int(math.ceil(duration_s / segment_len_s - 1e-9)))
    index = {c: k for k, c in enumerate(class_names)}
    active = np.zeros((n_segments, len(class_names)), dtype=bool)
    for ev in events:
        if ev.onset_s < -1e-9 or ev.offset_s > duration_s + 1e-9:
            raise ValueError(
                f"event [{ev.onset_s}, {ev.offset_s}) outside recording of {duration_s} s"
            )
        ci = index[ev.class_name]
        first = int(math.floor(ev.onset_s / segment_len_s + 1e-9))
        last = int(math.ceil(ev.offset_s / segment_len_s - 1e-9))
        for k in range(max(0, first), min(n_segments, last)):
            lo = k * segment_len_s
            hi = lo + segment_len_s
            if min(hi, ev.offset_s) - max(lo, ev.onset_s) > 1e-9:
                active[k, ci] = True
    return EventRoll(active=active, class_names=list(class_names))


def error_rate(ref: EventRoll, hyp: EventRoll) -> ErReport:
    """Substitutions, deletions, insertions per segment, accumulated.

    Per segment: S = min(FN, FP), D = FN - S, I = FP - S, with FN and
    FP the counts of missed and spurious classes; N counts reference
    activity.
    """
    if ref.active.shape != hyp.active.shape or ref.class_names != hyp.class_names:
        raise ValueError("reference and hypothesis rolls do not match")
    fn = np.sum(ref.active & ~hyp.active, axis=1).astype(int)
    fp = np.sum(~ref.active & hyp.active, axis=1).astype(int)
    s = int(np.minimum(fn, fp).sum())
    d = int(np.maximum(0, fn - fp).sum())
    i = int(np.maximum(0, fp - fn).sum())
    n = int(ref.active.sum())
    return ErReport(s=s, d=d, i=i, n=n)


def combined_error_rate(pairs) -> ErReport:
    """Micro-aggregate: sum counters over (ref, hyp) roll pairs, then divide."""
    total = ErReport()
    for ref, hyp in pairs:
        total = total + error_rate(ref, hyp)
    return total


def export_metrics_csv(rows) -> str:
    """CSV rows: system, seed, budget_fraction, S, D, I, N, ER.

    Each row is a dict with system, seed, budget_fraction and a "report"
    entry carrying the pooled counts.
    """
    lines = ["system,seed,budget_fraction,S,D,I,N,ER"]
    for r in rows:
        rep = r["report"]
        er_text = "nan" if math.isnan(rep.er) else repr(rep.er)
        lines.append(
            f"{r['system']},{r['seed']},{r['budget_fraction']!r},"
            f"{rep.s},{rep.d},{rep.i},{rep.n},{er_text}"
        )
    return "\n".join(lines) + "\n"

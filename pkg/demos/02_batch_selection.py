#!/usr/bin/env python3
"""Watch the mismatch-first traversal choose what to annotate.

A small pool is built from synthetic recordings, then three batches are
selected and labeled with ground truth. The first batch starts from a
random segment and walks outward; later batches rank segments by how much
the propagated labels disagree with the (still absent) model detections,
lowest agreement first.
"""
import dataclasses

from sedal.orchestrator import prepare_corpus, system_preset
from sedal.selection import SelectionState, compute_predictions, select_batch
from sedal.synth import generate, rare_preset, simulate_annotation

spec = dataclasses.replace(rare_preset(n_recordings=6, seed=2),
                           recording_len_s=20.0, events_per_minute=6.0)
clips, truth = generate(spec)
config = system_preset(5, truth.class_names, seed=0, embedding_dim=32)
corpus = prepare_corpus(clips, config)
state = SelectionState.create(corpus.segments, seed=config.seed)
print(f"pool: {len(corpus.segments)} segments, "
      f"{state.total_duration_s():.0f} s total, "
      f"{100 * truth.positive_fraction():.1f}% positive\n")

for round_no in range(3):
    predictions = None
    if state.annotated:
        # no model yet, so detections are empty; disagreement comes from
        # nearest-neighbor label propagation alone
        predictions = compute_predictions(state, events_by_recording={})
    batch = select_batch("mfft", state, batch_quota_s=12.0,
                         predictions=predictions)
    print(f"batch {round_no}:")
    for pick in batch.picks:
        seg = state.segments[pick.segment_id]
        labels = simulate_annotation(seg, truth, mode="weak")
        state.mark_annotated(pick.segment_id, labels)
        j = "-" if pick.j_value is None else f"{pick.j_value:.2f}"
        d = "-" if pick.distance_to_s is None else f"{pick.distance_to_s:.3f}"
        shown = ",".join(sorted(labels)) if labels else "(none)"
        print(f"  {pick.segment_id}  agreement={j} dist={d}  -> {shown}")

positive = sum(state.segments[sid].duration_s
               for sid, labels in state.annotated.items() if labels)
print(f"\nlabeled {state.labeled_duration_s():.0f} s, "
      f"{positive:.0f} s of it carrying events")

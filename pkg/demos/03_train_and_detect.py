#!/usr/bin/env python3
"""Weak labels in, event list out.

Labels every candidate segment of a small corpus with just the classes
it contains (no onsets or offsets), trains the attention model on those
weak targets, then decodes framewise probabilities on held-out audio
into events and scores them segment by segment.
"""
import dataclasses

from sedal.evaluation import build_roll, error_rate
from sedal.model import detect_events, train
from sedal.orchestrator import build_training_examples, prepare_corpus, system_preset
from sedal.selection import SelectionState
from sedal.synth import generate, rare_preset, simulate_annotation

spec = dataclasses.replace(rare_preset(n_recordings=12, seed=6), ebr_db=(6.0, 12.0),
                           recording_len_s=20.0, events_per_minute=8.0)
clips, truth = generate(spec)
test_spec = dataclasses.replace(spec, n_recordings=4, seed=6 + 7000)
test_clips, test_truth = generate(test_spec)

config = system_preset(1, truth.class_names, seed=0, embedding_dim=64)
config = dataclasses.replace(
    config, training=dataclasses.replace(config.training, n_hidden=32,
                                         context=1, max_epochs=150))
corpus = prepare_corpus(clips, config)
test_corpus = prepare_corpus(test_clips, config)

# label the whole pool; segments already tile each recording
state = SelectionState.create(corpus.segments, seed=0)
for sid in sorted(state.unlabeled):
    seg = state.segments[sid]
    state.selected_in_batch.append(sid)
    state.unlabeled.discard(sid)
    state.mark_annotated(sid, simulate_annotation(seg, truth, mode="weak"))
print(f"{len(state.annotated)} weakly labeled segments")

examples = build_training_examples(config, corpus, state, strong_events={})
model, history = train(examples, list(config.class_names), mode="weak",
                       config=config.training, seed=0)
print(f"trained {history.stopped_epoch + 1} epochs, "
      f"best validation loss {min(history.val_loss):.2f}\n")

report = None
for rid in sorted(test_corpus.embeddings):
    detected = detect_events(model, test_corpus.embeddings[rid])
    duration = test_corpus.durations[rid]
    ref = build_roll(test_truth.events[rid], duration, list(config.class_names))
    hyp = build_roll(detected, duration, list(config.class_names))
    part = error_rate(ref, hyp)
    report = part if report is None else report + part
    truth_n = len(test_truth.events[rid])
    print(f"{rid}: {len(detected)} detections vs {truth_n} true events")

print(f"\nS={report.s} D={report.d} I={report.i} N={report.n} "
      f"-> error rate {report.er:.2f}")

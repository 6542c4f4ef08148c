import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sedal.segmentation import CandidateSegment
from sedal.synth import (
    DENSE_CLASSES,
    RARE_CLASSES,
    GeneratorSpec,
    GroundTruth,
    TruthEvent,
    dense_preset,
    generate,
    generate_recording,
    load_corpus_manifest,
    rare_preset,
    render_background,
    render_event,
    save_corpus,
    scale_event_to_ebr,
    simulate_annotation,
)


def small_spec(**overrides):
    base = dict(seed=3, n_recordings=2, classes=RARE_CLASSES,
                events_per_minute=2.0, recording_len_s=10.0)
    base.update(overrides)
    return GeneratorSpec(**base)


def segment(rid, start_s, end_s, hop_s=0.02):
    sf, ef = round(start_s / hop_s), round(end_s / hop_s)
    return CandidateSegment(
        segment_id=f"{rid}/{sf:06d}-{ef:06d}", recording_id=rid,
        start_frame=sf, end_frame=ef, hop_s=hop_s,
        mean_embedding=np.zeros(4))


def truth_with(rid, events, duration=10.0, classes=None):
    names = classes or sorted({e.class_name for e in events})
    return GroundTruth(events={rid: events}, durations={rid: duration},
                       class_names=list(names))


def test_zero_rate_gives_pure_background():
    clips, truth = generate(small_spec(events_per_minute=0.0))
    assert all(not evs for evs in truth.events.values())
    assert truth.positive_fraction() == 0.0
    for clip in clips:
        assert len(clip.samples) == 10 * clip.sample_rate
        assert np.max(np.abs(clip.samples)) <= 0.99 + 1e-12


def test_generation_is_deterministic():
    a_clips, a_truth = generate(small_spec())
    b_clips, b_truth = generate(small_spec())
    for a, b in zip(a_clips, b_clips):
        assert a.recording_id == b.recording_id
        assert np.array_equal(a.samples, b.samples)
    assert a_truth.events == b_truth.events


def test_recordings_are_independent_of_corpus_size():
    # the n-th recording only depends on (seed, n)
    _, small = generate(small_spec(n_recordings=1))
    _, large = generate(small_spec(n_recordings=2))
    rid = next(iter(small.events))
    assert small.events[rid] == large.events[rid]


def test_event_bounds_and_order():
    spec = small_spec(events_per_minute=8.0, recording_len_s=20.0)
    _, truth = generate(spec)
    for rid, events in truth.events.items():
        onsets = [e.onset_s for e in events]
        assert onsets == sorted(onsets)
        for e in events:
            assert 0.0 <= e.onset_s < e.offset_s <= truth.durations[rid] + 1e-9


def test_ebr_scaling_sets_rms_ratio():
    rng = np.random.default_rng(0)
    event = render_event(RARE_CLASSES[0], 1.0, 16000, rng)
    background = 0.02 * rng.standard_normal(16000)
    for ebr in (-6.0, 0.0, 6.0):
        scaled = scale_event_to_ebr(event, background, ebr)
        got = np.sqrt(np.mean(scaled**2)) / np.sqrt(np.mean(background**2))
        assert got == pytest.approx(10 ** (ebr / 20.0), rel=1e-6)


def test_background_is_normalized_and_seeded():
    spec = small_spec()
    a = render_background(spec, 0)
    b = render_background(spec, 0)
    c = render_background(spec, 1)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.sqrt(np.mean(a**2)) == pytest.approx(spec.background_rms, rel=1e-9)


def test_rendered_events_span_all_kinds():
    rng = np.random.default_rng(1)
    kinds = {t.kind for t in DENSE_CLASSES} | {t.kind for t in RARE_CLASSES}
    assert kinds == {"tone", "chirp", "noise", "am_tone", "clicks"}
    for template in RARE_CLASSES:
        x = render_event(template, 0.5, 16000, rng)
        assert len(x) == 8000
        assert np.max(np.abs(x)) > 0.0
        # onset and offset are ramped to avoid clicks at the splice
        assert abs(x[0]) < 1e-6 and abs(x[-1]) < 1e-6


def test_weak_annotation_requires_perceptible_overlap():
    rid = "rec"
    truth = truth_with(rid, [TruthEvent("wail", 2.0, 3.0)], classes=["wail"])
    assert simulate_annotation(segment(rid, 0.0, 1.0), truth) == frozenset()
    assert simulate_annotation(segment(rid, 1.0, 2.5), truth) == frozenset({"wail"})
    # exactly 0.1 s of overlap is at the perception floor: not labeled
    assert simulate_annotation(segment(rid, 0.0, 2.1), truth) == frozenset()
    assert simulate_annotation(segment(rid, 0.0, 2.12), truth) == frozenset({"wail"})


def test_weak_annotation_collects_all_classes():
    rid = "rec"
    truth = truth_with(rid, [TruthEvent("wail", 1.0, 2.0),
                             TruthEvent("burst", 1.5, 2.5),
                             TruthEvent("sweep", 8.0, 9.0)])
    got = simulate_annotation(segment(rid, 0.0, 5.0), truth)
    assert got == frozenset({"wail", "burst"})


def test_strong_annotation_clips_to_segment():
    rid = "rec"
    truth = truth_with(rid, [TruthEvent("wail", 1.0, 4.0)], classes=["wail"])
    got = simulate_annotation(segment(rid, 2.0, 3.0), truth, mode="strong")
    assert len(got) == 1
    assert got[0].onset_s == 2.0 and got[0].offset_s == 3.0
    # clipping below the floor drops the event entirely
    nearly_out = simulate_annotation(segment(rid, 3.9, 5.0), truth, mode="strong")
    assert nearly_out == []


def test_annotation_unknown_recording_rejected():
    truth = truth_with("rec", [], classes=["wail"])
    with pytest.raises(KeyError):
        simulate_annotation(segment("other", 0.0, 1.0), truth)
    with pytest.raises(ValueError):
        simulate_annotation(segment("rec", 0.0, 1.0), truth, mode="medium")


def test_rare_preset_is_sparse():
    spec = rare_preset(n_recordings=12, seed=1)
    _, truth = generate(spec)
    frac = truth.positive_fraction()
    assert 0.003 < frac < 0.05
    n_events = sum(len(v) for v in truth.events.values())
    # one event a minute over 12 recordings of 30 s
    assert 1 <= n_events <= 18


def test_dense_preset_is_much_busier_than_rare():
    _, rare = generate(rare_preset(n_recordings=8, seed=2))
    _, dense = generate(dense_preset(n_recordings=8, seed=2))
    assert dense.positive_fraction() > 5 * rare.positive_fraction()
    assert len(dense.class_names) > len(rare.class_names)


@given(st.integers(min_value=0, max_value=10_000))
@settings(max_examples=25, deadline=None)
def test_generated_recordings_stay_in_range(seed):
    spec = small_spec(seed=seed, n_recordings=1, events_per_minute=6.0,
                      recording_len_s=6.0)
    clip, events = generate_recording(spec, 0)
    assert np.max(np.abs(clip.samples)) <= 0.99 + 1e-12
    assert np.all(np.isfinite(clip.samples))
    for e in events:
        assert 0.0 <= e.onset_s < e.offset_s <= 6.0 + 1e-9


def test_corpus_roundtrip(tmp_path):
    spec = small_spec()
    clips, truth = generate(spec)
    manifest = save_corpus(clips, truth, tmp_path)
    assert (tmp_path / "corpus.json").exists()
    for clip in clips:
        assert (tmp_path / f"{clip.recording_id}.wav").exists()
    back = load_corpus_manifest(tmp_path / "corpus.json")
    assert back.class_names == truth.class_names
    assert back.durations == truth.durations
    for rid in truth.events:
        got, want = back.events[rid], truth.events[rid]
        assert len(got) == len(want)
        for g, w in zip(got, want):
            assert g.class_name == w.class_name
            assert g.onset_s == pytest.approx(w.onset_s, abs=1e-9)
            assert g.offset_s == pytest.approx(w.offset_s, abs=1e-9)

import numpy as np
import pytest

from sedal.model import DetectedEvent
from sedal.segmentation import CandidateSegment
from sedal.selection import (
    MatrixDistances,
    MeanEmbeddingDistances,
    PredictionPair,
    SelectionState,
    compute_predictions,
    cosine_distance,
    derive_model_labels,
    jaccard_similarity,
    propagate_labels,
    select_batch,
)


def seg(sid, mean, rid="r", start=0, end=50):
    return CandidateSegment(segment_id=sid, recording_id=rid, start_frame=start,
                            end_frame=end, hop_s=0.02,
                            mean_embedding=np.asarray(mean, dtype=np.float64))


def state_from_matrix(ids, matrix, seed=0, durations=None):
    segments = []
    for k, sid in enumerate(ids):
        end = int((durations[k] if durations else 1.0) / 0.02)
        segments.append(seg(sid, np.zeros(2), start=0, end=end))
    return SelectionState.create(segments, seed=seed,
                                 distances=MatrixDistances(ids, matrix))


def test_cosine_distance_basic_values():
    assert cosine_distance(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 1.0
    assert cosine_distance(np.array([2.0, 2.0]), np.array([1.0, 1.0])) == pytest.approx(0.0, abs=1e-12)
    assert cosine_distance(np.array([1.0, 0.0]), np.array([1.0, 1.0])) == pytest.approx(1 - 1 / np.sqrt(2), abs=1e-12)


def test_cosine_distance_degenerate_vector():
    assert cosine_distance(np.zeros(3), np.array([1.0, 0.0, 0.0])) == 1.0


def test_jaccard_values():
    assert jaccard_similarity(frozenset(), frozenset()) == 1.0
    assert jaccard_similarity({"a", "b"}, {"a", "b"}) == 1.0
    assert jaccard_similarity({"a", "b"}, {"b", "c"}) == pytest.approx(1 / 3)


def test_propagate_single_source_reaches_everyone():
    ids = ["s0", "s1", "s2"]
    m = np.array([[0.0, 0.3, 0.8], [0.3, 0.0, 0.5], [0.8, 0.5, 0.0]])
    state = state_from_matrix(ids, m)
    state.unlabeled = {"s1", "s2"}
    state.annotated = {"s0": frozenset({"cry"})}
    out = propagate_labels(state)
    assert out == {"s1": frozenset({"cry"}), "s2": frozenset({"cry"})}


def test_propagate_tie_breaks_to_lowest_id():
    ids = ["a1", "a2", "x"]
    m = np.zeros((3, 3))
    m[2, 0] = m[0, 2] = 0.4
    m[2, 1] = m[1, 2] = 0.4  # exactly equidistant
    state = state_from_matrix(ids, m)
    state.unlabeled = {"x"}
    state.annotated = {"a1": frozenset({"gun"}), "a2": frozenset({"glass"})}
    assert propagate_labels(state)["x"] == frozenset({"gun"})


def test_propagate_matches_brute_force_on_line():
    means = [[float(i), 1.0] for i in range(5)]
    segments = [seg(f"s{i}", means[i]) for i in range(5)]
    state = SelectionState.create(segments, seed=0)
    state.unlabeled = {"s1", "s2", "s3"}
    state.annotated = {"s0": frozenset({"a"}), "s4": frozenset({"b"})}
    out = propagate_labels(state)
    for sid in sorted(state.unlabeled):
        x = next(s for s in segments if s.segment_id == sid)
        dists = {
            a: cosine_distance(x.mean_embedding,
                               next(s for s in segments if s.segment_id == a).mean_embedding)
            for a in state.annotated
        }
        want = state.annotated[min(dists, key=lambda k: (dists[k], k))]
        assert out[sid] == want


def test_propagate_requires_annotations():
    state = state_from_matrix(["a", "b"], np.zeros((2, 2)))
    with pytest.raises(ValueError):
        propagate_labels(state)


def test_model_labels_from_events():
    s = seg("x", [0.0], start=250, end=400)  # [5.0 s, 8.0 s)
    assert derive_model_labels([], s) == frozenset()
    full = DetectedEvent(class_name="cry", onset_s=5.0, offset_s=8.0)
    assert derive_model_labels([full], s) == frozenset({"cry"})
    brushing = DetectedEvent(class_name="gun", onset_s=4.99, offset_s=5.5)
    assert derive_model_labels([brushing], s) == frozenset({"gun"})
    tiny = DetectedEvent(class_name="gun", onset_s=4.0, offset_s=5.01)
    assert derive_model_labels([tiny], s) == frozenset()


def test_farthest_traversal_picks_the_farther():
    ids = ["a", "b", "s"]
    m = np.array([
        [0.0, 0.5, 0.2],
        [0.5, 0.0, 0.7],
        [0.2, 0.7, 0.0],
    ])
    state = state_from_matrix(ids, m)
    state.unlabeled = {"a", "b"}
    state.annotated = {"s": frozenset()}
    preds = [PredictionPair(sid, frozenset(), frozenset(), 1.0) for sid in ("a", "b")]
    batch = select_batch("mfft", state, batch_quota_s=0.5, predictions=preds)
    assert batch.segment_ids[0] == "b"


def test_mfft_lowest_tier_first():
    ids = [f"s{i}" for i in range(4)]
    rng = np.random.default_rng(0)
    m = rng.uniform(0.1, 1.0, (4, 4))
    m = (m + m.T) / 2
    np.fill_diagonal(m, 0.0)
    j = {"s0": 0.0, "s1": 0.0, "s2": 0.5, "s3": 1.0}
    preds = [PredictionPair(sid, frozenset(), frozenset(), j[sid]) for sid in ids]
    ids3 = ids + ["anchor"]
    m3 = np.zeros((5, 5))
    m3[:4, :4] = m
    m3[4, :4] = [0.3, 0.4, 0.5, 0.6]
    m3[:4, 4] = [0.3, 0.4, 0.5, 0.6]
    state3 = state_from_matrix(ids3, m3)
    state3.unlabeled = set(ids)
    state3.annotated = {"anchor": frozenset({"a"})}
    batch = select_batch("mfft", state3, batch_quota_s=0, predictions=preds,
                         quota_count=2)
    assert set(batch.segment_ids) == {"s0", "s1"}
    assert [p.j_value for p in batch.picks] == [0.0, 0.0]


def test_uncertainty_orders_by_min_class_certainty():
    ids = ["u1", "u2"]
    state = state_from_matrix(ids, np.zeros((2, 2)))
    pooled = {"u1": [0.5, 0.9], "u2": [0.3, 0.9]}
    batch = select_batch("uncertainty", state, batch_quota_s=0, quota_count=2,
                         pooled_outputs=pooled)
    assert batch.segment_ids == ["u1", "u2"]


def test_uncertainty_without_model_falls_back_to_random():
    ids = [f"s{i}" for i in range(6)]
    a = state_from_matrix(ids, np.zeros((6, 6)), seed=5)
    b = state_from_matrix(ids, np.zeros((6, 6)), seed=5)
    got = select_batch("uncertainty", a, batch_quota_s=0, quota_count=3)
    want = select_batch("random", b, batch_quota_s=0, quota_count=3)
    assert got.segment_ids == want.segment_ids


def test_random_is_seeded_and_disjoint():
    ids = [f"s{i}" for i in range(8)]
    a = state_from_matrix(ids, np.zeros((8, 8)), seed=3)
    b = state_from_matrix(ids, np.zeros((8, 8)), seed=3)
    ba = select_batch("random", a, batch_quota_s=0, quota_count=4)
    bb = select_batch("random", b, batch_quota_s=0, quota_count=4)
    assert ba.segment_ids == bb.segment_ids
    assert set(ba.segment_ids) == a.annotated.keys() | set(a.selected_in_batch)
    assert a.unlabeled.isdisjoint(a.selected_in_batch)


def test_duration_quota_stops_at_crossing():
    ids = ["q0", "q1", "q2", "q3"]
    durations = [2.0, 2.0, 2.0, 2.0]
    state = state_from_matrix(ids, np.zeros((4, 4)), seed=1, durations=durations)
    batch = select_batch("random", state, batch_quota_s=3.0)
    assert len(batch.segment_ids) == 2  # first pick 2 s < 3 s, second reaches 4 s
    assert not batch.exhausted


def test_exhaustion_flagged():
    ids = ["a", "b"]
    state = state_from_matrix(ids, np.zeros((2, 2)))
    batch = select_batch("random", state, batch_quota_s=1e9)
    assert batch.exhausted
    assert sorted(batch.segment_ids) == ids
    for sid in batch.segment_ids:
        state.mark_annotated(sid, frozenset())
    with pytest.raises(ValueError):
        select_batch("random", state, batch_quota_s=1.0)


def test_open_batch_blocks_next_selection():
    state = state_from_matrix(["a", "b"], np.zeros((2, 2)))
    select_batch("random", state, batch_quota_s=0, quota_count=1)
    with pytest.raises(RuntimeError):
        select_batch("random", state, batch_quota_s=0, quota_count=1)


def test_mark_annotated_moves_between_pools():
    state = state_from_matrix(["a", "b"], np.zeros((2, 2)))
    batch = select_batch("random", state, batch_quota_s=0, quota_count=1)
    sid = batch.segment_ids[0]
    state.mark_annotated(sid, frozenset({"c"}))
    assert sid in state.annotated
    assert sid not in state.selected_in_batch
    with pytest.raises(KeyError):
        state.mark_annotated(sid, frozenset())


def brute_force_mfft(ids, matrix, annotated_ids, j_values, n_picks, first_pick=None):
    """Greedy reference: fresh argmax of min-distance at every step."""
    index = {sid: k for k, sid in enumerate(ids)}
    unlabeled = sorted(sid for sid in ids if sid not in annotated_ids)
    s_set = list(annotated_ids)
    order = []
    while unlabeled and len(order) < n_picks:
        levels = sorted({j_values[sid] for sid in unlabeled})
        tier = [sid for sid in unlabeled if j_values[sid] == levels[0]]
        if not s_set:
            pick = first_pick if first_pick in tier else tier[0]
        else:
            best, best_d = None, -1.0
            for sid in tier:
                d = min(matrix[index[sid], index[y]] for y in s_set)
                if d > best_d:
                    best, best_d = sid, d
            pick = best
        order.append(pick)
        unlabeled.remove(pick)
        s_set.append(pick)
    return order


def test_mfft_matches_brute_force_oracle():
    rng = np.random.default_rng(42)
    for trial in range(10):
        n = int(rng.integers(5, 30))
        m = rng.uniform(0.0, 2.0, (n, n))
        m = (m + m.T) / 2
        np.fill_diagonal(m, 0.0)
        ids = [f"s{k:03d}" for k in range(n)]
        n_ann = int(rng.integers(1, max(2, n // 3)))
        annotated = ids[:n_ann]
        j_pool = [0.0, 0.5, 1.0]
        j = {sid: j_pool[int(rng.integers(3))] for sid in ids}
        n_picks = int(rng.integers(1, n - n_ann + 1))

        state = state_from_matrix(ids, m, seed=trial)
        state.unlabeled = set(ids[n_ann:])
        state.annotated = {sid: frozenset({"c"}) for sid in annotated}
        preds = [PredictionPair(sid, frozenset(), frozenset(), j[sid])
                 for sid in ids[n_ann:]]
        batch = select_batch("mfft", state, batch_quota_s=0, predictions=preds,
                             quota_count=n_picks)
        want = brute_force_mfft(ids, m, annotated, j, n_picks)
        assert batch.segment_ids == want, f"trial {trial}"


def test_mismatch_dominance_in_trace():
    rng = np.random.default_rng(7)
    n = 20
    m = rng.uniform(0.0, 2.0, (n, n))
    m = (m + m.T) / 2
    np.fill_diagonal(m, 0.0)
    ids = [f"s{k:02d}" for k in range(n)]
    j = {sid: float(rng.choice([0.0, 0.25, 1.0])) for sid in ids}
    state = state_from_matrix(ids, m, seed=9)
    state.unlabeled = set(ids[2:])
    state.annotated = {ids[0]: frozenset(), ids[1]: frozenset({"c"})}
    preds = [PredictionPair(sid, frozenset(), frozenset(), j[sid]) for sid in ids[2:]]
    batch = select_batch("mfft", state, batch_quota_s=0, predictions=preds,
                         quota_count=10)
    # replay: every pick came from the lowest tier still populated
    remaining = set(ids[2:])
    for p in batch.picks:
        assert min(j[o] for o in remaining) == j[p.segment_id]
        remaining.remove(p.segment_id)


def test_predictions_j_consistency():
    rng = np.random.default_rng(11)
    segments = [seg(f"s{i}", rng.standard_normal(4), rid=f"rec{i % 2}") for i in range(6)]
    state = SelectionState.create(segments, seed=0)
    state.unlabeled = {s.segment_id for s in segments[2:]}
    state.annotated = {segments[0].segment_id: frozenset({"a"}),
                       segments[1].segment_id: frozenset({"b"})}
    events = {"rec0": [DetectedEvent("a", 0.0, 0.5)], "rec1": []}
    pairs = compute_predictions(state, events)
    for p in pairs:
        assert p.similarity == jaccard_similarity(p.model_labels, p.propagated_labels)


def test_mean_embedding_disteach_matches_scalar():
    rng = np.random.default_rng(13)
    segments = [seg(f"s{i}", rng.standard_normal(5)) for i in range(6)]
    d = MeanEmbeddingDistances(segments)
    for a in segments:
        for b in segments:
            want = cosine_distance(a.mean_embedding, b.mean_embedding)
            assert d.pairwise(a.segment_id, b.segment_id) == pytest.approx(want, abs=1e-12)

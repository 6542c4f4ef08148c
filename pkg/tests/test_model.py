import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sedal.embeddings import EmbeddingSequence
from sedal.model import (
    PARAM_NAMES,
    EnsembleModel,
    SedModel,
    TrainingConfig,
    TrainingExample,
    attention_pool,
    decode_activity,
    detect_events,
    example_loss_and_grads,
    forward,
    init_model,
    load_model,
    save_model,
    train,
    train_ensemble,
    weak_loss,
)


def emb_of(values, rid="r"):
    return EmbeddingSequence(values=np.asarray(values, dtype=np.float64),
                             recording_id=rid)


def tiny_model(seed=0, d=6, h=5, c=2, context=1):
    return init_model(dim=d, n_hidden=h, class_names=[f"k{i}" for i in range(c)],
                      context=context, seed=seed)


def zeroed(model):
    for name in PARAM_NAMES:
        getattr(model, name)[:] = 0.0
    return model


def test_zero_parameters_give_half_probability_unit_weight():
    model = zeroed(tiny_model())
    p, w = forward(model, emb_of(np.random.default_rng(0).standard_normal((7, 6))))
    assert np.all(p == 0.5)
    assert np.all(w == 1.0)


def test_single_frame_shapes():
    model = tiny_model()
    p, w = forward(model, emb_of(np.ones((1, 6))))
    assert p.shape == (1, 2)
    assert w.shape == (1, 2)
    assert np.all((p > 0) & (p < 1))
    assert np.all(w > 0)


def test_dimension_mismatch_rejected():
    model = tiny_model(d=6)
    with pytest.raises(ValueError):
        forward(model, emb_of(np.ones((4, 5))))


def test_forward_matches_hand_rolled_algebra():
    rng = np.random.default_rng(1)
    model = tiny_model(seed=3, d=4, h=3, c=2, context=1)
    y = rng.standard_normal((6, 4))
    p, w = forward(model, emb_of(y))
    for t in range(6):
        row = np.concatenate([y[max(t - 1, 0)], y[t], y[min(t + 1, 5)]])
        hid = np.maximum(row @ model.w1 + model.b1, 0.0)
        want_p = 1.0 / (1.0 + np.exp(-(hid @ model.wc + model.bc)))
        want_w = np.exp(np.clip(hid @ model.wa + model.ba, -10, 10))
        assert np.allclose(p[t], want_p, atol=1e-12)
        assert np.allclose(w[t], want_w, atol=1e-12)


def test_pool_uniform_weights_is_mean():
    rng = np.random.default_rng(2)
    p = rng.uniform(0.1, 0.9, (10, 3))
    w = np.ones((10, 3))
    assert np.allclose(attention_pool(p, w, 2, 8), p[2:8].mean(axis=0))


def test_pool_single_frame_is_identity():
    rng = np.random.default_rng(3)
    p = rng.uniform(0.1, 0.9, (5, 2))
    w = rng.uniform(0.5, 2.0, (5, 2))
    assert np.allclose(attention_pool(p, w, 3, 4), p[3])


def test_pool_weighted_two_frames():
    p = np.array([[0.2], [0.6]])
    w = np.array([[1.0], [3.0]])
    assert attention_pool(p, w, 0, 2)[0] == pytest.approx(0.5)


def test_pool_empty_region_rejected():
    with pytest.raises(ValueError):
        attention_pool(np.ones((3, 1)), np.ones((3, 1)), 2, 2)


@given(st.integers(min_value=0, max_value=10_000))
@settings(max_examples=40, deadline=None)
def test_pool_is_convex_combination(seed):
    rng = np.random.default_rng(seed)
    t = int(rng.integers(2, 12))
    p = rng.uniform(0.0, 1.0, (t, 3))
    w = rng.uniform(1e-3, 5.0, (t, 3))
    o = attention_pool(p, w, 0, t)
    assert np.all(o >= p.min(axis=0) - 1e-12)
    assert np.all(o <= p.max(axis=0) + 1e-12)


def test_pool_weight_scale_invariance():
    rng = np.random.default_rng(4)
    p = rng.uniform(0.0, 1.0, (8, 2))
    w = rng.uniform(0.1, 2.0, (8, 2))
    a = attention_pool(p, w, 1, 7)
    b = attention_pool(p, 37.5 * w, 1, 7)
    assert np.allclose(a, b, atol=1e-12)


def test_weak_loss_values():
    assert weak_loss(np.array([1.0 - 1e-9]), np.array([1.0])) < 1e-6
    assert weak_loss(np.full(4, 0.5), np.array([1.0, 0.0, 1.0, 0.0])) == pytest.approx(4 * np.log(2))
    want = -np.log(0.9) - np.log(0.8)
    assert weak_loss(np.array([0.9, 0.2]), np.array([1.0, 0.0])) == pytest.approx(want, abs=1e-6)


def random_example(rng, t=12, d=6, c=2, n_regions=2, rid="r"):
    y = rng.standard_normal((t, d))
    regions = []
    bounds = sorted(rng.choice(np.arange(1, t), size=2 * n_regions, replace=False))
    for k in range(n_regions):
        s, e = int(bounds[2 * k]), int(bounds[2 * k + 1])
        if e == s:
            e += 1
        tau = rng.integers(0, 2, size=c).astype(np.float64)
        regions.append((s, e, tau))
    return TrainingExample(recording_id=rid, emb=emb_of(y, rid), regions=regions)


def numeric_gradients(model, example, mode, h=1e-5):
    grads = {}
    for name in PARAM_NAMES:
        param = getattr(model, name)
        g = np.zeros_like(param)
        it = np.nditer(param, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = param[idx]
            param[idx] = orig + h
            lp, _ = example_loss_and_grads(model, example, mode, want_grads=False)
            param[idx] = orig - h
            lm, _ = example_loss_and_grads(model, example, mode, want_grads=False)
            param[idx] = orig
            g[idx] = (lp - lm) / (2 * h)
        grads[name] = g
    return grads


def max_relative_error(analytic, numeric):
    # denominator floor absorbs finite-difference noise on gradients that
    # are exactly zero (the attention bias in weak mode, see below)
    worst = 0.0
    for name in PARAM_NAMES:
        a, n = analytic[name], numeric[name]
        denom = np.maximum(np.abs(a) + np.abs(n), 1e-4)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


@pytest.mark.parametrize("mode", ["weak", "strong"])
@pytest.mark.parametrize("seed", [0, 1])
def test_gradients_match_finite_differences(mode, seed):
    rng = np.random.default_rng(seed)
    model = tiny_model(seed=seed + 100, d=6, h=5, c=2, context=1)
    example = random_example(rng)
    _, analytic = example_loss_and_grads(model, example, mode)
    numeric = numeric_gradients(model, example, mode)
    assert max_relative_error(analytic, numeric) < 1e-4


def test_weak_mode_attention_bias_gradient_is_zero():
    # pooled outputs are invariant to a constant shift of all attention
    # scores for a class, so the bias gradient must vanish identically
    rng = np.random.default_rng(12)
    model = tiny_model(seed=12)
    example = random_example(rng)
    _, grads = example_loss_and_grads(model, example, "weak")
    assert np.max(np.abs(grads["ba"])) < 1e-12


def test_strong_mode_attention_gets_zero_gradient():
    rng = np.random.default_rng(5)
    model = tiny_model(seed=5)
    example = random_example(rng)
    _, grads = example_loss_and_grads(model, example, "strong")
    assert np.all(grads["wa"] == 0.0)
    assert np.all(grads["ba"] == 0.0)
    assert np.any(grads["wc"] != 0.0)


def test_context_locality_of_loss():
    # frames farther than the stacking context from every region leave
    # the loss bit-identical when perturbed
    rng = np.random.default_rng(6)
    y = rng.standard_normal((30, 4))
    regions = [(10, 14, np.array([1.0]))]
    model = init_model(dim=4, n_hidden=3, class_names=["k"], context=2, seed=1)
    base = example_loss_and_grads(
        model, TrainingExample("r", emb_of(y), regions), "weak", want_grads=False)[0]
    y2 = y.copy()
    y2[:8] += 100.0
    y2[17:] -= 50.0
    bumped = example_loss_and_grads(
        model, TrainingExample("r", emb_of(y2), regions), "weak", want_grads=False)[0]
    assert bumped == base

    y3 = y.copy()
    y3[15] += 1.0  # inside the context reach of frame 13
    shifted = example_loss_and_grads(
        model, TrainingExample("r", emb_of(y3), regions), "weak", want_grads=False)[0]
    assert shifted != base


def test_training_reduces_loss_on_separable_toy():
    rng = np.random.default_rng(7)
    y = np.vstack([np.tile([2.0, 0.0, 0.0, 0.0], (20, 1)),
                   np.tile([0.0, 2.0, 0.0, 0.0], (20, 1))])
    examples = [TrainingExample("r0", emb_of(y, "r0"),
                                [(0, 20, np.array([1.0])), (20, 40, np.array([0.0]))])]
    config = TrainingConfig(n_hidden=4, context=1, max_epochs=120, min_epochs=10)
    model, history = train(examples, ["k"], "weak", config, seed=0)
    assert history.train_loss[-1] < history.train_loss[0]


def test_training_is_reproducible():
    rng = np.random.default_rng(8)
    examples = [random_example(rng, t=20, rid=f"r{i}") for i in range(3)]
    config = TrainingConfig(n_hidden=4, context=1, max_epochs=12, min_epochs=3)
    m1, _ = train(examples, ["k0", "k1"], "weak", config, seed=4)
    m2, _ = train(examples, ["k0", "k1"], "weak", config, seed=4)
    for name in PARAM_NAMES:
        assert np.array_equal(getattr(m1, name), getattr(m2, name))


def test_training_requires_regions():
    with pytest.raises(ValueError):
        train([TrainingExample("r", emb_of(np.ones((5, 4))), [])], ["k"],
              "weak", TrainingConfig(), seed=0)


def test_decode_activity_rules():
    hop = 0.02
    assert decode_activity(np.zeros(50, dtype=bool), hop) == []
    x = np.zeros(200, dtype=bool)
    x[50:150] = True
    assert decode_activity(x, hop) == [(50, 150)]
    # 8 on / 3 off / 8 on: the 0.06 s gap is bridged
    y = np.array([True] * 8 + [False] * 3 + [True] * 8)
    assert decode_activity(y, hop) == [(0, 19)]
    # a 4-frame run (0.08 s) alone is deleted
    z = np.zeros(30, dtype=bool)
    z[10:14] = True
    assert decode_activity(z, hop) == []
    # a 5-frame gap (0.10 s) is kept open
    g = np.zeros(40, dtype=bool)
    g[0:8] = True
    g[13:21] = True
    assert decode_activity(g, hop) == [(0, 8), (13, 21)]


def test_detect_events_conversion():
    model = zeroed(tiny_model(d=4, c=1, context=1))
    model.bc[:] = -5.0  # probabilities well under threshold
    emb = emb_of(np.random.default_rng(9).standard_normal((200, 4)))
    assert detect_events(model, emb) == []

    model.bc[:] = 5.0
    events = detect_events(model, emb)
    assert len(events) == 1
    assert events[0].onset_s == 0.0
    assert events[0].offset_s == pytest.approx(200 * 0.02)


def test_checkpoint_roundtrip(tmp_path):
    model = tiny_model(seed=11, d=6, h=5, c=3, context=2)
    path = tmp_path / "model.sedm"
    save_model(model, path)
    back = load_model(path)
    assert back.context == model.context
    assert back.class_names == model.class_names
    for name in PARAM_NAMES:
        want = getattr(model, name).astype(np.float32).astype(np.float64)
        assert np.array_equal(getattr(back, name), want)


def test_checkpoint_bad_magic_rejected(tmp_path):
    p = tmp_path / "x.sedm"
    p.write_bytes(b"JUNK" + b"\x00" * 64)
    with pytest.raises(ValueError):
        load_model(p)


def test_ensemble_forward_is_member_mean():
    members = [tiny_model(seed=s) for s in (0, 1, 2)]
    emb = emb_of(np.random.default_rng(3).standard_normal((9, 6)))
    p, w = forward(EnsembleModel(members), emb)
    singles = [forward(m, emb) for m in members]
    assert np.allclose(p, np.mean([s[0] for s in singles], axis=0))
    assert np.allclose(w, np.mean([s[1] for s in singles], axis=0))


def test_ensemble_rejects_mismatched_members():
    with pytest.raises(ValueError):
        EnsembleModel([tiny_model(c=2), tiny_model(c=3)])
    with pytest.raises(ValueError):
        EnsembleModel([])


def test_ensemble_checkpoint_roundtrip(tmp_path):
    ensemble = EnsembleModel([tiny_model(seed=s, d=4, h=3, c=2, context=1)
                              for s in (5, 6, 7)])
    path = tmp_path / "ens.sedm"
    save_model(ensemble, path)
    back = load_model(path)
    assert isinstance(back, EnsembleModel)
    assert len(back.members) == 3
    assert back.class_names == ensemble.class_names
    for got, want in zip(back.members, ensemble.members):
        for name in PARAM_NAMES:
            rounded = getattr(want, name).astype(np.float32).astype(np.float64)
            assert np.array_equal(getattr(got, name), rounded)


def test_train_ensemble_member_zero_matches_plain_train():
    rng = np.random.default_rng(12)
    examples = [random_example(rng, t=20, rid=f"r{i}") for i in range(3)]
    config = TrainingConfig(n_hidden=4, context=1, max_epochs=8, min_epochs=3,
                            n_inits=3)
    ensemble, _ = train_ensemble(examples, ["k0", "k1"], "weak", config, seed=4)
    assert isinstance(ensemble, EnsembleModel)
    assert len(ensemble.members) == 3
    single, _ = train(examples, ["k0", "k1"], "weak",
                      TrainingConfig(**{**config.__dict__, "n_inits": 1}), seed=4)
    for name in PARAM_NAMES:
        assert np.array_equal(getattr(ensemble.members[0], name),
                              getattr(single, name))
    # distinct initializations actually happened
    assert not np.array_equal(ensemble.members[0].w1, ensemble.members[1].w1)


def test_train_ensemble_single_init_returns_plain_model():
    rng = np.random.default_rng(13)
    examples = [random_example(rng, t=16, rid="r0")]
    config = TrainingConfig(n_hidden=4, context=1, max_epochs=5, min_epochs=2,
                            n_inits=1)
    model, _ = train_ensemble(examples, ["k0", "k1"], "weak", config, seed=2)
    assert isinstance(model, SedModel)

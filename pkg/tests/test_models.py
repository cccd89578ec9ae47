import numpy as np
import pytest
from hypothesis import given, strategies as st

from saccades import tensor as T
from saccades.models import (DenseConfig, GRUConfig, ViTConfig, dense_forward, frame_features, gru_step,
                             init_params, initial_state, vit_forward, vit_forward_batch, vit_logits_masked,
                             xavier_bound)
from saccades.sensor import Frame, PatchGrid, PatchMask, extract_tokens, patchify, zero_fill
from saccades.tensor import grad_check
from saccades.tracking import init_objectness, objectness_logits

SMALL_VIT = ViTConfig(patch_size=2, channels=1, embed_dim=8, heads=2, blocks=2, classes=3, n_patches=4,
                      mlp_dim=12)


def _jitter(store, rng, scale=0.3):
    # non-trivial biases and gains so every parameter has a sizeable gradient
    for _, t in store.items():
        t.data += rng.normal(scale=scale, size=t.shape)


def test_vit_gradients_full_sweep(rng):
    store = init_params(SMALL_VIT, 0)
    _jitter(store, rng)
    px = rng.random((3, 3, SMALL_VIT.token_dim))
    idx = np.array([[0, 1, 3], [2, 0, 1], [3, 2, 0]])
    rep = grad_check(lambda: T.cross_entropy(vit_forward_batch(px, idx, store, SMALL_VIT), [0, 2, 1]),
                     dict(store.items()))
    assert rep.passed, {k: v for k, v in rep.errors.items() if v >= 1e-4}


def test_gru_gradients_through_unroll(rng):
    cfg = GRUConfig(d_in=2, d_h=6, n_patches=5)
    store = init_params(cfg, 1)
    _jitter(store, rng)
    xs = [T.Tensor(rng.random((2, cfg.input_dim))) for _ in range(3)]
    labels = (rng.random((3, 2, 5)) > 0.5).astype(float)

    def loss():
        h = initial_state(store, 2)
        total = None
        for x, y in zip(xs, labels):
            h, logits = gru_step(x, h, store)
            term = T.bce(T.sigmoid(logits), y)
            total = term if total is None else total + term
        return total

    rep = grad_check(loss, dict(store.items()))
    assert rep.passed, rep.errors


def test_dense_gradients(rng):
    cfg = DenseConfig(input_dim=12, hidden=(7, 5), classes=3)
    store = init_params(cfg, 2)
    _jitter(store, rng, 0.1)
    x = rng.random((4, 12))
    rep = grad_check(lambda: T.cross_entropy(dense_forward(x, store, cfg), [0, 1, 2, 1]), dict(store.items()))
    assert rep.max_error < 1e-6, rep.errors


def test_objectness_gradients(rng):
    store = init_objectness(8, 3)
    x = T.Tensor(rng.random((10, 8)))
    y = (rng.random((10, 1)) > 0.5).astype(float)
    rep = grad_check(lambda: T.bce(T.sigmoid(objectness_logits(x, store)), y), dict(store.items()))
    assert rep.passed, rep.errors


def test_init_params_deterministic_and_bounded():
    for cfg in (SMALL_VIT, GRUConfig(d_in=2, d_h=4, n_patches=4), DenseConfig(input_dim=8, hidden=(4,))):
        a, b, c = init_params(cfg, 5), init_params(cfg, 5), init_params(cfg, 6)
        assert all(np.array_equal(a[k].data, b[k].data) for k in a)
        assert any(not np.array_equal(a[k].data, c[k].data) for k in a if a[k].data.any())
        for k, t in a.items():
            assert np.abs(t.data).max() <= max(1.0, xavier_bound(t.shape))
    gru = init_params(GRUConfig(d_in=2, d_h=4, n_patches=4), 0)
    assert not gru["gru.h0"].data.any() and gru["gru.h0"].requires_grad
    assert init_params(SMALL_VIT, 0)["vit.pos"].shape == (5, 8)


def test_vit_config_invariants():
    with pytest.raises(ValueError):
        ViTConfig(embed_dim=10, heads=4)
    with pytest.raises(ValueError):
        ViTConfig(classes=1)


def _frame_and_grid(rng):
    grid = PatchGrid(2, 2, 2)
    return Frame(rng.random((4, 4, 1))), grid


def test_vit_empty_tokens_and_errors(rng):
    store = init_params(SMALL_VIT, 0)
    out = vit_forward([], store, SMALL_VIT)
    assert out.shape == (3,) and np.isfinite(out.data).all()
    px = np.zeros(SMALL_VIT.token_dim)
    with pytest.raises(ValueError):
        vit_forward([(1, px), (1, px)], store, SMALL_VIT)
    with pytest.raises(ValueError):
        vit_forward([(4, px)], store, SMALL_VIT)


def test_vit_token_order_does_not_matter(rng):
    store = init_params(SMALL_VIT, 0)
    f, g = _frame_and_grid(rng)
    toks = list(extract_tokens(f, g, g.full_mask()))
    a = vit_forward(toks, store, SMALL_VIT).data
    b = vit_forward([toks[i] for i in (2, 0, 3, 1)], store, SMALL_VIT).data
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
    assert np.array_equal(a, vit_forward(toks, store, SMALL_VIT).data)


@given(st.lists(st.booleans(), min_size=4, max_size=4), st.integers(0, 2 ** 16))
def test_vit_ignores_unsensed_pixels(sensed, seed):
    rng = np.random.default_rng(seed)
    store = init_params(SMALL_VIT, 0)
    f, g = _frame_and_grid(rng)
    mask = PatchMask(g, np.array(sensed))
    noisy = f.data.copy()
    noisy[~np.repeat(np.repeat(mask.sensed.reshape(2, 2), 2, 0), 2, 1)] = rng.random()
    a = vit_forward(extract_tokens(f, g, mask), store, SMALL_VIT).data
    b = vit_forward(extract_tokens(Frame(noisy), g, mask), store, SMALL_VIT).data
    assert a.tobytes() == b.tobytes()


def test_masked_batch_matches_single_forward(rng):
    store = init_params(SMALL_VIT, 0)
    g = PatchGrid(2, 2, 2)
    frames = rng.random((5, 4, 4, 1))
    sensed = np.array([[1, 1, 1, 1], [1, 0, 0, 1], [0, 0, 0, 0], [0, 1, 0, 0], [1, 0, 0, 1]], dtype=bool)
    batch = vit_logits_masked(patchify(frames, g), sensed, store, SMALL_VIT).data
    for i in range(5):
        single = vit_forward(extract_tokens(Frame(frames[i]), g, PatchMask(g, sensed[i])), store, SMALL_VIT).data
        np.testing.assert_allclose(batch[i], single, rtol=0, atol=1e-12)


def test_gru_zero_weights():
    cfg = GRUConfig(d_in=2, d_h=3, n_patches=4)
    store = init_params(cfg, 0)
    for t in store.params.values():
        t.data[...] = 0.0
    h = T.Tensor([0.4, -0.2, 0.9])
    h_new, logits = gru_step(T.Tensor(np.ones(8)), h, store)
    np.testing.assert_allclose(h_new.data, 0.5 * h.data, rtol=0, atol=1e-15)
    assert not logits.data.any()
    with pytest.raises(ValueError):
        gru_step(T.Tensor(np.ones(7)), h, store)


def test_gru_fixed_point_residual_shrinks(rng):
    cfg = GRUConfig(d_in=2, d_h=8, n_patches=4)
    store = init_params(cfg, 0)
    store["gru.Uh"].data *= 0.3     # contraction
    x = T.Tensor(rng.random(8))
    h = initial_state(store)
    residuals = []
    for _ in range(30):
        h_new, _ = gru_step(x, h, store)
        residuals.append(np.abs(h_new.data - h.data).max())
        h = h_new
    assert residuals[-1] < residuals[1] * 1e-2


@given(st.lists(st.floats(-0.99, 0.99), min_size=5, max_size=5), st.integers(0, 1000))
def test_gru_state_stays_in_unit_box(h0, seed):
    cfg = GRUConfig(d_in=2, d_h=5, n_patches=3)
    store = init_params(cfg, seed)
    h = T.Tensor(h0)
    x = T.Tensor(np.random.default_rng(seed).normal(scale=3, size=6))
    for _ in range(5):
        h, _ = gru_step(x, h, store)
        assert np.all(np.abs(h.data) < 1)


def test_frame_features_examples():
    g = PatchGrid(2, 2, 2)
    gray = Frame(np.full((4, 4, 1), 0.5))
    assert frame_features(gray, g, g.full_mask()).tolist() == [0.5, 1.0] * 4
    assert not frame_features(gray, g, g.empty_mask()).any()
    data = np.zeros((4, 4, 1))
    data[2:4, 0:2] = 0.25
    feat = frame_features(Frame(data), g, PatchMask.from_indices(g, [2])).reshape(4, 2)
    assert feat.tolist() == [[0, 0], [0, 0], [0.25, 1], [0, 0]]


def test_dense_bias_path_and_masking_sensitivity(rng):
    cfg = DenseConfig(input_dim=16, hidden=(6,), classes=2)
    store = init_params(cfg, 0)
    for name in ("dense.fc0.b", "dense.fc1.b"):
        store[name].data[:] = rng.normal(size=store[name].shape)
    zero = dense_forward(np.zeros((1, 4, 4, 1)), store, cfg).data[0]
    expected = np.maximum(store["dense.fc0.b"].data, 0) @ store["dense.fc1.w"].data + store["dense.fc1.b"].data
    np.testing.assert_allclose(zero, expected, rtol=0, atol=1e-15)
    g = PatchGrid(2, 2, 2)
    f = Frame(rng.random((4, 4, 1)))
    masked = zero_fill(f, g, PatchMask.from_indices(g, [0, 1, 2]))
    assert not np.array_equal(dense_forward(f, store, cfg).data, dense_forward(masked, store, cfg).data)
    with pytest.raises(ValueError):
        dense_forward(np.zeros((1, 3, 3, 1)), store, cfg)

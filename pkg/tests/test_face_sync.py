"""Sync losses, disjoint attention gating, and the toy AV encoder."""

import time

import numpy as np
import pytest

from conftest import rel_err

from headfield.face_sync import (BLENDSHAPE_NAMES, core_expression_indices,
                                 cosine_sim, cosine_sim_grad,
                                 disentangle_features, make_toy_av_data,
                                 masked_attention, pair_discrimination,
                                 recon_loss, recon_loss_grad,
                                 select_core_expression, sync_loss,
                                 sync_loss_grad, train_toy_av_encoder)

LOG_HALF = 0.6931471805599453


def test_cosine_similarity_known_value():
    a = np.array([1.0, 2.0, 2.0])
    b = np.array([2.0, 1.0, 0.0])
    # (2 + 2 + 0) / (3 * sqrt(5))
    assert abs(cosine_sim(a, b) - 4.0 / (3.0 * np.sqrt(5.0))) < 1e-15
    assert abs(cosine_sim(a, b) - 0.5962847939999439) < 1e-15
    assert abs(cosine_sim(a, a) - 1.0) < 1e-15
    assert abs(cosine_sim(a, -a) + 1.0) < 1e-15


def test_cosine_similarity_scale_invariance():
    rng = np.random.default_rng(0)
    a = rng.standard_normal(8)
    b = rng.standard_normal(8)
    base = cosine_sim(a, b)
    scales = rng.uniform(1e-6, 1e6, size=(1000, 2))
    for la, lb in scales:
        assert abs(cosine_sim(la * a, lb * b) - base) < 1e-12


def test_cosine_similarity_rejects_zero_vectors():
    with pytest.raises(ValueError):
        cosine_sim(np.zeros(4), np.ones(4))
    with pytest.raises(ValueError):
        cosine_sim(np.ones((2, 4)), np.array([[1.0, 0, 0, 0], [0, 0, 0, 0]]))


def test_cosine_grad_matches_finite_differences():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((5, 6))
    b = rng.standard_normal((5, 6))
    ga, gb = cosine_sim_grad(a, b)
    eps = 1e-6
    da = rng.standard_normal(a.shape)
    db = rng.standard_normal(b.shape)
    fd_a = (cosine_sim(a + eps * da, b) - cosine_sim(a - eps * da, b)) / (2 * eps)
    fd_b = (cosine_sim(a, b + eps * db) - cosine_sim(a, b - eps * db)) / (2 * eps)
    assert rel_err((ga * da).sum(axis=1), fd_a) < 1e-8
    assert rel_err((gb * db).sum(axis=1), fd_b) < 1e-8


def test_sync_loss_spot_values():
    assert abs(sync_loss(0.5, 1.0) - LOG_HALF) < 1e-12
    # a confidently wrong-signed similarity on a mismatched pair costs ~0
    assert sync_loss(-0.3, 0.0) < 1e-6
    # saturation never produces non-finite values
    assert np.isfinite(sync_loss(1.5, 1.0))
    assert np.isfinite(sync_loss(-2.0, 1.0))
    assert np.isfinite(sync_loss(1.0, 0.0))
    # mean reduction over an array
    val = sync_loss(np.array([0.5, 0.5]), np.array([1.0, 1.0]))
    assert abs(val - LOG_HALF) < 1e-12


def test_sync_loss_grad_matches_finite_differences():
    sims = np.array([0.2, 0.5, 0.9])
    ys = np.array([1.0, 0.0, 1.0])
    g = sync_loss_grad(sims, ys)
    eps = 1e-7
    for k in range(3):
        d = np.zeros(3)
        d[k] = eps
        fd = (sync_loss(sims + d, ys) - sync_loss(sims - d, ys)) / (2 * eps)
        assert abs(g[k] - fd) < 1e-6


def test_sync_loss_grad_is_zero_where_clamped():
    g = sync_loss_grad(np.array([-0.5, 0.0, 1.2]), np.array([1.0, 1.0, 0.0]))
    assert np.array_equal(g, np.zeros(3))


def test_recon_loss_constant_offset():
    rng = np.random.default_rng(2)
    y = rng.standard_normal((10, 4))
    assert abs(recon_loss(y + 0.1, y) - 0.1) < 1e-12
    assert recon_loss(y, y) == 0.0
    with pytest.raises(ValueError):
        recon_loss(np.zeros((2, 3)), np.zeros((3, 2)))


def test_recon_loss_grad_matches_finite_differences():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 3))
    y = rng.standard_normal((4, 3))
    g = recon_loss_grad(x, y)
    eps = 1e-7
    d = rng.standard_normal(x.shape)
    fd = (recon_loss(x + eps * d, y) - recon_loss(x - eps * d, y)) / (2 * eps)
    assert abs((g * d).sum() - fd) < 1e-6


def test_masked_attention_splits_disjoint_supports():
    v = np.array([0.5, -1.0, 2.0, 0.25])
    m_lip = np.array([1.0, 1.0, 0.0, 0.0])
    m_exp = np.array([0.0, 0.0, 1.0, 0.5])
    v_lip, v_exp = masked_attention(v, m_lip, m_exp)
    assert np.array_equal(v_lip, [0.5, -1.0, 0.0, 0.0])
    assert np.array_equal(v_exp, [0.0, 0.0, 2.0, 0.125])
    assert np.all(v_lip * v_exp == 0.0)


def test_masked_attention_rejects_bad_masks():
    v = np.ones(3)
    with pytest.raises(ValueError, match="overlap"):
        masked_attention(v, np.array([1.0, 1, 0]), np.array([0.0, 1, 1]))
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        masked_attention(v, np.array([1.0, -0.1, 0]), np.array([0.0, 0, 1]))
    with pytest.raises(ValueError, match="shape"):
        masked_attention(v, np.ones(4), np.zeros(4))


def test_disentangled_outputs_ignore_the_other_feature():
    rng = np.random.default_rng(4)
    v = rng.uniform(-1, 1, 8)
    m_lip = np.array([1.0, 1, 1, 1, 0, 0, 0, 0])
    m_exp = 1.0 - m_lip
    v_lip, v_exp = masked_attention(v, m_lip, m_exp)
    f_lip = rng.standard_normal(8)
    out_lip_a, out_exp_a = disentangle_features(f_lip, np.zeros(8), v_lip, v_exp)
    out_lip_b, out_exp_b = disentangle_features(f_lip, rng.standard_normal(8) * 100,
                                                v_lip, v_exp)
    # lip output is bit-identical under any expression input: the
    # cross-gradient is exactly zero, not just small
    assert np.array_equal(out_lip_a, out_lip_b)
    assert not np.array_equal(out_exp_a, out_exp_b)
    out_exp_c = disentangle_features(rng.standard_normal(8) * 9, np.ones(8),
                                     v_lip, v_exp)[1]
    assert np.array_equal(out_exp_c, disentangle_features(f_lip, np.ones(8),
                                                          v_lip, v_exp)[1])


def test_disentangle_rejects_width_mismatch():
    with pytest.raises(ValueError):
        disentangle_features(np.ones(3), np.ones(3), np.ones(4), np.ones(3))


def test_blendshape_channel_table():
    assert len(BLENDSHAPE_NAMES) == 52
    assert len(set(BLENDSHAPE_NAMES)) == 52
    assert BLENDSHAPE_NAMES == sorted(BLENDSHAPE_NAMES, key=str.lower)
    idx = core_expression_indices()
    assert idx.tolist() == [0, 1, 2, 3, 4, 8, 9]


def test_select_core_expression_gathers_columns():
    rng = np.random.default_rng(5)
    w = rng.uniform(0, 1, size=(6, 52))
    out = select_core_expression(w)
    assert out.shape == (6, 7)
    assert np.array_equal(out, w[:, [0, 1, 2, 3, 4, 8, 9]])
    with pytest.raises(ValueError):
        select_core_expression(np.zeros((2, 10)))


def test_toy_av_encoder_separates_pairs():
    audio, visual = make_toy_av_data(n_pairs=256, seed=0)
    start = time.time()
    audio_net, visual_net, history = train_toy_av_encoder(audio, visual, seed=0)
    elapsed = time.time() - start
    acc = pair_discrimination(audio_net, visual_net, audio, visual)
    assert acc >= 0.95
    assert elapsed < 60.0
    assert history["loss"][-1] < history["loss"][0]
    assert history["accuracy"][-1] >= 0.95


def test_toy_av_encoder_needs_two_pairs():
    audio, visual = make_toy_av_data(n_pairs=1, seed=0)
    with pytest.raises(ValueError):
        train_toy_av_encoder(audio, visual)


def test_pair_discrimination_on_ideal_embeddings():
    class Identity:
        def forward(self, x):
            return x

    rng = np.random.default_rng(6)
    emb = rng.standard_normal((32, 8))
    net = Identity()
    assert pair_discrimination(net, net, emb, emb) >= 0.95

"""Conditioned field: routing, clamps, conditioning paths, gradients."""

import numpy as np
import pytest

from conftest import rel_err, tiny_field

from headfield.nn import sh_basis_deg4
from headfield.radiance_field import RadianceField


def unit_dirs(rng, n):
    d = rng.standard_normal((n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def sample_inputs(seed=0, n=6, lip_dim=4, exp_dim=3):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-0.8, 0.8, size=(n, 3))
    dirs = unit_dirs(rng, n)
    f_lip = rng.standard_normal(lip_dim)
    f_exp = rng.standard_normal(exp_dim)
    return rng, pts, dirs, f_lip, f_exp


def test_output_ranges_and_shapes():
    field = tiny_field(seed=1)
    _, pts, dirs, f_lip, f_exp = sample_inputs(1)
    color, sigma = field.forward(pts, dirs, f_lip, f_exp)
    assert color.shape == (6, 3) and sigma.shape == (6,)
    assert np.all(color > 0) and np.all(color < 1)
    assert np.all(sigma >= 0)


def test_zeroed_nets_give_mid_gray_and_unit_density():
    field = tiny_field(seed=2)
    for net in (field.density_net, field.color_net):
        for w in net.weights:
            w[...] = 0.0
        for b in net.biases:
            b[...] = 0.0
    _, pts, dirs, f_lip, f_exp = sample_inputs(2)
    color, sigma = field.forward(pts, dirs, f_lip, f_exp)
    assert np.all(color == 0.5)       # sigmoid(0)
    assert np.all(sigma == 1.0)       # exp(0)


def test_non_unit_directions_rejected_unless_basis_given():
    field = tiny_field(seed=3)
    _, pts, dirs, f_lip, f_exp = sample_inputs(3)
    with pytest.raises(ValueError, match="unit length"):
        field.forward(pts, 2.0 * dirs, f_lip, f_exp)
    # a precomputed basis bypasses the direction check entirely
    sh = sh_basis_deg4(dirs)
    ca, cb = {}, {}
    ref = field.forward(pts, dirs, f_lip, f_exp, cache=ca)
    alt = field.forward(pts, None, f_lip, f_exp, cache=cb, sh=sh)
    assert np.array_equal(ref[0], alt[0])
    assert np.array_equal(ref[1], alt[1])


def test_injected_basis_skips_direction_gradient():
    field = tiny_field(seed=4)
    rng, pts, dirs, f_lip, f_exp = sample_inputs(4)
    cache = {}
    field.forward(pts, None, f_lip, f_exp, cache=cache, sh=sh_basis_deg4(dirs))
    g = field.backward(cache, rng.standard_normal((6, 3)),
                       rng.standard_normal(6))
    assert g["sh"] is None
    cache = {}
    field.forward(pts, dirs, f_lip, f_exp, cache=cache)
    g = field.backward(cache, rng.standard_normal((6, 3)),
                       rng.standard_normal(6))
    assert g["sh"].shape == (6, 16)


def test_conditioning_size_errors():
    field = tiny_field(seed=5)
    _, pts, dirs, _, f_exp = sample_inputs(5)
    with pytest.raises(ValueError, match="conditioning vector"):
        field.forward(pts, dirs, np.zeros(9), f_exp)
    with pytest.raises(ValueError, match="conditioning batch"):
        field.forward(pts, dirs, np.zeros((2, 4)), f_exp)


def test_density_ignores_conditioning():
    field = tiny_field(seed=6)
    rng, pts, dirs, f_lip, f_exp = sample_inputs(6)
    _, sigma_a = field.forward(pts, dirs, f_lip, f_exp)
    _, sigma_b = field.forward(pts, dirs, 10.0 + f_lip, -3.0 * f_exp)
    assert np.array_equal(sigma_a, sigma_b)
    # but color does respond
    color_a, _ = field.forward(pts, dirs, f_lip, f_exp)
    color_b, _ = field.forward(pts, dirs, 10.0 + f_lip, f_exp)
    assert not np.allclose(color_a, color_b)


def test_shared_conditioning_matches_per_sample_batch():
    field = tiny_field(seed=7)
    rng, pts, dirs, f_lip, f_exp = sample_inputs(7)
    n = pts.shape[0]
    ca, cb = {}, {}
    out_a = field.forward(pts, dirs, f_lip, f_exp, cache=ca)
    out_b = field.forward(pts, dirs, np.tile(f_lip, (n, 1)),
                          np.tile(f_exp, (n, 1)), cache=cb)
    assert np.allclose(out_a[0], out_b[0], atol=1e-12)
    assert np.allclose(out_a[1], out_b[1], atol=1e-12)

    dc = rng.standard_normal((n, 3))
    ds = rng.standard_normal(n)
    ga = field.backward(ca, dc, ds)
    gb = field.backward(cb, dc, ds)
    for a, b in zip(ga["tables"], gb["tables"]):
        assert np.allclose(a, b, atol=1e-10)
    for part in ("density", "color"):
        for a, b in zip(ga[part][0] + ga[part][1], gb[part][0] + gb[part][1]):
            assert np.allclose(a, b, atol=1e-10)
    # shared-vector gradient is the row sum of the per-sample gradient
    assert ga["f_lip"].shape == (field.lip_dim,)
    assert gb["f_lip"].shape == (n, field.lip_dim)
    assert np.allclose(ga["f_lip"], gb["f_lip"].sum(axis=0), atol=1e-10)
    assert np.allclose(ga["f_exp"], gb["f_exp"].sum(axis=0), atol=1e-10)


def test_backward_matches_directional_difference():
    field = tiny_field(seed=8)
    rng, pts, dirs, f_lip, f_exp = sample_inputs(8)
    up_c = rng.standard_normal((6, 3))
    up_s = rng.standard_normal(6)

    cache = {}
    field.forward(pts, dirs, f_lip, f_exp, cache=cache)
    g = field.backward(cache, up_c, up_s)

    def loss():
        c, s = field.forward(pts, dirs, f_lip, f_exp)
        return float((c * up_c).sum() + (s * up_s).sum())

    probes = [
        (field.encoder.planes[1].tables, g["tables"][1]),
        (field.density_net.weights[1], g["density"][0][1]),
        (field.density_net.biases[0], g["density"][1][0]),
        (field.color_net.weights[0], g["color"][0][0]),
    ]
    # parameter probes stay off the encoding's cell boundaries, so a larger
    # step is safe and keeps cancellation noise below the tolerance
    eps = 1e-4
    for p, grad in probes:
        d = rng.standard_normal(p.shape)
        p += eps * d
        hi = loss()
        p -= 2 * eps * d
        lo = loss()
        p += eps * d
        fd = (hi - lo) / (2 * eps)
        assert rel_err(float((grad * d).sum()), fd) < 1e-6

    # conditioning gradients: sigma ignores conditioning, so a color-only
    # probe captures the whole derivative
    def color_loss(lip, exp):
        return float((field.forward(pts, dirs, lip, exp)[0] * up_c).sum())

    d_lip = rng.standard_normal(f_lip.shape)
    fd = (color_loss(f_lip + eps * d_lip, f_exp)
          - color_loss(f_lip - eps * d_lip, f_exp)) / (2 * eps)
    assert rel_err(float((g["f_lip"] * d_lip).sum()), fd) < 1e-6

    d_exp = rng.standard_normal(f_exp.shape)
    fd = (color_loss(f_lip, f_exp + eps * d_exp)
          - color_loss(f_lip, f_exp - eps * d_exp)) / (2 * eps)
    assert rel_err(float((g["f_exp"] * d_exp).sum()), fd) < 1e-6


def test_sigma_clamp_saturates_and_blocks_gradient():
    field = tiny_field(seed=9, sigma_clamp=2.0)
    # bias the raw sigma far above the clamp
    field.density_net.biases[-1][0] = 50.0
    rng, pts, dirs, f_lip, f_exp = sample_inputs(9)
    cache = {}
    _, sigma = field.forward(pts, dirs, f_lip, f_exp, cache=cache)
    assert np.all(sigma == 2.0)
    g = field.backward(cache, np.zeros((6, 3)), np.ones(6))
    for tg in g["tables"]:
        assert np.all(tg == 0.0)
    for arr in g["density"][0] + g["density"][1]:
        assert np.all(arr == 0.0)


def test_want_points_false_skips_point_gradient():
    field = tiny_field(seed=10)
    rng, pts, dirs, f_lip, f_exp = sample_inputs(10)
    cache = {}
    field.forward(pts, dirs, f_lip, f_exp, cache=cache)
    g = field.backward(cache, rng.standard_normal((6, 3)),
                       rng.standard_normal(6), want_points=False)
    assert g["points"] is None
    cache = {}
    field.forward(pts, dirs, f_lip, f_exp, cache=cache)
    g = field.backward(cache, rng.standard_normal((6, 3)),
                       rng.standard_normal(6), want_points=True)
    assert g["points"].shape == (6, 3)


def test_config_round_trip_reproduces_field():
    field = tiny_field(seed=11, aabb=(-1.5, 2.0))
    clone = RadianceField.from_config(field.config())
    _, pts, dirs, f_lip, f_exp = sample_inputs(11)
    a = field.forward(pts, dirs, f_lip, f_exp)
    b = clone.forward(pts, dirs, f_lip, f_exp)
    assert np.array_equal(a[0], b[0])
    assert np.array_equal(a[1], b[1])


def test_gradient_lists_align_with_parameter_groups():
    field = tiny_field(seed=12)
    rng, pts, dirs, f_lip, f_exp = sample_inputs(12)
    cache = {}
    field.forward(pts, dirs, f_lip, f_exp, cache=cache)
    g = field.backward(cache, rng.standard_normal((6, 3)),
                       rng.standard_normal(6))
    tables, nets = field.parameter_groups()
    g_tables, g_nets = field.gradient_lists(g)
    assert len(tables) == len(g_tables) == 3
    assert len(nets) == len(g_nets)
    for p, gr in zip(tables + nets, g_tables + g_nets):
        assert p.shape == gr.shape

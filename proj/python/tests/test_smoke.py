import math

import numpy as np
import pytest

import liepush


def rodrigues(w):
    theta = np.linalg.norm(w)
    k = np.array([[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]]) / theta
    return np.eye(3) + math.sin(theta) * k + (1 - math.cos(theta)) * k @ k


def test_exp_and_log_roundtrip():
    w = np.array([0.3, -1.1, 0.7])
    r = liepush.exp_map("so3", w)
    np.testing.assert_allclose(r, rodrigues(w), atol=1e-12)
    np.testing.assert_allclose(liepush.log_map("so3", r), w, atol=1e-10)


def test_preimages_map_back():
    w = np.array([0.2, 0.4, -0.1])
    r = liepush.exp_map("so3", w)
    branches = liepush.preimages("so3", r, 2)
    assert len(branches) > 1
    for v in branches:
        np.testing.assert_allclose(liepush.exp_map("so3", v), r, atol=1e-10)


def test_jacobian_routes_agree():
    w = np.array([0.5, 1.0, -0.8])
    theta = np.linalg.norm(w)
    expected = theta**2 / (2 - 2 * math.cos(theta))
    for method in ("closed", "series", "spectrum"):
        assert liepush.jacobian("so3", w, method) == pytest.approx(expected, rel=1e-10)
    assert liepush.jacobian("so3", w, "numeric") == pytest.approx(expected, rel=1e-5)
    assert liepush.jacobian("t3", np.array([1.0, 2.0, 3.0])) == 1.0


def test_killing_form_basis():
    e = np.eye(3)
    assert liepush.killing_form("so3", e[0], e[0]) == pytest.approx(2.0, abs=1e-12)
    assert liepush.killing_form("so3", e[0], e[1]) == pytest.approx(0.0, abs=1e-12)


def test_circle_pushforward_matches_wrapped_normal():
    dist = liepush.Pushforward("t1", 0.5, k_trunc=20)
    g = liepush.exp_map("t1", np.array([1.0]))
    ks = np.arange(-50, 51)
    expected = np.sum(np.exp(-0.5 * ((1.0 + 2 * np.pi * ks) / 0.5) ** 2)) / (0.5 * math.sqrt(2 * math.pi))
    assert math.exp(dist.log_density(g)) == pytest.approx(expected, rel=1e-12)
    assert dist.normalization(2000) == pytest.approx(1.0, abs=1e-6)


def test_sampling_is_seeded_and_consistent():
    dist = liepush.Pushforward("so3", 0.6, loc=np.array([0.1, 0.2, 0.3]))
    eps_a, g_a, lp_a = dist.sample(20, seed=3)
    eps_b, g_b, lp_b = dist.sample(20, seed=3)
    np.testing.assert_array_equal(eps_a, eps_b)
    np.testing.assert_array_equal(lp_a, lp_b)
    assert eps_a.shape == (20, 3)
    for g, lp in zip(g_a, lp_a):
        assert dist.log_density(g) == pytest.approx(lp, abs=1e-9)


def test_singular_point_raises():
    dist = liepush.Pushforward("so3", 0.5)
    with pytest.raises(liepush.LiepushError):
        dist.log_density(np.eye(3))
    with pytest.raises(liepush.InvalidArgument):
        liepush.exp_map("so4", np.zeros(3))


def test_flow_sample_and_checkpoint():
    flow = liepush.Flow(r_squash=1.8 * math.pi, seed=4, weight_scale=0.3)
    rotations, log_prob = flow.sample(10, seed=5)
    for r, lp in zip(rotations, log_prob):
        np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-10)
        assert flow.log_prob(r) == pytest.approx(lp, abs=1e-8)
    restored = liepush.Flow.from_checkpoint(flow.checkpoint())
    assert restored.num_parameters == flow.num_parameters
    assert restored.log_prob(rotations[0]) == pytest.approx(log_prob[0], abs=1e-12)

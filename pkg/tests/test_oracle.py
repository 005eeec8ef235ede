import math

import numpy as np
import pytest

from gavis.errors import ParameterError
from gavis.fixtures import stacked_pair, wall_scene
from gavis.oracle import (
    GmmSpec, exact_multiview_visibility, fibonacci_sphere, huber_bound, mc_gmm_entropy, quadrature_project_sh,
    raymarch_transmittance, scipy_real_sh,
)
from gavis.scene import Scene
from gavis.shmath import VmfParams, sh_index, vmf_sh_coeffs
from gavis.vfield import am_gm_bound

H_UNIT = 1.5 * math.log(2 * math.pi * math.e)


def test_fibonacci_sphere_is_unit_and_balanced():
    d = fibonacci_sphere(5000)
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-12)
    assert np.abs(d.mean(axis=0)).max() < 1e-3


def test_quadrature_examples():
    c = quadrature_project_sh(lambda d: np.ones(len(d)), 3, 20_000).coeffs
    assert c[0] == pytest.approx(2 * math.sqrt(math.pi), abs=1e-3)
    assert np.abs(c[1:]).max() < 1e-3
    k = sh_index(2, 1)
    c = quadrature_project_sh(lambda d: scipy_real_sh(2, d)[:, k], 4, 100_000).coeffs
    assert c[k] == pytest.approx(1.0, abs=1e-3)
    assert np.abs(np.delete(c, k)).max() < 1e-3
    with pytest.raises(ParameterError):
        quadrature_project_sh(lambda d: np.ones(len(d)), 4, 100)


def test_quadrature_matches_vmf_closed_form():
    dp = np.array([0.3, -0.5, 0.81])
    dp /= np.linalg.norm(dp)
    ref = quadrature_project_sh(lambda d: np.exp(d @ dp - 1.0), 4, 100_000).coeffs
    got = vmf_sh_coeffs(dp, VmfParams(1.0), 4).coeffs
    assert np.abs(ref - got).max() < 1e-3


def test_exact_multiview_examples():
    assert exact_multiview_visibility([]) == 0.0
    assert exact_multiview_visibility([1.0, 0.37]) == 1.0
    assert exact_multiview_visibility([0.3] * 4) == pytest.approx(0.7599, abs=1e-12)
    rng = np.random.default_rng(3)
    for _ in range(100):
        v = rng.random(int(rng.integers(1, 10)))
        assert exact_multiview_visibility(v) >= am_gm_bound(v.sum(), len(v)) - 1e-15


def test_raymarch_examples():
    assert raymarch_transmittance(Scene.empty(), [0, 0, 0.0], [0, 0, 3.0], 1e-2) == 1.0
    s, t = wall_scene(opacity=1.0, scale=0.1, spacing=0.2)
    T = raymarch_transmittance(s, [0, 0, 0.0], s.positions[t[0]], 1e-3)
    # straight through one wall particle centre: one clamped crossing, dimmed a little more by the
    # tails of its four neighbours
    assert 0.01 * (1 - math.exp(-2.0)) ** 4 * 0.9 <= T <= 0.01
    assert raymarch_transmittance(stacked_pair(), [0, 0, 0.0], [0, 0, 3.0], 1e-3) == pytest.approx(0.01, abs=1e-6)
    with pytest.raises(ParameterError):
        raymarch_transmittance(s, [0, 0, 0.0], [0, 0, 3.0], 0.0)


@pytest.mark.parametrize("opacity", [0.3, 0.95])
def test_raymarch_converges(opacity):
    s, t = wall_scene(opacity=opacity, targets=[(0.07, -0.13, 3.0)])
    for step in (1e-2, 5e-3):
        a = raymarch_transmittance(s, [0, 0, 0.0], s.positions[t[0]], step)
        b = raymarch_transmittance(s, [0, 0, 0.0], s.positions[t[0]], step / 2)
        assert abs(a - b) < 1e-3


def test_raymarch_excludes_target():
    s = stacked_pair()
    assert raymarch_transmittance(s, [0, 0, 0.0], [0, 0, 2.0], 1e-3) == 1.0
    assert raymarch_transmittance(s, [0, 0, 0.0], [0, 0, 3.0], 1e-3, exclude=[0, 1]) == 1.0


def test_mc_entropy_examples():
    one = GmmSpec([1.0], [[0.2, 0.4, 0.6]], [np.eye(3)])
    est, se = mc_gmm_entropy(one, np.eye(3), 100_000, seed=0)
    assert abs(est - H_UNIT) <= 3 * se
    assert huber_bound(one, np.eye(3)) == pytest.approx(H_UNIT, abs=1e-12)
    two = GmmSpec([0.5, 0.5], [[0.2, 0.4, 0.6]] * 2, [np.eye(3)] * 2)
    est2, se2 = mc_gmm_entropy(two, np.eye(3), 100_000, seed=1)
    assert abs(est2 - H_UNIT) <= 3 * se2
    a = mc_gmm_entropy(two, np.eye(3), 20_000, seed=5)
    assert a == mc_gmm_entropy(two, np.eye(3), 20_000, seed=5)


def test_huber_bounds_random_mixtures():
    rng = np.random.default_rng(0)
    for i in range(20):
        k = int(rng.integers(1, 6))
        w = rng.dirichlet(np.ones(k + 1))[:k]
        mu = rng.random((k, 3))
        covs = [np.diag(rng.uniform(1e-3, 0.05, 3)) for _ in range(k)]
        spec = GmmSpec(w, mu, covs)
        est, se = mc_gmm_entropy(spec, np.eye(3), 20_000, seed=i)
        assert huber_bound(spec, np.eye(3)) >= est - 3 * se


def test_gmm_errors():
    with pytest.raises(ParameterError):
        GmmSpec([0.6, 0.6], np.zeros((2, 3)), [np.eye(3)] * 2)
    with pytest.raises(ParameterError):
        GmmSpec([-0.1], np.zeros((1, 3)), [np.eye(3)])
    with pytest.raises(ParameterError):
        GmmSpec([0.5], np.zeros((1, 3)), [-np.eye(3)])
    with pytest.raises(ParameterError):
        mc_gmm_entropy(GmmSpec([0.5], np.zeros((1, 3)), [np.eye(3)]), -np.eye(3), 10_000, 0)
    with pytest.raises(ParameterError):
        mc_gmm_entropy(GmmSpec([0.5], np.zeros((1, 3)), [np.eye(3)]), np.eye(3), 100, 0)

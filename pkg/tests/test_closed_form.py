import numpy as np
import pytest

from nllpo import autodiff as ad
from nllpo.closed_form import (
    entropy_gaussian,
    inner_solution,
    isotropic_reward,
    maximize_inner_objective,
    minimize_outer_objective,
    optimal_reward,
    outer_nll_at_inner_optimum,
    outer_nll_isotropic,
    verify_family,
)
from nllpo.errors import DimensionMismatch
from nllpo.linalg import SpdMatrix, cholesky, log_det, random_spd, spd_inverse
from nllpo.models import LinearGaussianTruth
from nllpo.objectives import closed_form_J, closed_form_J_expr


def random_instance(seed, n=3, m=2):
    rng = np.random.default_rng(seed)
    truth = LinearGaussianTruth(rng.uniform(-1, 1, (n, m)), random_spd(n, rng))
    return rng, truth, random_spd(n, rng), random_spd(m, rng)


# optimal_reward


def test_optimal_reward_examples():
    np.testing.assert_allclose(optimal_reward(SpdMatrix.identity(3), 2.0).matrix, np.eye(3))
    np.testing.assert_allclose(optimal_reward(SpdMatrix.diagonal([4.0, 4.0]), 1.0).matrix, np.diag([0.125, 0.125]))


def test_optimal_reward_product_with_sigma():
    sigma = random_spd(3, np.random.default_rng(0))
    lam = 1.5
    u = optimal_reward(sigma, lam)
    np.testing.assert_allclose((2.0 / lam) * u.matrix @ sigma.matrix, np.eye(3), atol=1e-10)


def test_optimal_reward_rejects_nonpositive_lambda():
    with pytest.raises(ValueError):
        optimal_reward(SpdMatrix.identity(2), 0.0)


# isotropic_reward and verify_family


def test_isotropic_reward_examples():
    assert isotropic_reward(SpdMatrix.diagonal([1.0, 3.0]), 1.0) == pytest.approx(0.25)
    beta2, lam = 0.36, 1.4
    u = isotropic_reward(SpdMatrix.diagonal([beta2] * 3), lam)
    assert u == pytest.approx(lam / (2 * beta2))
    np.testing.assert_allclose(u * np.eye(3), optimal_reward(SpdMatrix.diagonal([beta2] * 3), lam).matrix, rtol=1e-12)


def test_isotropic_element_in_family():
    sigma = random_spd(4, np.random.default_rng(1))
    lam = 0.7
    u = isotropic_reward(sigma, lam)
    assert np.trace(u * np.eye(4)) == pytest.approx(lam * 16 / (2 * np.trace(sigma.matrix)))
    assert verify_family(SpdMatrix.diagonal([u] * 4), sigma, lam, tol=1e-9)
    assert not verify_family(SpdMatrix.diagonal([2 * u] * 4), sigma, lam, tol=1e-9)


def test_trace_preserving_perturbation_in_family():
    sigma = random_spd(3, np.random.default_rng(2))
    lam = 1.0
    u = isotropic_reward(sigma, lam)
    perturbed = SpdMatrix.diagonal([u * 1.4, u * 0.8, u * 0.8])
    assert verify_family(perturbed, sigma, lam, tol=1e-9)
    assert not verify_family(SpdMatrix.identity(2), sigma, lam)


# inner_solution


def test_inner_solution_examples():
    lam_mat = np.array([[1.0, -0.5], [0.2, 0.3]])
    truth = LinearGaussianTruth(lam_mat, SpdMatrix.identity(2))
    sol = inner_solution(SpdMatrix.identity(2), truth, 2.0)
    np.testing.assert_array_equal(sol.a_star, lam_mat)
    np.testing.assert_allclose(sol.b_star.matrix, np.eye(2))


@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("seed", range(5))
def test_moment_matching(seed, lam):
    _, truth, _, _ = random_instance(seed)
    sol = inner_solution(optimal_reward(truth.sigma, lam), truth, lam)
    assert np.max(np.abs(sol.b_star.matrix - truth.sigma.matrix)) <= 1e-8


def test_inner_solution_dimension_mismatch():
    truth = LinearGaussianTruth(np.eye(2), SpdMatrix.identity(2))
    with pytest.raises(DimensionMismatch):
        inner_solution(SpdMatrix.identity(3), truth, 1.0)


def _j_of_flat(truth, u, lam, sigma_x):
    n, m = truth.lam.shape

    def fn(z):
        a = ad.reshape(z[: n * m], (n, m))
        b = ad.reshape(z[n * m :], (n, n))
        b = 0.5 * (b + ad.transpose(b))
        return closed_form_J_expr(a, b, truth.lam, u.matrix, truth.sigma.matrix, lam, sigma_x.matrix)

    return fn


def test_first_order_optimality():
    _, truth, u, sigma_x = random_instance(3)
    lam = 1.2
    sol = inner_solution(u, truth, lam)
    z = np.concatenate([sol.a_star.ravel(), sol.b_star.matrix.ravel()])
    g = ad.gradient(_j_of_flat(truth, u, lam, sigma_x), z)
    assert np.linalg.norm(g) < 1e-6


def test_strict_optimality_against_perturbations():
    rng, truth, u, sigma_x = random_instance(4)
    lam = 0.8
    sol = inner_solution(u, truth, lam)
    best = closed_form_J(sol.a_star, sol.b_star, truth, u, lam, sigma_x)
    n, m = truth.lam.shape
    checked = 0
    for _ in range(1000):
        scale = 10 ** rng.uniform(-3, 0)
        a = sol.a_star + scale * rng.normal(size=(n, m))
        e = scale * rng.normal(size=(n, n))
        b = sol.b_star.matrix + 0.5 * (e + e.T)
        if np.min(np.linalg.eigvalsh(b)) <= 0:
            continue
        assert closed_form_J(a, b, truth, u, lam, sigma_x) < best
        checked += 1
    assert checked > 500


def test_numerical_inner_maximizer_matches():
    _, truth, u, sigma_x = random_instance(5, n=2, m=2)
    lam = 1.0
    a, b = maximize_inner_objective(truth, u, lam, sigma_x)
    sol = inner_solution(u, truth, lam)
    assert np.max(np.abs(a - sol.a_star)) <= 1e-4
    assert np.max(np.abs(b.matrix - sol.b_star.matrix)) <= 1e-3


# outer problem


def test_outer_nll_minimized_at_optimum():
    rng = np.random.default_rng(6)
    sigma = random_spd(3, rng)
    lam = 1.0
    u_star = optimal_reward(sigma, lam)
    best = outer_nll_at_inner_optimum(u_star, sigma, lam)
    # analytic value: the inner optimum reproduces Sigma, so the NLL is the data entropy
    assert best == pytest.approx(entropy_gaussian(sigma), abs=1e-10)
    for _ in range(300):
        e = 10 ** rng.uniform(-3, -0.5) * rng.normal(size=(3, 3))
        cand = u_star.matrix + 0.5 * (e + e.T)
        if np.min(np.linalg.eigvalsh(cand)) <= 0:
            continue
        assert outer_nll_at_inner_optimum(cholesky(cand), sigma, lam) > best
    for c in (0.5, 0.9, 1.1, 2.0):
        assert outer_nll_at_inner_optimum(u_star.scaled(c), sigma, lam) > best


def test_numerical_outer_minimizer_matches():
    sigma = random_spd(2, np.random.default_rng(7))
    u = minimize_outer_objective(sigma, 2.0)
    u_star = optimal_reward(sigma, 2.0)
    assert np.linalg.norm(u.matrix - u_star.matrix) / np.linalg.norm(u_star.matrix) <= 0.02


def test_isotropic_outer_minimum():
    sigma = SpdMatrix.diagonal([0.3, 0.5, 1.1])
    lam = 1.0
    u_star = isotropic_reward(sigma, lam)
    grid = u_star * np.exp(np.linspace(-1, 1, 201))
    values = [outer_nll_isotropic(u, sigma, lam) for u in grid]
    assert grid[int(np.argmin(values))] == pytest.approx(u_star, rel=0.011)


def test_reverse_kl_equivalence():
    """With ``U*``, the negated inner objective equals ``lam E_X[KL(p || q)]`` up to a constant."""
    rng, truth, _, sigma_x = random_instance(8, n=2, m=3)
    lam = 1.7
    n, m = truth.lam.shape
    u_star = optimal_reward(truth.sigma, lam)
    s_inv = spd_inverse(truth.sigma).matrix
    ld_sigma = log_det(truth.sigma)

    def neg_j(z):
        return -_j_of_flat(truth, u_star, lam, sigma_x)(z)

    def lam_expected_kl(z):
        a = ad.reshape(z[: n * m], (n, m))
        b = ad.reshape(z[n * m :], (n, n))
        b = 0.5 * (b + ad.transpose(b))
        d = a - truth.lam
        mean_term = ad.trace(ad.transpose(d) @ s_inv @ d @ sigma_x.matrix)
        kl = 0.5 * (ad.trace(s_inv @ b) + mean_term - n + ld_sigma - ad.logdet(b))
        return lam * kl

    for _ in range(5):
        a = truth.lam + 0.3 * rng.normal(size=(n, m))
        b = random_spd(n, rng).matrix
        z = np.concatenate([a.ravel(), b.ravel()])
        np.testing.assert_allclose(ad.gradient(neg_j, z), ad.gradient(lam_expected_kl, z), atol=1e-6, rtol=1e-6)
        gap = float(neg_j(z)) - float(lam_expected_kl(z))
        z0 = np.concatenate([truth.lam.ravel(), truth.sigma.matrix.ravel()])
        assert gap == pytest.approx(float(neg_j(z0)) - float(lam_expected_kl(z0)), abs=1e-9)

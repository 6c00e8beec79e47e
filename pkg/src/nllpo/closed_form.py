"""Analytic optima of the reward-learning problem under linear-Gaussian assumptions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .linalg import SpdMatrix, cholesky, log_det, spd_inverse, trace
from .models import LinearGaussianTruth
from .objectives import expected_nll_gaussian


@dataclass(frozen=True)
class InnerSolution:
    a_star: np.ndarray
    b_star: SpdMatrix


def optimal_reward(sigma: SpdMatrix, lam: float) -> SpdMatrix:
    """``U* = (lam / 2) Sigma^{-1}``."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    return spd_inverse(cholesky(sigma)).scaled(0.5 * lam)


def isotropic_reward(sigma: SpdMatrix, lam: float) -> float:
    """Scale ``u`` of the canonical isotropic optimum ``u I_n``, ``u = lam n / (2 Tr Sigma)``."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    sigma = cholesky(sigma)
    return lam * sigma.dim / (2.0 * trace(sigma))


def inner_solution(u: SpdMatrix, truth: LinearGaussianTruth, lam: float) -> InnerSolution:
    """Maximizer of the inner objective: ``A* = Lambda`` and ``B* = (lam / 2) U^{-1}``."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    u = cholesky(u)
    if u.dim != truth.output_dim:
        raise DimensionMismatch(f"U has dim {u.dim}, truth output dim is {truth.output_dim}")
    return InnerSolution(truth.lam.copy(), spd_inverse(u).scaled(0.5 * lam))


def verify_family(u: SpdMatrix, sigma: SpdMatrix, lam: float, tol: float = 1e-9) -> bool:
    """Check membership of ``U`` in the isotropic-case solution set.

    The set is every SPD ``U`` with ``Tr U = lam n^2 / (2 Tr Sigma)``.
    """
    try:
        u = cholesky(u)
    except ValueError:
        return False
    sigma = cholesky(sigma)
    if u.dim != sigma.dim:
        return False
    n = sigma.dim
    target = lam * n * n / (2.0 * trace(sigma))
    return abs(trace(u) - target) <= tol * target


def outer_nll_at_inner_optimum(u: SpdMatrix, sigma: SpdMatrix, lam: float) -> float:
    """Expected data NLL of the inner optimum ``theta*(U)`` (mean terms vanish since ``A* = Lambda``)."""
    b = spd_inverse(cholesky(u)).scaled(0.5 * lam)
    return expected_nll_gaussian(b, sigma)


def outer_nll_isotropic(u: float, sigma: SpdMatrix, lam: float) -> float:
    """Outer NLL for ``U = u I`` when the model variance is restricted to ``s^2 I``.

    The inner optimum is ``s^2 = lam / (2 u)``; returns the expected NLL of
    ``N(Lambda x, s^2 I)`` under ``N(Lambda x, Sigma)``.
    """
    sigma = cholesky(sigma)
    n = sigma.dim
    s2 = lam / (2.0 * u)
    return float(0.5 * (n * np.log(2 * np.pi * s2) + trace(sigma) / s2))


def entropy_gaussian(cov: SpdMatrix) -> float:
    cov = cholesky(cov)
    return 0.5 * (cov.dim * (1.0 + np.log(2 * np.pi)) + log_det(cov))


# ---------------------------------------------------------------------------
# numerical counterparts, used to confirm the closed forms


def _tril_raw_to_factor(raw, n):
    from .objectives import RewardParams

    return RewardParams("full", np.zeros(n * (n + 1) // 2), n).factor(raw)


def _factor_to_raw(factor: np.ndarray) -> np.ndarray:
    rows, cols = np.tril_indices(factor.shape[0])
    raw = factor[rows, cols].copy()
    raw[rows == cols] = np.log(raw[rows == cols])
    return raw


def maximize_inner_objective(
    truth: LinearGaussianTruth, u: SpdMatrix, lam: float, sigma_x: SpdMatrix, a0=None, b0: SpdMatrix | None = None
) -> tuple[np.ndarray, SpdMatrix]:
    """Maximize ``J(A, B)`` with L-BFGS on autodiff gradients.

    ``B`` is searched through its Cholesky factor with a log-diagonal so it stays SPD.
    """
    from scipy.optimize import minimize

    from . import autodiff as ad
    from .objectives import closed_form_J_expr

    u, sigma_x = cholesky(u), cholesky(sigma_x)
    n, m = truth.lam.shape
    a0 = np.zeros((n, m)) if a0 is None else np.asarray(a0, float)
    b0 = SpdMatrix.identity(n) if b0 is None else cholesky(b0)
    x0 = np.concatenate([a0.ravel(), _factor_to_raw(b0.factor)])

    def neg_j(z):
        a = ad.reshape(z[: n * m], (n, m))
        low = _tril_raw_to_factor(z[n * m :], n)
        b = low @ ad.transpose(low)
        return -closed_form_J_expr(a, b, truth.lam, u.matrix, truth.sigma.matrix, lam, sigma_x.matrix)

    res = minimize(
        lambda z: ad.value_and_grad(neg_j, z),
        x0,
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": 20000, "ftol": 1e-16, "gtol": 1e-11, "maxcor": 30},
    )
    a = res.x[: n * m].reshape(n, m)
    low = np.asarray(_tril_raw_to_factor(res.x[n * m :], n))
    return a, SpdMatrix(low)


def minimize_outer_objective(sigma: SpdMatrix, lam: float, u0: SpdMatrix | None = None) -> SpdMatrix:
    """Minimize the outer NLL at the inner optimum over SPD ``U`` (Cholesky parametrized)."""
    from scipy.optimize import minimize

    from . import autodiff as ad

    sigma = cholesky(sigma)
    n = sigma.dim
    s = sigma.matrix
    ld_sigma = log_det(sigma)
    u0 = SpdMatrix.identity(n) if u0 is None else cholesky(u0)

    def nll(z):
        low = _tril_raw_to_factor(z, n)
        u = low @ ad.transpose(low)
        b = (0.5 * lam) * ad.inv(u)
        kl = 0.5 * (ad.trace(ad.inv(b) @ s) - n + ad.logdet(b) - ld_sigma)
        return kl + 0.5 * (n * (1.0 + np.log(2 * np.pi)) + ld_sigma)

    res = minimize(
        lambda z: ad.value_and_grad(nll, z),
        _factor_to_raw(u0.factor),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": 20000, "ftol": 1e-16, "gtol": 1e-11},
    )
    return SpdMatrix(np.asarray(_tril_raw_to_factor(res.x, n)))

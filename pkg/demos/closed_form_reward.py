"""
The optimal Mahalanobis reward in closed form
=============================================

For a linear-Gaussian truth ``y = Lambda x + eps`` with ``eps ~ N(0, Sigma)``,
entropy-regularized policy gradient with reward ``-(y_hat - y)^T U (y_hat - y)``
has a unique linear-Gaussian optimum ``(A, B) = (Lambda, lam U^-1 / 2)``.
Choosing ``U = (lam / 2) Sigma^-1`` makes the policy covariance equal to
``Sigma``, so PG then recovers the maximum-likelihood model.
"""

import numpy as np

from nllpo import SpdMatrix, inner_solution, isotropic_reward, optimal_reward
from nllpo.closed_form import maximize_inner_objective, outer_nll_isotropic
from nllpo.linalg import random_spd
from nllpo.models import LinearGaussianTruth
from nllpo.objectives import closed_form_J

rng = np.random.default_rng(0)
lam = 1.0

# A random problem: 3 outputs, 2 inputs, correlated noise.
sigma = random_spd(3, rng)
truth = LinearGaussianTruth(rng.uniform(-1, 1, (3, 2)), sigma)
sigma_x = random_spd(2, rng)

# With the identity reward the inner optimum has covariance lam/2 I,
# whatever the data noise is.
naive = inner_solution(SpdMatrix.identity(3), truth, lam)
print("policy covariance under U = I:\n", np.round(naive.b_star.matrix, 4))

# With the optimal reward it matches Sigma exactly.
u_star = optimal_reward(sigma, lam)
matched = inner_solution(u_star, truth, lam)
print("policy covariance under U*:\n", np.round(matched.b_star.matrix, 4))
print("data covariance Sigma:\n", np.round(sigma.matrix, 4))

# A generic optimizer on the expected objective lands on the same point.
a_num, b_num = maximize_inner_objective(truth, u_star, lam, sigma_x)
print("numerical optimum error: A", np.abs(a_num - truth.lam).max(), "B", np.abs(b_num.matrix - sigma.matrix).max())
print("objective at the optimum:", closed_form_J(truth.lam, matched.b_star, truth, u_star, lam, sigma_x))

# Restricted to isotropic rewards u I, the outer NLL is minimized at
# u = lam n / (2 tr Sigma).
u_iso = isotropic_reward(sigma, lam)
for u in (0.25 * u_iso, 0.5 * u_iso, u_iso, 2 * u_iso, 4 * u_iso):
    print(f"u = {u:7.4f}   outer NLL = {outer_nll_isotropic(u, sigma, lam):.4f}")

"""Training objectives: likelihood, squared error, entropy-regularized policy
gradient with a Mahalanobis reward, and closed-form Gaussian diagnostics.

Every loss is written for minimization. The policy-gradient loss is the negated
objective ``E[r_U(y_hat, y)] + lam * H(p)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DimensionMismatch, EmptyBatch
from .linalg import SpdMatrix, cholesky, log_det, spd_inverse
from .models import LOG_2PI, CategoricalPolicy, GaussianPolicy, LinearGaussianTruth

REWARD_KINDS = ("scalar-isotropic", "diagonal", "full")


def _tril_basis(n: int):
    rows, cols = np.tril_indices(n)
    count = rows.size
    off = np.zeros((count, n * n))
    dia = np.zeros((count, n * n))
    for k, (i, j) in enumerate(zip(rows, cols)):
        (dia if i == j else off)[k, i * n + j] = 1.0
    return off, dia


@dataclass
class RewardParams:
    """Parametrization of ``r_U(y_hat, y) = -(y_hat - y)^T U (y_hat - y)``.

    ``raw`` holds ``log u`` (scalar-isotropic), ``log diag(U)`` (diagonal), or
    the lower Cholesky factor of ``U`` with a log-diagonal, row-major over the
    lower triangle (full). Every realized ``U`` is positive definite.
    """

    kind: str
    raw: np.ndarray
    dim: int

    def __post_init__(self):
        if self.kind not in REWARD_KINDS:
            raise ValueError(f"unknown reward kind {self.kind!r}")
        self.raw = np.array(self.raw, dtype=float).ravel()
        expected = {"scalar-isotropic": 1, "diagonal": self.dim, "full": self.dim * (self.dim + 1) // 2}
        if self.raw.size != expected[self.kind]:
            raise ValueError(f"{self.kind} reward over dim {self.dim} needs {expected[self.kind]} raw values")

    @classmethod
    def scalar(cls, u: float, dim: int) -> "RewardParams":
        if u <= 0:
            raise ValueError("u must be positive")
        return cls("scalar-isotropic", np.array([np.log(u)]), dim)

    @classmethod
    def identity(cls, dim: int) -> "RewardParams":
        return cls.scalar(1.0, dim)

    @classmethod
    def diagonal(cls, values) -> "RewardParams":
        values = np.asarray(values, dtype=float)
        if np.any(values <= 0):
            raise ValueError("diagonal entries must be positive")
        return cls("diagonal", np.log(values), values.size)

    @classmethod
    def full(cls, u) -> "RewardParams":
        factor = cholesky(u).factor
        n = factor.shape[0]
        rows, cols = np.tril_indices(n)
        raw = factor[rows, cols].copy()
        raw[rows == cols] = np.log(raw[rows == cols])
        return cls("full", raw, n)

    def copy(self) -> "RewardParams":
        return RewardParams(self.kind, self.raw.copy(), self.dim)

    def with_raw(self, raw) -> "RewardParams":
        return RewardParams(self.kind, np.array(raw, dtype=float), self.dim)

    @property
    def u(self) -> float:
        if self.kind != "scalar-isotropic":
            raise AttributeError("u is defined for scalar-isotropic rewards only")
        return float(np.exp(self.raw[0]))

    def weights(self, raw=None):
        """Per-dimension weights of a scalar or diagonal reward, shape ``(n,)``."""
        raw = self.raw if raw is None else raw
        if self.kind == "scalar-isotropic":
            return ad.exp(raw) * np.ones(self.dim)
        if self.kind == "diagonal":
            return ad.exp(raw)
        raise ValueError("full rewards have no per-dimension weights")

    def factor(self, raw=None):
        raw = self.raw if raw is None else raw
        n = self.dim
        off, dia = _tril_basis(n)
        return ad.reshape(raw @ off + ad.exp(raw) @ dia, (n, n))

    def matrix(self, raw=None):
        if self.kind == "full":
            low = self.factor(raw)
            return low @ ad.transpose(low)
        w = self.weights(raw)
        return ad.value_of(w) * np.eye(self.dim) if not ad.is_traced(w) else w * np.eye(self.dim)

    def spd(self) -> SpdMatrix:
        if self.kind == "full":
            return SpdMatrix(np.asarray(self.factor()))
        return SpdMatrix.diagonal(np.asarray(self.weights()))

    def quadratic(self, d, raw=None):
        """Row-wise ``d^T U d`` over the last axis of ``d``."""
        if np.shape(ad.value_of(d))[-1] != self.dim:
            raise DimensionMismatch(f"residual dim {np.shape(ad.value_of(d))[-1]} != reward dim {self.dim}")
        if self.kind == "full":
            low = self.factor(raw)
            w = d @ low
            return ad.sum_(w * w, axis=-1)
        return ad.sum_(d * d * self.weights(raw), axis=-1)


@dataclass
class PgConfig:
    lam: float = 1.0
    mc_samples: int = 8
    estimator: str = "reparameterized"

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be at least 1")
        if self.estimator not in ("reparameterized", "score-function"):
            raise ValueError(f"unknown estimator {self.estimator!r}")


def _unpack(batch):
    if hasattr(batch, "inputs"):
        x, y = batch.inputs, batch.targets
    else:
        x, y = batch
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] == 0:
        raise EmptyBatch("batch has no rows")
    return x, np.asarray(y)


def _class_targets(y, k):
    y = np.asarray(y)
    if y.ndim == 2:
        if y.shape[1] != k:
            raise DimensionMismatch(f"one-hot targets have {y.shape[1]} columns, policy has {k} classes")
        return np.argmax(y, axis=1)
    return y.astype(int).ravel()


def nll_loss(policy, batch, theta=None):
    """Mean negative log-likelihood of the batch targets."""
    x, y = _unpack(batch)
    if isinstance(policy, CategoricalPolicy):
        cls = _class_targets(y, policy.num_classes)
        lp = policy.log_probs(x, theta)
        return -ad.mean(lp[(np.arange(x.shape[0]), cls)])
    return -ad.mean(policy.log_prob(x, np.atleast_2d(y.astype(float)), theta))


def mse_loss(policy: GaussianPolicy, batch, theta=None):
    """Mean squared Euclidean distance between the predicted mean and the target."""
    x, y = _unpack(batch)
    mean, _ = policy.forward(x, theta)
    d = mean - np.atleast_2d(y.astype(float))
    return ad.mean(ad.sum_(d * d, axis=-1))


def draw_noise(policy: GaussianPolicy, n_rows: int, cfg: PgConfig, rng: np.random.Generator) -> np.ndarray:
    """Standard-normal draws of shape ``(mc_samples, n_rows, n)`` for common random numbers."""
    return rng.standard_normal((cfg.mc_samples, n_rows, policy.output_dim))


def pg_loss_gaussian(
    policy: GaussianPolicy,
    batch,
    reward: RewardParams,
    cfg: PgConfig,
    rng: np.random.Generator | None = None,
    theta=None,
    phi=None,
    noise=None,
):
    """Negated entropy-regularized policy-gradient objective for a Gaussian policy.

    Samples are ``mu + sigma * z``. Under the reparameterized estimator the
    gradient flows through both moments. The entropy term is analytic. Pass
    ``noise`` (shape ``(S, batch, n)``) to fix the Monte-Carlo draws, and
    ``phi`` to trace the reward's raw parameters.
    """
    x, y = _unpack(batch)
    y = np.atleast_2d(y.astype(float))
    if reward.dim != policy.output_dim or y.shape[1] != policy.output_dim:
        raise DimensionMismatch("reward, policy and target dims must agree")
    mean, logvar = policy.forward(x, theta)
    if noise is None:
        noise = draw_noise(policy, x.shape[0], cfg, rng)
    std = ad.exp(0.5 * logvar)
    if cfg.estimator == "reparameterized":
        y_hat = mean + std * noise
        penalty = ad.mean(reward.quadratic(y_hat - y, phi))
    else:
        y_hat = ad.value_of(mean) + ad.value_of(std) * noise
        q = reward.quadratic(y_hat - y, phi)
        q_const = np.asarray(ad.value_of(q))
        baseline = _loo_baseline(q_const)
        d = y_hat - mean
        lp = -0.5 * ad.sum_(d * d * ad.exp(-logvar) + logvar + LOG_2PI, axis=-1)
        # score-function surrogate; the direct term covers gradients in phi
        penalty = ad.mean((q_const - baseline) * lp) + ad.mean(q) - ad.mean(ad.stop_gradient(q))
    ent = ad.mean(0.5 * ad.sum_(logvar + (1.0 + LOG_2PI), axis=-1))
    return penalty - cfg.lam * ent


def _loo_baseline(values: np.ndarray) -> np.ndarray:
    """Leave-one-out mean over the sample axis (axis 0); zero when there is one sample."""
    s = values.shape[0]
    if s < 2:
        return np.zeros_like(values)
    total = values.sum(axis=0, keepdims=True)
    return (total - values) / (s - 1)


def categorical_rewards(reward: RewardParams, sampled: np.ndarray, targets: np.ndarray, k: int) -> np.ndarray:
    """``r = -(e_sampled - e_target)^T U (e_sampled - e_target)`` for class indices."""
    eye = np.eye(k)
    d = eye[sampled] - eye[targets]
    return -np.asarray(reward.quadratic(d))


def pg_loss_categorical(
    policy: CategoricalPolicy,
    batch,
    reward: RewardParams,
    cfg: PgConfig,
    rng: np.random.Generator | None = None,
    theta=None,
    sampled=None,
):
    """Score-function policy-gradient loss for a softmax policy.

    Draws ``S`` classes per row and weights their log-probabilities by the
    reward minus a leave-one-out mean baseline over the row's other samples.
    ``sampled`` (shape ``(S, batch)``) overrides the draws.
    """
    x, y = _unpack(batch)
    k = policy.num_classes
    if reward.dim != k:
        raise DimensionMismatch(f"reward dim {reward.dim} != number of classes {k}")
    cls = _class_targets(y, k)
    lp = policy.log_probs(x, theta)
    if sampled is None:
        probs = np.exp(np.asarray(ad.value_of(lp)))
        u = rng.random((cfg.mc_samples, x.shape[0], 1))
        cdf = np.cumsum(probs, axis=-1)
        cdf[:, -1] = 1.0
        sampled = np.argmax(u < cdf[None], axis=-1)
    sampled = np.asarray(sampled, dtype=int)
    r = categorical_rewards(reward, sampled, np.broadcast_to(cls, sampled.shape), k)
    advantage = r - _loo_baseline(r)
    rows = np.broadcast_to(np.arange(x.shape[0]), sampled.shape)
    chosen = lp[(rows, sampled)]
    ent = -ad.sum_(ad.exp(lp) * lp, axis=-1)
    return -(ad.mean(advantage * chosen) + cfg.lam * ad.mean(ent))


# ---------------------------------------------------------------------------
# closed forms under the linear-Gaussian assumptions


def closed_form_J_expr(a, b, lam_mat, u, sigma, lam: float, sigma_x):
    """``J(A, B)`` written with traceable operations (``a`` and ``b`` may be traced)."""
    d = a - lam_mat
    first = ad.trace(ad.transpose(d) @ u @ d @ sigma_x)
    second = ad.trace(u @ (b + sigma))
    n = np.shape(ad.value_of(b))[0]
    return -first - second + 0.5 * lam * (n * (1.0 + LOG_2PI) + ad.logdet(b))


def closed_form_J(a, b: SpdMatrix, truth: LinearGaussianTruth, u: SpdMatrix, lam: float, sigma_x: SpdMatrix) -> float:
    """Infinite-sample inner objective for ``N(A x, B)`` against ``N(Lambda x, Sigma)``.

    ``-Tr((A-Lambda)^T U (A-Lambda) Sigma_X) - Tr(U (B + Sigma)) + lam/2 log(2 pi e det B)``
    with ``Sigma_X = E[x x^T]``.
    """
    a = np.asarray(a, dtype=float)
    b, u, sigma_x = cholesky(b), cholesky(u), cholesky(sigma_x)
    n, m = truth.lam.shape
    if a.shape != (n, m) or b.dim != n or u.dim != n or sigma_x.dim != m:
        raise DimensionMismatch("A must be n x m, B and U n x n, Sigma_X m x m")
    d = a - truth.lam
    first = np.trace(d.T @ u.matrix @ d @ sigma_x.matrix)
    second = np.trace(u.matrix @ (b.matrix + truth.sigma.matrix))
    return float(-first - second + 0.5 * lam * (n * (1.0 + LOG_2PI) + log_det(b)))


def kl_gaussian(p_cov: SpdMatrix, q_cov: SpdMatrix, mean_diff=None) -> float:
    """``KL(N(m_p, P) || N(m_q, Q))``; ``mean_diff`` is ``m_p - m_q`` (default zero)."""
    p_cov, q_cov = cholesky(p_cov), cholesky(q_cov)
    if p_cov.dim != q_cov.dim:
        raise DimensionMismatch("covariances must have equal dims")
    n = p_cov.dim
    t = np.trace(q_cov.solve(p_cov.matrix))
    maha = 0.0
    if mean_diff is not None:
        md = np.asarray(mean_diff, dtype=float)
        maha = float(md @ q_cov.solve(md))
    return float(0.5 * (t + maha - n + log_det(q_cov) - log_det(p_cov)))


def reverse_kl_gaussian(b: SpdMatrix, sigma: SpdMatrix) -> float:
    """``KL(model || data)`` for same-mean Gaussians with covariances ``B`` and ``Sigma``."""
    return kl_gaussian(b, sigma)


def expected_nll_gaussian(b: SpdMatrix, sigma: SpdMatrix) -> float:
    """Expected NLL of ``N(mu, B)`` on data ``N(mu, Sigma)``: forward KL plus the data entropy."""
    sigma = cholesky(sigma)
    n = sigma.dim
    return kl_gaussian(sigma, b) + 0.5 * (n * (1.0 + LOG_2PI) + log_det(sigma))


def reward_from_spd(u: SpdMatrix) -> RewardParams:
    return RewardParams.full(u)


def optimal_inner_covariance(u: SpdMatrix, lam: float) -> SpdMatrix:
    return spd_inverse(u).scaled(0.5 * lam)

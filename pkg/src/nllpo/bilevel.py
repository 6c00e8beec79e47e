"""Reward learning by bilevel optimization.

Two solvers:

* :func:`heuristic_reward` plugs an empirical target covariance into the
  isotropic optimum ``u = lam n / (2 Tr Sigma_hat)``.
* :func:`solve_bilevel` alternates inner policy-gradient training with outer
  gradient steps on the reward parameters. Hypergradients come from implicit
  differentiation, with the inner Hessian system solved by conjugate gradient.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .errors import BreakdownNonFinite, NonFiniteLoss, StationarityViolated, TooFewSamples
from .models import GaussianPolicy
from .objectives import PgConfig, RewardParams, draw_noise, nll_loss, pg_loss_gaussian
from .optim import make_optimizer

log = logging.getLogger(__name__)

RIDGE = 1e-6


def target_covariance(data, residual: bool = False) -> np.ndarray:
    """Unbiased covariance of the targets (one-hot for classification).

    With ``residual=True`` the covariance of least-squares residuals of the
    targets on the inputs (with intercept) is returned instead.
    """
    y = data.one_hot_targets() if getattr(data, "is_classification", False) else np.asarray(data.targets, float)
    y = np.atleast_2d(y.astype(float))
    if y.shape[0] < 2:
        raise TooFewSamples("covariance needs at least two samples")
    if residual:
        x = np.hstack([np.asarray(data.inputs, float), np.ones((y.shape[0], 1))])
        coef, *_ = np.linalg.lstsq(x, y, rcond=None)
        r = y - x @ coef
        dof = max(y.shape[0] - x.shape[1], 1)
        return r.T @ r / dof
    return np.atleast_2d(np.cov(y, rowvar=False, ddof=1))


def heuristic_reward(data, lam: float, residual: bool = False) -> RewardParams:
    """Isotropic reward from the empirical covariance of the targets plus a ``1e-6 I`` ridge."""
    cov = target_covariance(data, residual=residual)
    n = cov.shape[0]
    cov = cov + RIDGE * np.eye(n)
    u = lam * n / (2.0 * np.trace(cov))
    return RewardParams.scalar(u, n)


@dataclass
class BilevelConfig:
    outer_iters: int = 100
    inner_iters: int = 50
    outer_lr: float = 1e-2
    inner_lr: float = 1e-2
    cg_max_iters: int | None = None
    cg_tol: float = 1e-5
    lam: float = 1.0
    warm_start: bool = True
    mc_samples: int = 8
    inner_optimizer: str = "sgd"
    outer_optimizer: str = "sgd"
    pretrain_iters: int = 0
    batch_size: int | None = None
    stationarity_rtol: float = 1e-2
    damping: float = 0.0

    def __post_init__(self):
        for name in ("outer_lr", "inner_lr", "cg_tol", "lam"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.cg_tol >= 1:
            raise ValueError("cg_tol must be below 1")
        if self.outer_iters < 0 or self.inner_iters < 0 or self.pretrain_iters < 0:
            raise ValueError("iteration counts must be non-negative")
        if self.cg_max_iters is not None and self.cg_max_iters < 1:
            raise ValueError("cg_max_iters must be positive")

    @property
    def pg(self) -> PgConfig:
        return PgConfig(lam=self.lam, mc_samples=self.mc_samples)

    def cg_iters_for(self, dim: int) -> int:
        return self.cg_max_iters if self.cg_max_iters is not None else max(1, min(dim, 100))


@dataclass
class TraceRecord:
    iter: int
    phi: list[float]
    outer_nll: float
    hypergrad_norm: float
    cg_residual: float
    cg_iters: int


@dataclass
class BilevelTrace:
    records: list[TraceRecord] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def append(self, record: TraceRecord) -> None:
        if not np.isfinite(record.outer_nll):
            raise NonFiniteLoss(f"outer NLL is {record.outer_nll} at iteration {record.iter}")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(r), sort_keys=False) + "\n" for r in self.records)

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def read_jsonl(cls, path) -> "BilevelTrace":
        with open(path, encoding="utf-8") as fh:
            return cls([TraceRecord(**json.loads(line)) for line in fh if line.strip()])


def cg_solve(
    apply: Callable[[np.ndarray], np.ndarray], rhs, max_iters: int = 100, tol: float = 1e-5
) -> tuple[np.ndarray, float, int]:
    """Conjugate gradient for ``apply(x) = rhs``.

    Returns ``(x, relative residual, iterations)``. Hitting ``max_iters`` is
    reported through the residual, not raised.
    """
    b = np.asarray(rhs, dtype=float)
    x = np.zeros_like(b)
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return x, 0.0, 0
    r = b.copy()
    p = r.copy()
    rr = float(r @ r)
    it = 0
    for it in range(1, max_iters + 1):
        ap = np.asarray(apply(p), dtype=float)
        pap = float(p @ ap)
        if not np.isfinite(pap) or pap == 0.0:
            raise BreakdownNonFinite(f"curvature p^T A p = {pap} at iteration {it}")
        alpha = rr / pap
        x = x + alpha * p
        r = r - alpha * ap
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(r))):
            raise BreakdownNonFinite(f"non-finite iterate at iteration {it}")
        rr_new = float(r @ r)
        if np.sqrt(rr_new) <= tol * b_norm:
            rr = rr_new
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x, float(np.sqrt(rr) / b_norm), it


@dataclass
class HypergradInfo:
    grad: np.ndarray
    cg_residual: float
    cg_iters: int
    inner_grad_norm: float
    stationary: bool


def hypergradient(
    inner_loss: Callable,
    outer_loss: Callable,
    phi,
    theta_star,
    cfg: BilevelConfig,
    return_info: bool = False,
):
    """Implicit-function hypergradient ``d outer / d phi`` at an inner solution.

    ``inner_loss(phi, theta)`` and ``outer_loss(theta)`` are traceable scalar
    functions. Solves ``H v = grad_theta outer`` with ``H`` the inner Hessian in
    ``theta``, then returns ``-d/dphi <grad_theta inner, v>``. The fixed-point
    step size cancels out of the linear system, so none is needed.
    """
    phi = np.asarray(ad.value_of(phi.values if isinstance(phi, ad.ParamVector) else phi), dtype=float)
    theta = np.asarray(theta_star.values if isinstance(theta_star, ad.ParamVector) else theta_star, dtype=float)
    g_in = ad.gradient(lambda t: inner_loss(phi, t), theta)
    g_norm = float(np.linalg.norm(g_in))
    stationary = g_norm <= cfg.stationarity_rtol * (1.0 + float(np.linalg.norm(theta)))
    if not stationary:
        warnings.warn(
            f"inner gradient norm {g_norm:.3g} exceeds the stationarity tolerance", StationarityViolated, stacklevel=2
        )
    g_out = ad.gradient(outer_loss, theta)

    def apply(v):
        hv = ad.hvp(lambda t: inner_loss(phi, t), theta, v)
        return hv + cfg.damping * v if cfg.damping else hv

    v, resid, iters = cg_solve(apply, g_out, cfg.cg_iters_for(theta.size), cfg.cg_tol)
    grad = -ad.cross_grad(inner_loss, phi, theta, v)
    if return_info:
        return HypergradInfo(grad, resid, iters, g_norm, stationary)
    return grad


def _batches(count: int, batch_size: int | None, rng: np.random.Generator):
    if batch_size is None or batch_size >= count:
        yield np.arange(count)
        return
    perm = rng.permutation(count)
    for start in range(0, count, batch_size):
        yield perm[start : start + batch_size]


def pg_train_steps(
    policy: GaussianPolicy,
    x: np.ndarray,
    y: np.ndarray,
    reward: RewardParams,
    pg: PgConfig,
    optimizer,
    steps: int,
    rng: np.random.Generator,
    batch_size: int | None = None,
) -> float:
    """Run ``steps`` optimizer steps on the policy-gradient loss; returns the last loss."""
    last = float("nan")
    done = 0
    while done < steps:
        for idx in _batches(x.shape[0], batch_size, rng):
            if done >= steps:
                break
            noise = draw_noise(policy, idx.size, pg, rng)
            batch = (x[idx], y[idx])
            last, g = ad.value_and_grad(
                lambda t: pg_loss_gaussian(policy, batch, reward, pg, theta=t, noise=noise), policy.params
            )
            policy.params.values = optimizer.step(policy.params.values, g)
            policy.project()
            if not np.all(np.isfinite(policy.params.values)):
                raise NonFiniteLoss("policy parameters became non-finite")
            done += 1
    return last


class BilevelFailure(NonFiniteLoss):
    """Numerical failure inside :func:`solve_bilevel`; carries the partial trace."""

    def __init__(self, message: str, trace: BilevelTrace, reward: RewardParams, policy: GaussianPolicy):
        super().__init__(message)
        self.trace = trace
        self.reward = reward
        self.policy = policy


def solve_bilevel(
    data,
    policy: GaussianPolicy,
    reward_init: RewardParams,
    cfg: BilevelConfig,
    rng: np.random.Generator,
    outer_data=None,
):
    """Learn reward parameters by implicit differentiation.

    ``data`` supplies the inner policy-gradient problem; ``outer_data``
    (default: ``data``) supplies the outer NLL. Reward parameters move in log
    space. Returns ``(reward, policy, trace)``; ``policy`` is a trained copy.
    """
    if reward_init.kind not in ("scalar-isotropic", "diagonal"):
        raise ValueError("the bilevel solver supports scalar-isotropic and diagonal rewards")
    outer_data = data if outer_data is None else outer_data
    x, y = np.asarray(data.inputs, float), np.asarray(data.targets, float)
    xo, yo = np.asarray(outer_data.inputs, float), np.asarray(outer_data.targets, float)
    pg = cfg.pg
    policy = policy.copy()
    initial = policy.params.values.copy()
    reward = reward_init.copy()
    inner_opt = make_optimizer(cfg.inner_optimizer, cfg.inner_lr)
    outer_opt = make_optimizer(cfg.outer_optimizer, cfg.outer_lr)
    trace = BilevelTrace()

    def fail(msg):
        return BilevelFailure(msg, trace, reward, policy)

    try:
        pg_train_steps(policy, x, y, reward, pg, inner_opt, cfg.pretrain_iters, rng, cfg.batch_size)
    except NonFiniteLoss as exc:
        raise fail(str(exc)) from exc

    for it in range(cfg.outer_iters):
        try:
            if not cfg.warm_start:
                policy.params.values = initial.copy()
                inner_opt.reset()
            pg_train_steps(policy, x, y, reward, pg, inner_opt, cfg.inner_iters, rng, cfg.batch_size)
            noise = draw_noise(policy, x.shape[0], pg, rng)

            def inner(phi, theta):
                return pg_loss_gaussian(policy, (x, y), reward, pg, theta=theta, phi=phi, noise=noise)

            def outer(theta):
                return nll_loss(policy, (xo, yo), theta=theta)

            outer_value = float(nll_loss(policy, (xo, yo)))
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", StationarityViolated)
                info = hypergradient(inner, outer, reward.raw, policy.params, cfg, return_info=True)
            for w in caught:
                trace.warnings.append(f"iter {it}: {w.message}")
        except (NonFiniteLoss, BreakdownNonFinite, FloatingPointError) as exc:
            raise fail(f"outer iteration {it}: {exc}") from exc
        trace.append(
            TraceRecord(
                iter=it,
                phi=[float(v) for v in reward.raw],
                outer_nll=outer_value,
                hypergrad_norm=float(np.linalg.norm(info.grad)),
                cg_residual=info.cg_residual,
                cg_iters=info.cg_iters,
            )
        )
        if not np.all(np.isfinite(info.grad)):
            raise fail(f"non-finite hypergradient at iteration {it}")
        reward = reward.with_raw(outer_opt.step(reward.raw, info.grad))
        log.debug("outer %d nll=%.5f u=%s", it, outer_value, np.exp(reward.raw))
    return reward, policy, trace

"""Conditional Gaussian and categorical models.

``LinearGaussianTruth`` is the data-generating process ``N(Lambda x, Sigma)``.
``GaussianPolicy`` is the learned model: a linear or MLP mean and a constant
or MLP diagonal log-variance, clamped to ``[-10, 4]``. ``CategoricalPolicy`` is
multiclass logistic regression.

All policy forward functions take an optional flat parameter array so they can
be evaluated on a traced copy of the parameters.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ParamVector
from .errors import DimensionMismatch
from .linalg import SpdMatrix, as_matrix, cholesky

LOGVAR_MIN = -10.0
LOGVAR_MAX = 4.0
LOG_2PI = float(np.log(2 * np.pi))


@dataclass(frozen=True)
class LinearGaussianTruth:
    lam: np.ndarray
    sigma: SpdMatrix

    def __post_init__(self):
        lam = as_matrix(self.lam)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "sigma", cholesky(self.sigma))
        if self.sigma.dim != lam.shape[0]:
            raise DimensionMismatch("Lambda rows must equal Sigma dim")

    @property
    def output_dim(self) -> int:
        return self.lam.shape[0]

    @property
    def input_dim(self) -> int:
        return self.lam.shape[1]

    def mean(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x @ self.lam.T

    def sample(self, x, rng: np.random.Generator) -> np.ndarray:
        return truth_sample(self, x, rng)

    def log_prob(self, x, y) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        d = y - np.atleast_2d(self.mean(x))
        w = np.linalg.solve(self.sigma.factor, d.T)
        n = self.output_dim
        ld = 2.0 * np.sum(np.log(np.diag(self.sigma.factor)))
        return -0.5 * (np.sum(w * w, axis=0) + ld + n * LOG_2PI)

    def as_policy(self) -> "GaussianPolicy":
        """Linear policy with ``A = Lambda`` and ``diag(Sigma)`` as its variance."""
        p = GaussianPolicy(self.input_dim, self.output_dim, mean_head="linear", logvar_head="constant")
        p.params.values[p.params.slice_of("mean_weights")] = self.lam.T.ravel()
        p.params.values[p.params.slice_of("log_var")] = np.log(np.diag(self.sigma.matrix))
        return p


def truth_sample(truth: LinearGaussianTruth, x, rng: np.random.Generator) -> np.ndarray:
    """Draw ``Lambda x + L_Sigma z`` for a single input or a batch of inputs."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != truth.input_dim:
        raise DimensionMismatch(f"input has dim {x.shape[-1]}, truth expects {truth.input_dim}")
    z = rng.standard_normal(x.shape[:-1] + (truth.output_dim,))
    return truth.mean(x) + z @ truth.sigma.factor.T


@dataclass
class Sample:
    value: np.ndarray
    log_prob: np.ndarray
    noise: np.ndarray | None = None


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class GaussianPolicy:
    """Diagonal Gaussian ``N(mu(x), diag(exp(logvar(x))))``.

    Parameters
    ----------
    input_dim, output_dim : int
        Sizes ``m`` and ``n``.
    mean_head : {"linear", "mlp"}
        ``"linear"`` computes ``A x`` (plus a bias when ``bias=True``).
    logvar_head : {"constant", "mlp"}
        ``"constant"`` holds one log-variance per output dimension.
    hidden : tuple of int
        Hidden layer sizes of the shared ReLU trunk, used by MLP heads.
    bias : bool
        Bias on the linear mean head. The MLP heads always have biases.
    rng : numpy Generator, optional
        Initialization stream; defaults to ``default_rng(0)``.
    """

    def __init__(
        self,
        input_dim: int,
        output_dim: int,
        mean_head: str = "mlp",
        logvar_head: str = "mlp",
        hidden: tuple[int, ...] = (64, 64),
        bias: bool = False,
        rng: np.random.Generator | None = None,
        params: ParamVector | None = None,
    ):
        if mean_head not in ("linear", "mlp"):
            raise ValueError(f"unknown mean head {mean_head!r}")
        if logvar_head not in ("constant", "mlp"):
            raise ValueError(f"unknown log-variance head {logvar_head!r}")
        self.input_dim = int(input_dim)
        self.output_dim = int(output_dim)
        self.mean_head = mean_head
        self.logvar_head = logvar_head
        self.hidden = tuple(int(h) for h in hidden) if self.uses_trunk else ()
        self.bias = bool(bias)
        self.params = params if params is not None else self._init_params(rng or np.random.default_rng(0))
        self.project()

    @property
    def uses_trunk(self) -> bool:
        return self.mean_head == "mlp" or self.logvar_head == "mlp"

    @property
    def architecture(self) -> dict:
        return {
            "kind": "gaussian",
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "mean_head": self.mean_head,
            "logvar_head": self.logvar_head,
            "hidden": list(self.hidden),
            "bias": self.bias,
        }

    def _init_params(self, rng) -> ParamVector:
        m, n = self.input_dim, self.output_dim
        arrays: dict[str, np.ndarray] = {}
        fan_in = m
        for i, h in enumerate(self.hidden):
            arrays[f"trunk_w{i}"] = _uniform(rng, fan_in, (fan_in, h))
            arrays[f"trunk_b{i}"] = _uniform(rng, fan_in, (h,))
            fan_in = h
        if self.mean_head == "mlp":
            arrays["mean_weights"] = _uniform(rng, fan_in, (fan_in, n))
            arrays["mean_bias"] = _uniform(rng, fan_in, (n,))
        else:
            arrays["mean_weights"] = _uniform(rng, m, (m, n))
            if self.bias:
                arrays["mean_bias"] = _uniform(rng, m, (n,))
        if self.logvar_head == "mlp":
            arrays["logvar_weights"] = _uniform(rng, fan_in, (fan_in, n))
            arrays["logvar_bias"] = np.zeros(n)
        else:
            arrays["log_var"] = np.zeros(n)
        return ParamVector.from_arrays(arrays)

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(
            self.input_dim,
            self.output_dim,
            self.mean_head,
            self.logvar_head,
            self.hidden,
            self.bias,
            params=self.params.copy(),
        )

    def project(self) -> None:
        """Clamp a constant log-variance parameter into the allowed range."""
        if self.logvar_head == "constant":
            sl = self.params.slice_of("log_var")
            np.clip(self.params.values[sl], LOGVAR_MIN, LOGVAR_MAX, out=self.params.values[sl])

    def forward(self, x, theta=None):
        """Return ``(mean, logvar)``, each of shape ``(batch, n)``."""
        p = self.params
        theta = p.values if theta is None else theta
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[-1] != self.input_dim:
            raise DimensionMismatch(f"input has dim {x.shape[-1]}, policy expects {self.input_dim}")
        h = x
        for i in range(len(self.hidden)):
            h = ad.relu(h @ p.view(f"trunk_w{i}", theta) + p.view(f"trunk_b{i}", theta))
        if self.mean_head == "mlp":
            mean = h @ p.view("mean_weights", theta) + p.view("mean_bias", theta)
        else:
            mean = x @ p.view("mean_weights", theta)
            if self.bias:
                mean = mean + p.view("mean_bias", theta)
        if self.logvar_head == "mlp":
            raw = h @ p.view("logvar_weights", theta) + p.view("logvar_bias", theta)
        else:
            raw = ad.reshape(p.view("log_var", theta), (1, self.output_dim)) + np.zeros((x.shape[0], 1))
        logvar = ad.clip(raw, lo=LOGVAR_MIN, hi=LOGVAR_MAX)
        return mean, logvar

    def mean(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def variance(self, x) -> np.ndarray:
        return np.exp(self.forward(x)[1])

    def sample(self, x, rng=None, noise=None, theta=None):
        """Reparameterized draw ``mu + sigma * z``; returns ``(value, noise)``."""
        mean, logvar = self.forward(x, theta)
        if noise is None:
            noise = rng.standard_normal(np.shape(ad.value_of(mean)))
        value = mean + ad.exp(0.5 * logvar) * noise
        return value, noise

    def log_prob(self, x, y, theta=None):
        mean, logvar = self.forward(x, theta)
        y = np.atleast_2d(np.asarray(y, dtype=float))
        d = y - mean
        per = (d * d) * ad.exp(-logvar) + logvar + LOG_2PI
        return -0.5 * ad.sum_(per, axis=-1)

    def entropy(self, x, theta=None):
        _, logvar = self.forward(x, theta)
        return 0.5 * ad.sum_(logvar + (1.0 + LOG_2PI), axis=-1)


class CategoricalPolicy:
    """Softmax over ``x @ W + b`` with ``K`` classes."""

    def __init__(
        self,
        input_dim: int,
        num_classes: int,
        rng: np.random.Generator | None = None,
        params: ParamVector | None = None,
    ):
        self.input_dim = int(input_dim)
        self.num_classes = int(num_classes)
        if params is None:
            rng = rng or np.random.default_rng(0)
            params = ParamVector.from_arrays(
                {
                    "weights": _uniform(rng, max(self.input_dim, 1), (self.input_dim, self.num_classes)),
                    "bias": np.zeros(self.num_classes),
                }
            )
        self.params = params

    @property
    def architecture(self) -> dict:
        return {"kind": "categorical", "input_dim": self.input_dim, "num_classes": self.num_classes}

    def copy(self) -> "CategoricalPolicy":
        return CategoricalPolicy(self.input_dim, self.num_classes, params=self.params.copy())

    def project(self) -> None:
        pass

    def logits(self, x, theta=None):
        theta = self.params.values if theta is None else theta
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[-1] != self.input_dim:
            raise DimensionMismatch(f"input has dim {x.shape[-1]}, policy expects {self.input_dim}")
        return x @ self.params.view("weights", theta) + self.params.view("bias", theta)

    def log_probs(self, x, theta=None):
        return ad.log_softmax(self.logits(x, theta), axis=-1)

    def probs(self, x) -> np.ndarray:
        return np.exp(self.log_probs(x))

    def entropy(self, x, theta=None):
        lp = self.log_probs(x, theta)
        return -ad.sum_(ad.exp(lp) * lp, axis=-1)


# ---------------------------------------------------------------------------
# operation-level wrappers over single inputs


def policy_sample(p: GaussianPolicy, x, rng: np.random.Generator, noise=None) -> Sample:
    value, z = p.sample(x, rng, noise=noise)
    value = np.asarray(value)
    lp = p.log_prob(x, value)
    if np.ndim(x) == 1:
        return Sample(value[0], float(lp[0]), np.asarray(z)[0])
    return Sample(value, lp, np.asarray(z))


def log_prob(p: GaussianPolicy, x, y):
    lp = p.log_prob(x, y)
    return float(lp[0]) if np.ndim(x) == 1 else lp


def entropy(p: GaussianPolicy, x):
    h = p.entropy(x)
    return float(h[0]) if np.ndim(x) == 1 else h


def categorical_sample(p: CategoricalPolicy, x, rng: np.random.Generator) -> Sample:
    lp = np.asarray(p.log_probs(x))
    probs = np.exp(lp)
    # inverse-CDF draw, one uniform per row
    u = rng.random((lp.shape[0], 1))
    cdf = np.cumsum(probs, axis=-1)
    cdf[:, -1] = 1.0
    cls = np.argmax(u < cdf, axis=-1)
    chosen = lp[np.arange(lp.shape[0]), cls]
    if np.ndim(x) == 1:
        return Sample(np.asarray(cls[0]), float(chosen[0]))
    return Sample(cls, chosen)


def categorical_entropy(p: CategoricalPolicy, x):
    h = p.entropy(x)
    return float(h[0]) if np.ndim(x) == 1 else h


# ---------------------------------------------------------------------------
# checkpoints

_MAGIC = b"NLLPOCK1"


def save_checkpoint(path, policy) -> None:
    """Write ``MAGIC | u64 header length | JSON header | float64 LE payload``."""
    header = {
        "architecture": policy.architecture,
        "segments": {k: [off, list(shape)] for k, (off, shape) in policy.params.segments.items()},
        "count": int(policy.params.values.size),
        "dtype": "<f8",
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = np.asarray(policy.params.values, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload)


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path} is not a policy checkpoint")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    values = np.frombuffer(raw[16 + hlen :], dtype="<f8").astype(float)
    if values.size != header["count"]:
        raise ValueError("checkpoint payload length does not match header")
    segments = {k: (int(off), tuple(shape)) for k, (off, shape) in header["segments"].items()}
    params = ParamVector(values, segments)
    arch = header["architecture"]
    if arch["kind"] == "gaussian":
        return GaussianPolicy(
            arch["input_dim"],
            arch["output_dim"],
            arch["mean_head"],
            arch["logvar_head"],
            tuple(arch["hidden"]),
            arch["bias"],
            params=params,
        )
    if arch["kind"] == "categorical":
        return CategoricalPolicy(arch["input_dim"], arch["num_classes"], params=params)
    raise ValueError(f"unknown architecture kind {arch['kind']!r}")

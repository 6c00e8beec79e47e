"""Experiment drivers, training loop, metrics and evaluation."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from . import autodiff as ad
from .bilevel import BilevelConfig, heuristic_reward, pg_train_steps, solve_bilevel
from .data import CsvSchema, Dataset, generate_classification, generate_regression, generate_synthetic, load_csv
from .errors import ConfigError, NonFiniteLoss, StationarityViolated
from .models import LOGVAR_MIN, CategoricalPolicy, GaussianPolicy, LinearGaussianTruth
from .objectives import PgConfig, RewardParams, mse_loss, nll_loss, pg_loss_categorical, pg_loss_gaussian
from .optim import Adam, make_optimizer

log = logging.getLogger(__name__)

KINDS = ("synth", "classify", "landscape", "closed-form-check", "regress")

# Training settings left unset resolve per experiment kind.
KIND_DEFAULTS = {
    "classify": {"optimizer": "sgd", "lr": 1e-2, "epochs": 30, "count": 3000},
}
BASE_DEFAULTS = {"optimizer": "adam", "lr": 1e-3, "epochs": 400, "count": 2000}
LOSSES = ("nll", "mse", "pg-identity", "pg-heuristic", "pg-implicit")


def _parse_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _parse_ints(v) -> tuple[int, ...]:
    if isinstance(v, (tuple, list)):
        return tuple(int(x) for x in v)
    return tuple(int(x) for x in str(v).split(",") if x.strip())


def _parse_floats(v) -> tuple[float, ...]:
    if isinstance(v, (tuple, list)):
        return tuple(float(x) for x in v)
    return tuple(float(x) for x in str(v).split(",") if x.strip())


def _parse_strs(v) -> tuple[str, ...]:
    if isinstance(v, (tuple, list)):
        return tuple(str(x) for x in v)
    return tuple(x.strip() for x in str(v).split(",") if x.strip())


@dataclass
class RunConfig:
    """Settings for one experiment; mirrors the flat key-value config file.

    The synthetic defaults follow the regression setup: ``n = m = 2``,
    ``N = 2000``, ``beta = 0.5``, Adam at ``1e-3`` for 400 epochs, batch 128,
    ``lam = 1`` and 8 Monte-Carlo samples. Classification runs default to
    SGD at ``1e-2`` for 30 epochs on 3000 rows. ``optimizer``, ``lr``,
    ``epochs`` and ``count`` left as ``None`` take the default for ``kind``.
    """

    kind: str = "synth"
    loss: str = "nll"
    lam: float = 1.0
    mc_samples: int = 8
    seed: int = 0
    seeds: int = 5
    out: str | None = None
    # training
    optimizer: str | None = None
    lr: float | None = None
    epochs: int | None = None
    batch_size: int = 128
    # gaussian model
    mean_head: str = "mlp"
    logvar_head: str = "mlp"
    hidden: tuple[int, ...] = (64, 64)
    # synthetic regression data
    n: int = 2
    m: int = 2
    count: int | None = None
    beta: float = 0.5
    # reward estimation
    heuristic_covariance: str = "marginal"
    # classification data
    csv: str | None = None
    features: tuple[str, ...] = ()
    target: str | None = None
    classes: int = 2
    class_features: int = 8
    class_separation: float = 0.3
    # regression (dynamics-style) data
    state_dim: int = 3
    action_dim: int = 1
    # bilevel solver
    outer_iters: int = 100
    inner_iters: int = 50
    outer_lr: float = 1e-2
    inner_lr: float = 1e-2
    outer_optimizer: str = "adam"
    inner_optimizer: str = "sgd"
    pretrain_iters: int = 2000
    bilevel_hidden: tuple[int, ...] = (32, 32)
    u_init: float = 1.0
    cg_max_iters: int | None = None
    cg_tol: float = 1e-5
    # landscape sweep
    u_grid: tuple[float, ...] = (0.25, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 8.0)
    landscape_steps: int = 1500
    landscape_lr: float = 1e-2
    # instability detection
    divergence_nats: float = 0.5

    def __post_init__(self):
        if self.kind in KINDS:
            defaults = {**BASE_DEFAULTS, **KIND_DEFAULTS.get(self.kind, {})}
            for key, value in defaults.items():
                if getattr(self, key) is None:
                    setattr(self, key, value)
        self.validate()

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if not self.lam > 0:
            raise ConfigError("lambda must be positive")
        if self.mc_samples < 1 or self.seeds < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("mc_samples, seeds and batch_size must be >= 1; epochs >= 0")
        if self.optimizer not in ("sgd", "adam") or self.outer_optimizer not in ("sgd", "adam"):
            raise ConfigError("optimizers must be 'sgd' or 'adam'")
        if self.inner_optimizer not in ("sgd", "adam"):
            raise ConfigError("optimizers must be 'sgd' or 'adam'")
        if self.mean_head not in ("linear", "mlp") or self.logvar_head not in ("constant", "mlp"):
            raise ConfigError("mean_head must be linear|mlp and logvar_head constant|mlp")
        if self.heuristic_covariance not in ("marginal", "residual"):
            raise ConfigError("heuristic_covariance must be marginal|residual")
        if min(self.n, self.m, self.count) < 1 or not self.beta > 0 or not self.lr > 0:
            raise ConfigError("n, m, count, beta and lr must be positive")
        if any(u <= 0 for u in self.u_grid) or list(self.u_grid) != sorted(self.u_grid):
            raise ConfigError("u_grid must be positive and sorted")
        if self.classes < 2:
            raise ConfigError("classes must be at least 2")

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        kwargs = {}
        types = {f.name: f for f in dataclasses.fields(cls)}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key == "lambda":
                key = "lam"
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(key, raw, _TYPED_DEFAULTS.get(key, cls.__dataclass_fields__[key].default))
        return cls(**kwargs)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    def bilevel(self) -> BilevelConfig:
        return BilevelConfig(
            outer_iters=self.outer_iters,
            inner_iters=self.inner_iters,
            outer_lr=self.outer_lr,
            inner_lr=self.inner_lr,
            cg_max_iters=self.cg_max_iters,
            cg_tol=self.cg_tol,
            lam=self.lam,
            mc_samples=self.mc_samples,
            outer_optimizer=self.outer_optimizer,
            inner_optimizer=self.inner_optimizer,
            pretrain_iters=self.pretrain_iters,
        )


_TYPED_DEFAULTS = dict(BASE_DEFAULTS)

_TUPLE_PARSERS = {
    "hidden": _parse_ints,
    "bilevel_hidden": _parse_ints,
    "u_grid": _parse_floats,
    "features": _parse_strs,
}


def _coerce(key, raw, default):
    if key in _TUPLE_PARSERS:
        return _TUPLE_PARSERS[key](raw)
    if isinstance(raw, str):
        raw = raw.strip()
    try:
        if isinstance(default, bool):
            return _parse_bool(raw)
        if isinstance(default, int) or key == "cg_max_iters":
            if raw in (None, "", "none", "None"):
                return None if key == "cg_max_iters" else default
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    if raw in ("", "none", "None"):
        return None
    return raw


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path) -> RunConfig:
    return RunConfig.from_mapping(parse_config_text(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricsRecord:
    epoch: int
    train_nll: float | None = None
    val_nll: float | None = None
    val_mse: float | None = None
    mean_err: float | None = None
    var_err: float | None = None
    accuracy: float | None = None
    auc: float | None = None
    clamp_frac: float | None = None
    wall_ms: float | None = None

    def as_dict(self, timing: bool = False) -> dict:
        d = {k: v for k, v in dataclasses.asdict(self).items() if v is not None}
        if not timing:
            d.pop("wall_ms", None)
        return d


def evaluate_moments(model: GaussianPolicy, truth: LinearGaussianTruth, probes) -> tuple[float, float]:
    """Average ``||mu(x) - Lambda x||`` and ``||sigma^2(x) - diag(Sigma)||`` over probe inputs."""
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    mean, logvar = model.forward(probes)
    mean_err = np.linalg.norm(np.asarray(mean) - truth.mean(probes), axis=1).mean()
    var_err = np.linalg.norm(np.exp(np.asarray(logvar)) - np.diag(truth.sigma.matrix), axis=1).mean()
    return float(mean_err), float(var_err)


def binary_auc(scores, labels) -> float:
    """ROC AUC by the rank-sum statistic; tied scores share their average rank."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(scores, method="average")
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def evaluate_classifier(model: CategoricalPolicy, data) -> tuple[float, float | None]:
    """Accuracy of argmax predictions, plus AUC on class-1 probabilities when ``K = 2``."""
    x = np.atleast_2d(np.asarray(data.inputs, dtype=float))
    if x.shape[0] == 0:
        raise ValueError("empty evaluation split")
    y = np.asarray(data.targets, dtype=int).ravel()
    probs = model.probs(x)
    accuracy = float(np.mean(np.argmax(probs, axis=1) == y))
    auc = binary_auc(probs[:, 1], y == 1) if model.num_classes == 2 else None
    return accuracy, auc


def _gaussian_metrics(model, data: Dataset, truth, epoch, t0) -> MetricsRecord:
    tr, va = data.train, data.val
    mean, logvar = model.forward(va.inputs)
    logvar = np.asarray(logvar)
    rec = MetricsRecord(
        epoch=epoch,
        train_nll=float(nll_loss(model, tr)),
        val_nll=float(nll_loss(model, va)),
        val_mse=float(np.mean(np.sum((np.asarray(mean) - va.targets) ** 2, axis=1))),
        clamp_frac=float(np.mean(logvar <= LOGVAR_MIN)),
        wall_ms=(time.perf_counter() - t0) * 1e3,
    )
    if truth is not None:
        rec.mean_err, rec.var_err = evaluate_moments(model, truth, va.inputs)
    return rec


def _categorical_metrics(model, data: Dataset, epoch, t0) -> MetricsRecord:
    acc, auc = evaluate_classifier(model, data.test)
    return MetricsRecord(
        epoch=epoch,
        train_nll=float(nll_loss(model, data.train)),
        val_nll=float(nll_loss(model, data.val)),
        accuracy=acc,
        auc=auc,
        wall_ms=(time.perf_counter() - t0) * 1e3,
    )


@dataclass
class TrainResult:
    model: object
    records: list[MetricsRecord]
    reward: RewardParams | None = None
    bilevel_trace: object = None
    meta: dict = field(default_factory=dict)

    @property
    def final(self) -> MetricsRecord:
        return self.records[-1]


class TrainingFailure(NonFiniteLoss):
    """Training hit a non-finite value; ``records`` holds the metrics gathered so far."""

    def __init__(self, message, records):
        super().__init__(message)
        self.records = records


def build_model(run: RunConfig, data: Dataset, rng: np.random.Generator, hidden=None):
    if data.is_classification:
        return CategoricalPolicy(data.input_dim, data.num_classes, rng=rng)
    return GaussianPolicy(
        data.input_dim,
        data.output_dim,
        mean_head=run.mean_head,
        logvar_head=run.logvar_head,
        hidden=run.hidden if hidden is None else hidden,
        bias=run.mean_head == "linear",
        rng=rng,
    )


def select_reward(run: RunConfig, data: Dataset, rng: np.random.Generator):
    """Reward for the PG losses; returns ``(reward, bilevel trace or None)``."""
    dim = data.output_dim
    if run.loss == "pg-identity":
        return RewardParams.identity(dim), None
    if run.loss == "pg-heuristic":
        return heuristic_reward(data.train, run.lam, residual=run.heuristic_covariance == "residual"), None
    if run.loss == "pg-implicit":
        if data.is_classification:
            raise ConfigError("pg-implicit needs a Gaussian policy (regression data)")
        policy = build_model(run, data, rng, hidden=run.bilevel_hidden)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", StationarityViolated)
            reward, _, trace = solve_bilevel(
                data.train, policy, RewardParams.scalar(run.u_init, dim), run.bilevel(), rng, outer_data=data.val
            )
        return reward, trace
    return None, None


def train(run: RunConfig, data: Dataset, rng: np.random.Generator, truth: LinearGaussianTruth | None = None,
          on_record=None) -> TrainResult:
    """Train a fresh model on ``data.train`` with the configured loss.

    Emits a baseline record at epoch 0 and one record per epoch after that.
    For ``pg-implicit`` the bilevel solver picks the reward first, and the model
    is then trained from scratch with that reward.
    """
    if data.is_classification and run.loss in ("mse",):
        raise ConfigError("mse is defined for Gaussian policies only")
    t0 = time.perf_counter()
    reward, trace = select_reward(run, data, rng)
    model = build_model(run, data, rng)
    pg = PgConfig(run.lam, run.mc_samples)
    opt = make_optimizer(run.optimizer, run.lr)
    tr = data.train
    x, y = tr.inputs, tr.targets
    records: list[MetricsRecord] = []

    def emit(epoch):
        if data.is_classification:
            rec = _categorical_metrics(model, data, epoch, t0)
        else:
            rec = _gaussian_metrics(model, data, truth, epoch, t0)
        records.append(rec)
        if on_record is not None:
            on_record(rec)

    def loss_fn(batch, theta):
        if run.loss == "nll":
            return nll_loss(model, batch, theta)
        if run.loss == "mse":
            return mse_loss(model, batch, theta)
        if data.is_classification:
            return pg_loss_categorical(model, batch, reward, pg, rng, theta=theta)
        return pg_loss_gaussian(model, batch, reward, pg, rng, theta=theta)

    emit(0)
    for epoch in range(1, run.epochs + 1):
        perm = rng.permutation(x.shape[0])
        for start in range(0, x.shape[0], run.batch_size):
            idx = perm[start : start + run.batch_size]
            batch = (x[idx], y[idx])
            try:
                _, g = ad.value_and_grad(lambda t: loss_fn(batch, t), model.params)
            except NonFiniteLoss as exc:
                raise TrainingFailure(f"epoch {epoch}: {exc}", records) from exc
            model.params.values = opt.step(model.params.values, g)
            model.project()
            if not np.all(np.isfinite(model.params.values)):
                raise TrainingFailure(f"epoch {epoch}: parameters became non-finite", records)
        emit(epoch)
        if not all(math.isfinite(v) for v in records[-1].as_dict().values()):
            raise TrainingFailure(f"epoch {epoch}: non-finite metrics", records)
    meta = {"loss": run.loss, "lam": run.lam, "mc_samples": run.mc_samples}
    if reward is not None:
        meta["reward_kind"] = reward.kind
        meta["reward_raw"] = [float(v) for v in reward.raw]
        if reward.kind == "scalar-isotropic":
            meta["reward_u"] = reward.u
    return TrainResult(model, records, reward, trace, meta)


def instability_flags(records: list[MetricsRecord], output_dim: int, divergence_nats: float = 0.5,
                      collapse_frac: float = 0.01) -> dict:
    """Detect the collapsing-variance failure.

    Flags a final epoch with more than ``collapse_frac`` of validation
    log-variances pinned at the lower clamp, or a final validation NLL more than
    ``divergence_nats`` per dimension above its best value.
    """
    nll = np.array([r.val_nll for r in records if r.val_nll is not None], dtype=float)
    if nll.size == 0:
        return {"clamp_engaged": False, "nll_diverged": False, "nll_rise_per_dim": float("nan"), "unstable": False}
    clamped = (records[-1].clamp_frac or 0.0) > collapse_frac
    final = float(nll[-1])
    rise = (final - float(np.nanmin(nll))) / output_dim
    diverged = bool(not np.isfinite(final) or rise > divergence_nats)
    return {
        "clamp_engaged": bool(clamped),
        "nll_diverged": diverged,
        "nll_rise_per_dim": float(rise),
        "unstable": bool(clamped or diverged),
    }


def time_to_fraction(values, fraction: float = 0.1) -> int:
    """First index whose value is within ``fraction`` (relative) of the final value."""
    values = np.asarray(values, dtype=float)
    target = values[-1] * (1.0 + fraction)
    hits = np.nonzero(values <= target)[0]
    return int(hits[0]) if hits.size else len(values) - 1


# ---------------------------------------------------------------------------
# landscape


def landscape_sweep(data: Dataset, u_grid, run: RunConfig, rng: np.random.Generator, steps: int | None = None,
                    lr: float | None = None) -> list[tuple[float, float]]:
    """Outer validation NLL after training the inner PG problem at each fixed ``u``.

    Every grid point starts from the same initialization and noise stream.
    Points that fail numerically are recorded as NaN.
    """
    grid = [float(u) for u in u_grid]
    if any(u <= 0 for u in grid) or grid != sorted(grid):
        raise ConfigError("u grid must be positive and sorted")
    steps = run.landscape_steps if steps is None else steps
    lr = run.landscape_lr if lr is None else lr
    init_seed = int(rng.integers(2**31))
    noise_seed = int(rng.integers(2**31))
    pg = PgConfig(run.lam, run.mc_samples)
    tr, va = data.train, data.val
    rows = []
    for u in grid:
        policy = build_model(run, data, np.random.default_rng(init_seed), hidden=run.bilevel_hidden)
        reward = RewardParams.scalar(u, data.output_dim)
        try:
            pg_train_steps(policy, tr.inputs, tr.targets, reward, pg, Adam(lr), steps, np.random.default_rng(noise_seed))
            value = float(nll_loss(policy, va))
            if not np.isfinite(value):
                value = float("nan")
        except (NonFiniteLoss, FloatingPointError):
            value = float("nan")
        rows.append((u, value))
    return rows


def write_landscape_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("u,outer_nll\n")
        for u, v in rows:
            fh.write(f"{u!r},{'' if not np.isfinite(v) else repr(v)}\n")


# ---------------------------------------------------------------------------
# experiment drivers


def make_dataset(run: RunConfig, seed: int):
    """Return ``(dataset, truth or None)`` for the configured experiment kind."""
    if run.kind in ("synth", "landscape"):
        return generate_synthetic(run.n, run.m, run.count, run.beta, seed)
    if run.kind == "classify":
        if run.csv:
            if not run.target:
                raise ConfigError("classification from CSV needs target")
            features = list(run.features)
            if not features:
                import csv as _csv

                with open(run.csv, newline="", encoding="utf-8") as fh:
                    header = next(_csv.reader(fh), [])
                features = [h.strip() for h in header if h.strip() != run.target]
            return load_csv(run.csv, CsvSchema(features, [run.target], "classification"), seed=seed), None
        return (
            generate_classification(
                count=run.count,
                features=run.class_features,
                num_classes=run.classes,
                seed=seed,
                separation=run.class_separation,
            ),
            None,
        )
    if run.kind == "regress":
        return generate_regression(run.count, run.state_dim, run.action_dim, seed), None
    raise ConfigError(f"experiment kind {run.kind!r} has no dataset")


def _write_jsonl(path: Path, rows) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def run_seed(run: RunConfig, seed: int, out: Path | None = None) -> dict:
    """One seed of a training experiment; writes metrics and timings when ``out`` is set."""
    data, truth = make_dataset(run, seed)
    rng = np.random.default_rng(seed)
    result = train(run, data, rng, truth=truth)
    summary = {"seed": seed, **result.final.as_dict(), **result.meta}
    if not data.is_classification:
        summary.update(instability_flags(result.records, data.output_dim, run.divergence_nats))
        summary["output_dim"] = data.output_dim
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _write_jsonl(out / "metrics.jsonl", (r.as_dict() for r in result.records))
        _write_jsonl(out / "timing.jsonl", ({"epoch": r.epoch, "wall_ms": r.wall_ms} for r in result.records))
        if result.bilevel_trace is not None:
            result.bilevel_trace.write_jsonl(out / "bilevel_trace.jsonl")
    return summary


def aggregate(summaries: list[dict]) -> dict:
    """Mean and standard error of every numeric field across seeds."""
    keys = sorted({k for s in summaries for k, v in s.items() if isinstance(v, (int, float)) and not isinstance(v, bool)})
    out = {}
    for k in keys:
        vals = np.array([s[k] for s in summaries if k in s], dtype=float)
        se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
        out[k] = {"mean": float(vals.mean()), "se": se, "n": int(vals.size)}
    return out


def run_experiment(run: RunConfig) -> dict:
    """Dispatch on ``run.kind``; returns a JSON-ready summary."""
    out = Path(run.out) if run.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(run.as_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if run.kind == "closed-form-check":
        result = closed_form_check(seed=run.seed)
    elif run.kind == "landscape":
        data, truth = make_dataset(run, run.seed)
        rows = landscape_sweep(data, run.u_grid, run, np.random.default_rng(run.seed))
        if out is not None:
            write_landscape_csv(rows, out / "landscape.csv")
        from .closed_form import isotropic_reward

        finite = [(u, v) for u, v in rows if np.isfinite(v)]
        result = {
            "rows": [[u, v] for u, v in rows],
            "argmin_u": min(finite, key=lambda r: r[1])[0] if finite else None,
            "u_star": isotropic_reward(truth.sigma, run.lam),
        }
    else:
        seeds = [run.seed + i for i in range(run.seeds)]
        summaries = [run_seed(run, s, None if out is None else out / f"seed_{s}") for s in seeds]
        result = {"per_seed": summaries, "aggregate": aggregate(summaries)}
    if out is not None:
        (out / "summary.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return result


def closed_form_check(seed: int = 0, instances: int = 20, dims=(1, 2, 4), lams=(0.5, 1.0, 2.0)) -> dict:
    """Compare numerical optima of the inner and outer problems with their closed forms."""
    from .closed_form import inner_solution, maximize_inner_objective, minimize_outer_objective, optimal_reward
    from .linalg import random_spd

    rng = np.random.default_rng(seed)
    rows = []
    for i in range(instances):
        n = dims[i % len(dims)]
        lam = lams[(i // len(dims)) % len(lams)]
        sigma = random_spd(n, rng)
        u = random_spd(n, rng)
        sigma_x = random_spd(n, rng)
        truth = LinearGaussianTruth(rng.uniform(-1, 1, size=(n, n)), sigma)
        a, b = maximize_inner_objective(truth, u, lam, sigma_x)
        sol = inner_solution(u, truth, lam)
        u_num = minimize_outer_objective(sigma, lam)
        u_star = optimal_reward(sigma, lam)
        rows.append(
            {
                "n": n,
                "lam": lam,
                "a_err": float(np.max(np.abs(a - sol.a_star))),
                "b_err": float(np.max(np.abs(b.matrix - sol.b_star.matrix))),
                "u_rel_err": float(np.linalg.norm(u_num.matrix - u_star.matrix) / np.linalg.norm(u_star.matrix)),
            }
        )
    return {
        "instances": rows,
        "max_a_err": max(r["a_err"] for r in rows),
        "max_b_err": max(r["b_err"] for r in rows),
        "max_u_rel_err": max(r["u_rel_err"] for r in rows),
    }

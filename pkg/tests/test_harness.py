import json
import math

import numpy as np
import pytest

from nllpo.data import generate_classification, generate_synthetic
from nllpo.errors import ConfigError, NonFiniteLoss
from nllpo.harness import (
    MetricsRecord,
    RunConfig,
    aggregate,
    binary_auc,
    evaluate_classifier,
    evaluate_moments,
    instability_flags,
    landscape_sweep,
    load_config,
    make_dataset,
    parse_config_text,
    run_experiment,
    run_seed,
    time_to_fraction,
    train,
    write_landscape_csv,
)
from nllpo.models import CategoricalPolicy, GaussianPolicy
from nllpo.objectives import nll_loss


# evaluate_moments


def test_moments_zero_for_truth_model():
    data, truth = generate_synthetic(2, 3, 300, 0.5, seed=0)
    mean_err, var_err = evaluate_moments(truth.as_policy(), truth, data.inputs)
    assert mean_err == pytest.approx(0, abs=1e-12) and var_err == pytest.approx(0, abs=1e-12)


def test_moments_mean_offset():
    data, truth = generate_synthetic(2, 2, 100, 0.5, seed=1)
    model = GaussianPolicy(2, 2, mean_head="linear", logvar_head="constant", bias=True)
    model.params.values[model.params.slice_of("mean_weights")] = truth.lam.T.ravel()
    model.params.values[model.params.slice_of("mean_bias")] = [0.3, -0.4]
    model.params.values[model.params.slice_of("log_var")] = np.log(np.diag(truth.sigma.matrix))
    mean_err, var_err = evaluate_moments(model, truth, data.inputs)
    assert mean_err == pytest.approx(0.5, abs=1e-12)
    assert var_err == pytest.approx(0, abs=1e-12)


def test_moments_recomputation_oracle():
    data, truth = generate_synthetic(2, 2, 100, 0.5, seed=2)
    model = GaussianPolicy(2, 2, hidden=(8,), rng=np.random.default_rng(3))
    mean, logvar = model.forward(data.inputs)
    mean, var = np.asarray(mean), np.exp(np.asarray(logvar))
    expect_mean = np.mean([np.linalg.norm(mean[i] - truth.lam @ data.inputs[i]) for i in range(100)])
    expect_var = np.mean([np.linalg.norm(var[i] - np.diag(truth.sigma.matrix)) for i in range(100)])
    got = evaluate_moments(model, truth, data.inputs)
    assert got == pytest.approx((expect_mean, expect_var), rel=1e-12)


# evaluate_classifier


def test_auc_hand_case():
    assert binary_auc([0.9, 0.8, 0.3, 0.1], [1, 0, 1, 0]) == pytest.approx(0.75)


def test_auc_constant_scores():
    assert binary_auc(np.full(10, 0.4), [0, 1] * 5) == pytest.approx(0.5)


def test_auc_matches_pair_enumeration():
    rng = np.random.default_rng(0)
    scores = rng.integers(0, 5, 60) / 4.0
    labels = rng.integers(0, 2, 60)
    pos, neg = scores[labels == 1], scores[labels == 0]
    pairs = [(p > q) + 0.5 * (p == q) for p in pos for q in neg]
    assert binary_auc(scores, labels) == pytest.approx(np.mean(pairs), abs=1e-12)


class _Fixed(CategoricalPolicy):
    """Categorical policy returning preset probabilities."""

    def __init__(self, probs):
        super().__init__(1, probs.shape[1])
        self._p = probs

    def probs(self, x, theta=None):
        return self._p


def test_classifier_perfect_and_constant():
    data = generate_classification(count=100, features=1, num_classes=2, seed=0).test
    y = data.targets
    perfect = _Fixed(np.eye(2)[y])
    assert evaluate_classifier(perfect, data) == (1.0, 1.0)
    const = _Fixed(np.tile([0.6, 0.4], (len(y), 1)))
    acc, auc = evaluate_classifier(const, data)
    assert acc == pytest.approx(np.mean(y == 0)) and auc == pytest.approx(0.5)


def test_accuracy_matches_brute_force_recount():
    data = generate_classification(count=500, features=4, num_classes=4, seed=1).test
    model = CategoricalPolicy(4, 4, rng=np.random.default_rng(0))
    probs = model.probs(data.inputs)
    correct = 0
    for i in range(len(data)):
        correct += int(max(range(4), key=lambda k: probs[i, k]) == data.targets[i])
    acc, auc = evaluate_classifier(model, data)
    assert acc == correct / len(data) and auc is None


def test_classifier_rejects_empty_split():
    class Empty:
        inputs = np.zeros((0, 2))
        targets = np.zeros(0)

    with pytest.raises(ValueError):
        evaluate_classifier(CategoricalPolicy(2, 2), Empty())


# config


def test_config_defaults_per_kind():
    synth = RunConfig()
    assert (synth.optimizer, synth.lr, synth.epochs, synth.count) == ("adam", 1e-3, 400, 2000)
    assert (synth.batch_size, synth.lam, synth.mc_samples, synth.seeds) == (128, 1.0, 8, 5)
    cls = RunConfig(kind="classify")
    assert (cls.optimizer, cls.lr, cls.epochs, cls.count) == ("sgd", 1e-2, 30, 3000)
    assert RunConfig(kind="classify", lr=0.5).lr == 0.5


def test_config_parsing(tmp_path):
    text = "# comment\nkind = classify\nloss = pg-heuristic  # trailing\nlambda = 0.5\nhidden = 16, 8\nepochs = 3\n"
    parsed = parse_config_text(text)
    assert parsed["lambda"] == "0.5"
    (tmp_path / "run.cfg").write_text(text)
    run = load_config(tmp_path / "run.cfg")
    assert (run.kind, run.loss, run.lam, run.hidden, run.epochs) == ("classify", "pg-heuristic", 0.5, (16, 8), 3)
    assert run.optimizer == "sgd"


@pytest.mark.parametrize(
    "text",
    ["loss = adam", "lambda = -1", "bogus = 1", "epochs = many", "no equals sign", "u_grid = 2, 1", "kind = mbrl"],
)
def test_config_errors(text):
    with pytest.raises(ConfigError):
        RunConfig.from_mapping(parse_config_text(text))


def test_config_round_trip_through_dict():
    run = RunConfig(kind="regress", loss="mse", hidden=(4, 4))
    again = RunConfig.from_mapping(run.as_dict())
    assert again == run


# train


def small_synth(**kw):
    base = dict(epochs=3, hidden=(8,), count=300)
    base.update(kw)
    return RunConfig(**base)


def test_zero_epochs_single_baseline_record():
    run = small_synth(epochs=0)
    data, truth = make_dataset(run, 0)
    result = train(run, data, np.random.default_rng(0), truth=truth)
    assert len(result.records) == 1 and result.records[0].epoch == 0
    ref = GaussianPolicy(2, 2, hidden=(8,), bias=False, rng=np.random.default_rng(0))
    assert result.final.val_nll == pytest.approx(float(nll_loss(ref, data.val)))


@pytest.mark.parametrize("loss", ["nll", "mse", "pg-identity", "pg-heuristic"])
def test_every_loss_runs_on_synth(loss):
    run = small_synth(loss=loss)
    data, truth = make_dataset(run, 0)
    result = train(run, data, np.random.default_rng(0), truth=truth)
    assert [r.epoch for r in result.records] == [0, 1, 2, 3]
    assert all(math.isfinite(v) for r in result.records for v in r.as_dict().values())


def test_pg_implicit_runs_and_records_trace():
    run = small_synth(loss="pg-implicit", outer_iters=2, inner_iters=3, pretrain_iters=10, bilevel_hidden=(4,))
    data, truth = make_dataset(run, 0)
    result = train(run, data, np.random.default_rng(0), truth=truth)
    assert len(result.bilevel_trace) == 2
    assert result.meta["reward_kind"] == "scalar-isotropic" and result.meta["reward_u"] > 0


@pytest.mark.parametrize("loss", ["nll", "pg-identity", "pg-heuristic"])
def test_every_loss_runs_on_classification(loss):
    run = RunConfig(kind="classify", loss=loss, epochs=2, count=300)
    data, _ = make_dataset(run, 0)
    result = train(run, data, np.random.default_rng(0))
    assert 0 <= result.final.accuracy <= 1 and 0 <= result.final.auc <= 1


def test_classification_rejects_mse_and_implicit():
    data, _ = make_dataset(RunConfig(kind="classify", count=100), 0)
    for loss in ("mse", "pg-implicit"):
        with pytest.raises(ConfigError):
            train(RunConfig(kind="classify", loss=loss, epochs=1), data, np.random.default_rng(0))


def test_regress_kind_runs():
    run = RunConfig(kind="regress", epochs=2, count=200, hidden=(8,))
    data, _ = make_dataset(run, 0)
    assert data.input_dim == 4 and data.output_dim == 3
    assert len(train(run, data, np.random.default_rng(0)).records) == 3


@pytest.mark.slow
def test_nll_reaches_truth_nll():
    run = RunConfig(loss="nll")
    data, truth = make_dataset(run, 0)
    result = train(run, data, np.random.default_rng(0), truth=truth)
    # the truth model's NLL on the same rows removes split sampling noise from the comparison
    truth_nll = float(nll_loss(truth.as_policy(), data.val))
    assert abs(result.final.val_nll - truth_nll) / data.output_dim <= 0.05


# instability detection


def test_instability_flags():
    stable = [MetricsRecord(e, val_nll=v, clamp_frac=0.0) for e, v in enumerate([3.0, 2.0, 1.5, 1.5])]
    assert not instability_flags(stable, 2)["unstable"]
    rising = stable + [MetricsRecord(4, val_nll=3.0, clamp_frac=0.0)]
    flags = instability_flags(rising, 2)
    assert flags["nll_diverged"] and flags["nll_rise_per_dim"] == pytest.approx(0.75)
    clamped = stable[:-1] + [MetricsRecord(3, val_nll=1.5, clamp_frac=0.2)]
    assert instability_flags(clamped, 2)["clamp_engaged"]


def test_time_to_fraction():
    assert time_to_fraction([10.0, 5.0, 1.08, 1.0]) == 2
    assert time_to_fraction([1.0]) == 0


def test_aggregate_mean_and_standard_error():
    agg = aggregate([{"a": 1.0, "s": "x"}, {"a": 3.0, "s": "y"}])
    assert agg == {"a": {"mean": 2.0, "se": 1.0, "n": 2}}


# landscape


def test_landscape_single_point(tmp_path):
    run = RunConfig(kind="landscape", count=200, bilevel_hidden=(4,))
    data, _ = make_dataset(run, 0)
    rows = landscape_sweep(data, [1.0], run, np.random.default_rng(0), steps=5)
    assert len(rows) == 1 and rows[0][0] == 1.0 and np.isfinite(rows[0][1])
    write_landscape_csv(rows + [(2.0, float("nan"))], tmp_path / "l.csv")
    lines = (tmp_path / "l.csv").read_text().splitlines()
    assert lines[0] == "u,outer_nll" and lines[2] == "2.0,"


def test_landscape_rejects_unsorted_grid():
    run = RunConfig(kind="landscape", count=100)
    data, _ = make_dataset(run, 0)
    with pytest.raises(ConfigError):
        landscape_sweep(data, [2.0, 1.0], run, np.random.default_rng(0), steps=1)


def test_landscape_records_failures_as_missing(monkeypatch):
    import nllpo.harness as harness

    real = harness.pg_train_steps

    def flaky(policy, x, y, reward, *args):
        if reward.u > 1.5:
            raise NonFiniteLoss("diverged")
        return real(policy, x, y, reward, *args)

    monkeypatch.setattr(harness, "pg_train_steps", flaky)
    run = RunConfig(kind="landscape", count=200, bilevel_hidden=(4,))
    data, _ = make_dataset(run, 0)
    rows = landscape_sweep(data, [1.0, 2.0, 3.0], run, np.random.default_rng(0), steps=5)
    assert np.isfinite(rows[0][1]) and np.isnan(rows[1][1]) and np.isnan(rows[2][1])


@pytest.mark.slow
def test_landscape_argmin_near_optimum(tmp_path):
    run = RunConfig(kind="landscape", out=str(tmp_path))
    result = run_experiment(run)
    grid = list(run.u_grid)
    i, j = grid.index(result["argmin_u"]), int(np.argmin([abs(u - result["u_star"]) for u in grid]))
    assert abs(i - j) <= 1
    assert (tmp_path / "landscape.csv").read_text().startswith("u,outer_nll\n")


@pytest.mark.slow
def test_landscape_converged_under_smaller_step():
    run = RunConfig(kind="landscape", mean_head="linear", logvar_head="constant")
    data, _ = make_dataset(run, 0)
    grid = (1.0, 2.0)
    a = landscape_sweep(data, grid, run, np.random.default_rng(0), steps=1500, lr=1e-2)
    b = landscape_sweep(data, grid, run, np.random.default_rng(0), steps=3000, lr=5e-3)
    for (_, x), (_, y) in zip(a, b):
        assert abs(x / y - 1) < 0.01


# drivers and determinism


def test_run_seed_is_byte_deterministic(tmp_path):
    run = small_synth(loss="pg-heuristic")
    run_seed(run, 4, tmp_path / "a")
    run_seed(run, 4, tmp_path / "b")
    a = (tmp_path / "a" / "metrics.jsonl").read_bytes()
    assert a == (tmp_path / "b" / "metrics.jsonl").read_bytes()
    assert len(a.splitlines()) == 4
    assert "wall_ms" not in json.loads(a.splitlines()[0])
    run_seed(run, 5, tmp_path / "c")
    assert a != (tmp_path / "c" / "metrics.jsonl").read_bytes()


def test_run_experiment_writes_outputs(tmp_path):
    run = small_synth(seeds=2, out=str(tmp_path))
    result = run_experiment(run)
    assert [s["seed"] for s in result["per_seed"]] == [0, 1]
    assert result["aggregate"]["val_nll"]["n"] == 2
    for name in ("config.json", "summary.json", "seed_0/metrics.jsonl", "seed_1/timing.jsonl"):
        assert (tmp_path / name).exists()


def test_closed_form_check_summary():
    result = run_experiment(RunConfig(kind="closed-form-check"))
    assert len(result["instances"]) == 20
    assert result["max_a_err"] <= 1e-4 and result["max_b_err"] <= 1e-3 and result["max_u_rel_err"] <= 0.02

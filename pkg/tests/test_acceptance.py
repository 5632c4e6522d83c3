"""Acceptance checks; a PASS/FAIL line per criterion is printed at the end of the run."""

import shutil
import time
from dataclasses import replace

import numpy as np
import pytest
import yaml

from storn import cli, data, tasks
from storn.core import Tape, backward, finite_difference_grad
from storn.estimator import bound_estimate, importance_nll
from storn.model import (EPS_SIGMA, PosteriorStats, StornModel, kl_standard_normal,
                         save_model, srnn_nll, storn_bound)
from storn.optimizer import AdadeltaState, TrainConfig, adadelta_step, fit

from helpers import grad_errors, linear_model, random_batch, random_model

criterion = pytest.mark.criterion


# -- 1 -------------------------------------------------------------------------

def gradient_instance(i):
    """Instance ``i``: kind cycles through sRNN NLL, STORN bound and joint paths."""
    rng = np.random.default_rng(1000 + i)
    kind = ("srnn", "bound", "joint")[i % 3]
    K, H = int(rng.integers(1, 4)), int(rng.integers(1, 9))
    L = 0 if kind == "srnn" else int(rng.integers(1, 5))
    T, B = int(rng.integers(1, 11)), int(rng.integers(1, 4))
    lik = ("bernoulli", "gaussian")[(i // 3) % 2]
    mode = ("causal", "causal_exclusive", "bidirectional")[i % 3] if kind == "joint" else "causal"
    m = random_model(rng, K, H, L, likelihood=lik, recognition=mode,
                     f_h=("tanh", "logistic")[(i // 2) % 2])
    if lik == "gaussian":
        m = replace(m, output_std=float(rng.uniform(0.5, 2.0)))
    x = random_batch(rng, T, B, K, binary=lik == "bernoulli")
    eps = rng.standard_normal((T, B, L))
    return m, x, eps, kind


@criterion(1, "gradient suite vs central finite differences")
def test_gradient_suite():
    start = time.perf_counter()
    worst = []
    for i in range(24):
        m, x, eps, kind = gradient_instance(i)

        def objective(model):
            if kind == "srnn":
                return srnn_nll(model, x)[1]
            rep = storn_bound(model, x, eps)
            return rep.loss() if kind == "joint" else rep.bound_total

        tape = Tape()
        g = backward(tape, objective(m.watch(tape)))
        # h=1e-6: truncation error is O(h^2) and a few instances have sharp curvature
        num = finite_difference_grad(lambda a: float(objective(m.with_arrays(a))), m.arrays(),
                                     step=1e-6)
        if kind != "srnn":
            assert any(k.startswith("recog.") for k in g)
        worst.append(grad_errors(g, num))
    elapsed = time.perf_counter() - start
    print("worst relative error %.2e over %d instances, %.1fs" % (max(worst), len(worst), elapsed))
    assert max(worst) < 1e-5
    assert elapsed < 60


# -- 2 -------------------------------------------------------------------------

@criterion(2, "closed-form KL vs Monte Carlo")
def test_kl_monte_carlo():
    rng = np.random.default_rng(2)
    n = 100_000
    worst = 0.0
    for _ in range(50):
        shape = (int(rng.integers(1, 4)), 1, int(rng.integers(1, 4)))
        mu = rng.uniform(-2, 2, shape)
        sig = rng.uniform(0.3, 3.0, shape)
        closed = kl_standard_normal(PosteriorStats(mu, sig, sig ** 2), np.ones(shape[:2]))[0]
        e = rng.standard_normal((n,) + shape)
        z = mu + sig * e
        log_q = -0.5 * e ** 2 - np.log(sig)
        log_p = -0.5 * z ** 2
        terms = np.sum(log_q - log_p, axis=(1, 2, 3))
        se = terms.std(ddof=1) / np.sqrt(n)
        worst = max(worst, abs(terms.mean() - closed) / se)
    print("largest deviation %.2f standard errors" % worst)
    assert worst < 3


# -- 3 -------------------------------------------------------------------------

@criterion(3, "importance-sampled NLL vs analytic linear-Gaussian marginal")
def test_estimator_linear_gaussian():
    start = time.perf_counter()
    zs = []
    for k in range(12):
        rng = np.random.default_rng(300 + k)
        m = linear_model(rng, output_std=float(rng.uniform(0.5, 1.0)))
        T = int(rng.integers(1, 5))
        ds = data.synth_linear_gaussian(3, T, seed=k, model=m)
        est = importance_nll(m, ds.batch(), 10_000, seed=k)
        diff = est.total - ds.oracle["nll"].sum()
        zs.append(diff / np.sqrt(np.sum(est.stderr ** 2)))
    print("z-scores", np.round(zs, 2), "%.1fs" % (time.perf_counter() - start))
    assert np.all(np.abs(zs) < 3)
    assert time.perf_counter() - start < 60


# -- 4 -------------------------------------------------------------------------

@criterion(4, "mean single-sample bound above importance estimate")
def test_bound_ordering():
    margins = []
    for k in range(10):
        rng = np.random.default_rng(400 + k)
        lik = ("bernoulli", "gaussian")[k % 2]
        m = random_model(rng, 2, int(rng.integers(2, 6)), int(rng.integers(1, 4)), likelihood=lik,
                         recognition=("causal", "bidirectional")[k % 2])
        x = random_batch(rng, 6, 2, 2, binary=lik == "bernoulli")
        b = bound_estimate(m, x, 1000, seed=1)
        nll = importance_nll(m, x, 1000, seed=2)
        se = np.sqrt(np.sum(b.stderr ** 2) + np.sum(nll.stderr ** 2))
        margins.append((b.value.sum() - nll.total) / se)
    print("bound minus estimate in standard errors", np.round(margins, 1))
    assert min(margins) >= -3


# -- 5 -------------------------------------------------------------------------

def no_latent_input(m):
    a = m.arrays()
    a["gen.W_lat"][:] = 0
    return m.with_arrays(a)


@criterion(5, "zero latent-input map reduces STORN to an sRNN")
def test_reduction_in_memory():
    for k in range(5):
        rng = np.random.default_rng(500 + k)
        m = no_latent_input(random_model(rng, 3, 4, 2, likelihood=("bernoulli", "gaussian")[k % 2]))
        x = random_batch(rng, 7, 3, 3, binary=k % 2 == 0)
        r1 = storn_bound(m, x, rng.standard_normal((7, 3, 2)))
        r2 = storn_bound(m, x, rng.standard_normal((7, 3, 2)))
        assert np.array_equal(r1.recon_nll, r2.recon_nll)
        assert np.array_equal(r1.recon_nll, srnn_nll(m, x)[0])


@criterion(5, "zero latent-input map reduces STORN to an sRNN")
def test_reduction_through_cmd_eval(tmp_path):
    rng = np.random.default_rng(55)
    m = no_latent_input(random_model(rng, 3, 4, 2))
    a = m.arrays()
    a["recog.W_out"][:] = 0
    a["recog.b_out"][:] = [0, 0, np.sqrt(1 - EPS_SIGMA), np.sqrt(1 - EPS_SIGMA)]
    prior_q = m.with_arrays(a)
    plain = replace(m, W_lat=np.zeros((0, 4)), recog=None)
    ds = data.synth_coupled_binary(6, 8, channels=3, seed=5)
    data.write_event_sequences(tmp_path / "d.events", ds)
    extra = {"data_kind": "binary", "channels": 3}
    reports = {}
    for name, model in (("storn", m), ("prior", prior_q), ("srnn", plain)):
        save_model(tmp_path / (name + ".storn"), model, extra)
        assert cli.main(["eval", str(tmp_path / (name + ".storn")), str(tmp_path / "d.events"),
                         "--samples", "50", "--out", str(tmp_path / (name + ".csv"))]) == 0
        with open(tmp_path / (name + ".csv")) as fh:
            rows = list(__import__("csv").DictReader(fh))
        reports[name] = {r["seq_id"]: r for r in rows}
    for sid, ref in reports["srnn"].items():
        exact = float(ref["is_nll"])
        s, p = reports["storn"][sid], reports["prior"][sid]
        assert float(s["bound"]) - float(s["kl"]) == pytest.approx(exact, rel=1e-12)
        assert float(p["is_nll"]) == pytest.approx(exact, rel=1e-12)
        assert float(p["bound"]) == pytest.approx(exact, rel=1e-12)


# -- 6 -------------------------------------------------------------------------

@criterion(6, "coupled binary data separates STORN from the factorized sRNN")
def test_coupled_separation():
    train = data.synth_coupled_binary(300, 20, channels=4, seed=1)
    valid = data.synth_coupled_binary(50, 20, channels=4, seed=2)
    test = data.synth_coupled_binary(50, 20, channels=4, seed=3)
    cfg = TrainConfig(batch_size=16, max_epochs=60, patience=10, seed=0)
    results = {}
    for name, latent in (("storn", 2), ("srnn", 0)):
        start = time.perf_counter()
        model = StornModel.create(4, 16, latent, f_h="logistic", seed=0)
        fitted = fit(model, train, valid, cfg).model
        elapsed = time.perf_counter() - start
        assert elapsed < 300
        results[name] = importance_nll(fitted, test.batch(), 200, seed=0).mean_per_step
    print("test NLL per step: STORN %.3f, sRNN %.3f (floors %.3f / %.3f)"
          % (results["storn"], results["srnn"], test.oracle["true_nll_per_step"],
             test.oracle["factorized_nll_per_step"]))
    assert results["storn"] <= 1.1
    assert results["srnn"] >= 2.5


# -- 7 -------------------------------------------------------------------------

@criterion(7, "imputation beats half the noise-fill baseline")
def test_imputation():
    train = data.synth_sines(200, 60, seed=1)
    stats = data.fit_standardization(train)
    train = data.standardize_dataset(train, stats)
    valid = data.standardize_dataset(data.synth_sines(30, 60, seed=2), stats)
    test = data.standardize_dataset(data.synth_sines(50, 60, seed=3), stats)
    model = StornModel.create(2, 16, 2, likelihood="gaussian", recognition="bidirectional",
                              f_h="tanh", seed=0)
    fitted = fit(model, train, valid, TrainConfig(batch_size=16, max_epochs=50, seed=0)).model
    x = test.batch()
    spec = tasks.CorruptionSpec(30, 40, seed=5)
    corrupted = tasks.corrupt(x, spec)
    imputed = tasks.window_mse(tasks.impute(fitted, corrupted, spec), x, spec).mean()
    baseline = tasks.window_mse(corrupted, x, spec).mean()
    print("window MSE %.4f vs noise baseline %.4f" % (imputed, baseline))
    assert imputed < 0.5 * baseline


# -- 8 -------------------------------------------------------------------------

@criterion(8, "bitwise determinism of training and sampling commands")
def test_determinism(tmp_path):
    assert cli.main(["synth", "sines", "--n", "30", "--length", "20", "--seed", "4",
                     "--out", str(tmp_path / "d.csv")]) == 0
    first_data = (tmp_path / "d.csv").read_bytes()
    cli.main(["synth", "sines", "--n", "30", "--length", "20", "--seed", "4",
              "--out", str(tmp_path / "d.csv")])
    assert (tmp_path / "d.csv").read_bytes() == first_data
    cfg = {"seed": 9, "output_dir": "run",
           "data": {"train": "d.csv", "kind": "real"},
           "model": {"hidden": 6, "latent": 2, "recognition": "bidirectional"},
           "train": {"batch_size": 8, "max_epochs": 3}}
    (tmp_path / "c.yaml").write_text(yaml.safe_dump(cfg))

    def run_all():
        shutil.rmtree(tmp_path / "run", ignore_errors=True)
        assert cli.main(["train", str(tmp_path / "c.yaml")]) == 0
        ck = str(tmp_path / "run" / "model.storn")
        assert cli.main(["eval", ck, str(tmp_path / "d.csv"), "--samples", "20", "--seed", "1",
                         "--out", str(tmp_path / "run" / "eval.csv")]) == 0
        assert cli.main(["sample", ck, str(tmp_path / "d.csv"), "--horizon", "10", "--count", "4",
                         "--seed", "2", "--out", str(tmp_path / "run" / "samples.csv")]) == 0
        assert cli.main(["impute", ck, str(tmp_path / "d.csv"), "--window", "5", "9", "--seed", "3",
                         "--out", str(tmp_path / "run" / "imp")]) == 0
        names = ["train_log.csv", "model.storn", "eval.csv", "samples.csv",
                 "imp/imputed.csv", "imp/mse.csv"]
        return {n: (tmp_path / "run" / n).read_bytes() for n in names}

    a, b = run_all(), run_all()
    for name in a:
        assert a[name] == b[name], name


# -- 9 -------------------------------------------------------------------------

@criterion(9, "Adadelta first step and zero-momentum recurrence")
def test_adadelta_unit():
    p = {"w": np.zeros(1)}
    new, _ = adadelta_step(p, {"w": np.ones(1)}, AdadeltaState.zeros(p, 0.95, 1e-6, 0.0))
    assert abs(new["w"][0] - (-0.0044721)) < 1e-7
    assert abs(new["w"][0] - (-0.00447209123431084)) < 1e-9

    rng = np.random.default_rng(9)
    theta = rng.standard_normal((3, 2))
    p = {"w": theta}
    state = AdadeltaState.zeros(p, momentum=0.0)
    eg, ex, ref = np.zeros_like(theta), np.zeros_like(theta), theta
    for _ in range(30):
        g = rng.standard_normal(theta.shape)
        p, state = adadelta_step(p, {"w": g}, state)
        eg = 0.95 * eg + (1 - 0.95) * g * g
        dx = -(np.sqrt(ex + 1e-6) / np.sqrt(eg + 1e-6)) * g
        ex = 0.95 * ex + (1 - 0.95) * dx * dx
        ref = ref + dx
        assert np.array_equal(p["w"], ref)

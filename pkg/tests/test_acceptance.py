"""Acceptance criteria 1-10, one test each.

The MNIST-based criteria read IDX files from ``RNNPRUNE_MNIST_DIR`` if set and
otherwise export a 5000-digit subset through ``scripts/make_mnist_idx.py``
(needs mlxtend). The five-seed desk sweep runs once per session.
"""

import importlib.util
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE
from oracles import dead_units, gradient_check_suite, train_dead_parity_irnn
from test_pruning import closed_form_suite, dense_ratios, diagonal_family

from rnnprune import baselines as Bl
from rnnprune import bounds as B
from rnnprune import experiment as E
from rnnprune import pruning as P
from rnnprune.covariance import covariance_of, nonzero_rows, read_spectrum_csv
from rnnprune.rnn import evaluate, forward, load_params

ROOT = Path(__file__).resolve().parent.parent


def record(number, ok, detail):
    ACCEPTANCE[number] = (bool(ok), detail)
    assert ok, detail


@pytest.fixture(scope="session")
def mnist_dir(tmp_path_factory):
    env = os.environ.get(E.MNIST_ENV)
    if env:
        return Path(env)
    spec = importlib.util.spec_from_file_location("make_mnist_idx", ROOT / "scripts" / "make_mnist_idx.py")
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    out = tmp_path_factory.mktemp("mnist")
    module.export(out, n_train=4000, n_test=1000, seed=0)
    return out


@pytest.fixture(scope="session")
def desk_cfg(mnist_dir):
    return E.build_config(overrides=[("data.mnist_dir", str(mnist_dir))])


@pytest.fixture(scope="session")
def desk_sweep(desk_cfg, tmp_path_factory):
    start = time.perf_counter()
    out = E.run_sweep(desk_cfg, tmp_path_factory.mktemp("desk_sweep"))
    return out, time.perf_counter() - start


def test_criterion_01_gradient_check():
    start = time.perf_counter()
    worst = gradient_check_suite(count=20, seed=0)
    elapsed = time.perf_counter() - start
    record(1, worst <= 1e-5 and elapsed < 10.0, f"max rel error {worst:.2e} (<= 1e-5), {elapsed:.2f} s (< 10 s)")


def test_criterion_02_closed_form():
    value, matrix = closed_form_suite(count=100, seed=0)
    record(2, value <= 1e-8 and matrix <= 1e-8,
           f"100 instances: loss rel gap {value:.2e}, A_J rel gap {matrix:.2e} (<= 1e-8)")


def test_criterion_03_lossless_dead_units():
    net, data, cov, chunks = train_dead_parity_irnn()
    m_nzr, j_nzr = nonzero_rows(cov)
    dead = len(dead_units(cov))
    res = P.compress(net, cov, j_nzr, P.TauSpec.zero())
    gap = float(np.max(np.abs(forward(net, data)[0] - forward(res.compressed, data)[0])))
    acc_full = evaluate(net, data)["accuracy"]
    acc_small = evaluate(res.compressed, data)["accuracy"]
    ok = dead >= 10 and gap <= 1e-6 and acc_full == acc_small
    record(3, ok, f"m=32, {dead} dead units after {chunks} chunk(s), m_nzr={m_nzr}, max |out gap| {gap:.1e}, "
                  f"train acc {acc_full:.4f} vs {acc_small:.4f}")


def test_criterion_04_greedy_vs_exhaustive():
    mismatches = 0
    cases = 0
    for cov in diagonal_family():
        for k in range(1, cov.m + 1):
            cases += 1
            g = P.objective(cov, P.greedy_select(cov, k))
            e = P.objective(cov, P.exhaustive_select(cov, k))
            mismatches += g != e
    ratios = dense_ratios(count=50, seed=0)
    record(4, mismatches == 0,
           f"diagonal: {cases - mismatches}/{cases} exact; dense m=8, m#=4: worst ratio {max(ratios):.4f} "
           f"(report only, 1.5 target {'met' if max(ratios) <= 1.5 else 'missed'})")


def test_criterion_05_prop2(desk_sweep, desk_cfg, mnist_dir):
    out, _ = desk_sweep
    cfg = desk_cfg
    train_ds, _ = E.load_datasets(cfg)
    trained = load_params(out / "seed_0" / "trained.json")
    start = time.perf_counter()
    cov = covariance_of(trained, train_ds)
    res = B.check_prop2(cov, cfg["prune"]["m_sharp"], 0.2, 200, seed=0)
    elapsed = time.perf_counter() - start
    rates = [r for r in E.read_csv(out / "bounds.csv") if r["check"] == "prop2_success_rate"]
    others = ", ".join(f"{float(r['rhs']):.3f}" for r in rates)
    record(5, res.success_rate >= 0.8 and elapsed < 60.0,
           f"seed 0: rate {res.success_rate:.3f} (>= 0.8) at lambda {res.lam:.3e}, N {res.dof:.3f}, "
           f"{elapsed:.1f} s; sweep seeds: {others}")


def test_criterion_06_approximation_bound(desk_sweep):
    out, _ = desk_sweep
    rows = [r for r in E.read_csv(out / "bounds.csv") if r["check"] == "approx_error"]
    bad = [r for r in rows if r["holds"] != "1" or float(r["lhs"]) > float(r["rhs"])]
    worst = max(float(r["lhs"]) / float(r["rhs"]) for r in rows if float(r["rhs"]) > 0)
    record(6, rows and not bad, f"{len(rows)} compressed models, {len(bad)} violations, worst lhs/rhs {worst:.2e}")


def test_criterion_07_loss_curve_and_spectrum(desk_sweep, desk_cfg):
    out, _ = desk_sweep
    train_ds, _ = E.load_datasets(desk_cfg)
    problems = []
    nzr = []
    residues = []
    for seed_dir in sorted(out.glob("seed_*")):
        name = seed_dir.name
        rows = E.read_csv(seed_dir / "loss_vs_msharp.csv")
        curve = [float(r["input_loss"]) for r in rows]
        k = json.loads((seed_dir / "info.json").read_text())["m_nzr"]
        nzr.append(k)
        if any(b > a for a, b in zip(curve, curve[1:])):
            problems.append(f"{name}: curve increases")
        first_zero = next((i + 1 for i, v in enumerate(curve) if v == 0.0), None)
        if first_zero != k:
            problems.append(f"{name}: first zero at {first_zero}, m_nzr {k}")

        cov = covariance_of(load_params(seed_dir / "trained.json"), train_ds)
        diag = np.diag(cov.sigma)
        _, live = nonzero_rows(cov)
        dead_mass = float(np.delete(diag, live).sum())
        residues.append(dead_mass)
        mu = read_spectrum_csv(seed_dir / "spectrum.csv")
        if np.any(np.diff(mu) > 0) or mu.min() < 0:
            problems.append(f"{name}: spectrum not sorted and non-negative")
        exact_dead = int(np.sum(diag == 0.0))
        zeros = int(np.sum(mu == 0.0))
        if zeros < exact_dead or np.any(mu[mu.size - zeros:] != 0.0):
            problems.append(f"{name}: {zeros} trailing zeros for {exact_dead} identically zero rows")
        # eigenvalues past m_nzr are bounded by the mass of the rows counted as zero
        slack = 1e-12 * float(np.linalg.norm(mu))
        if k < mu.size and mu[k:].max() > dead_mass + slack:
            problems.append(f"{name}: eigenvalue {mu[k]:.2e} beyond m_nzr exceeds dead mass {dead_mass:.2e}")
    record(7, not problems, f"m_nzr per seed {nzr}, sub-tolerance mass up to {max(residues):.1e}; "
                            + ("; ".join(problems) or "curves exact"))


def test_criterion_08_method_ordering(desk_sweep):
    out, elapsed = desk_sweep
    comp = {r["method"]: r for r in E.read_csv(out / "comparison.csv")}
    mean = {k: float(v["accuracy_mean"]) for k, v in comp.items()}
    ft = float(comp["spectral_rec"]["finetuned_mean"])
    random_best = max(mean["random_rec"], mean["random_norec"])
    ok = (mean["spectral_rec"] > mean["spectral_norec"] > random_best and ft >= mean["spectral_rec"]
          and elapsed < 900.0)
    record(8, ok, f"rec {mean['spectral_rec']:.4f} > norec {mean['spectral_norec']:.4f} > random "
                  f"{random_best:.4f}; finetuned {ft:.4f}; sweep {elapsed:.0f} s (< 900 s)")


def test_criterion_09_spectral_algebra(desk_sweep, desk_cfg):
    out, _ = desk_sweep
    train_ds, _ = E.load_datasets(desk_cfg)
    trained = load_params(out / "seed_0" / "trained.json")
    cov = covariance_of(trained, train_ds)
    sums, dofs = [], []
    eye = np.eye(cov.m)
    for lam in np.logspace(-6, 2, 9) * cov.eig().eigenvalues[0]:
        sums.append(abs(B.leverage_scores(cov, lam).sum() - 1.0))
        direct = np.trace(cov.sigma @ np.linalg.inv(cov.sigma + lam * eye))
        dofs.append(abs(B.degrees_of_freedom(cov, lam) - direct) / max(direct, 1e-300))
    k = desk_cfg["prune"]["m_sharp"]
    low = Bl.low_rank_factorize(trained, k)
    s2 = np.sort(np.linalg.eigvalsh(trained.w_hid.T @ trained.w_hid))[::-1]
    ey = abs(np.sum((trained.w_hid - low.w_hid) ** 2) / np.sum(s2[k:]) - 1.0)
    ok = max(sums) <= 1e-10 and max(dofs) <= 1e-9 and ey <= 1e-6
    record(9, ok, f"|sum tau' - 1| {max(sums):.1e}, N rel gap {max(dofs):.1e}, Eckart-Young rel gap {ey:.1e}")


def test_criterion_10_determinism(desk_cfg, tmp_path):
    cfg = E.build_config(overrides=[("data.mnist_dir", desk_cfg["data"]["mnist_dir"]), ("train.seed", 3)])
    a = E.run(cfg, tmp_path / "a")
    b = E.run(cfg, tmp_path / "b")
    same = (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    record(10, same, f"desk run, seed 3, metrics.csv {'byte-identical' if same else 'differs'}")

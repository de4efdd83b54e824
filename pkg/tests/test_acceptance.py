"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is repeated in the terminal summary.
Criteria 1 to 3 share five full-length sampler runs (a few minutes).
"""

import itertools
import json
import math
import subprocess
import sys
from types import SimpleNamespace

import numpy as np
import pytest
import scipy.stats

from phyloclone.diagnostics import effective_sample_size, gelman_rubin
from phyloclone.evaluate import f_error, model_select, z_error
from phyloclone.model import (ModelParams, ObservedData, Phylogeny, betabinomial_log_pmf,
                              genotype_log_conditionals, joint_log_posterior, tree_log_prior)
from phyloclone.sampler import ChainState, SamplerConfig, run, sample
from phyloclone.simulate import SimulationSpec, sample_tree, simulate_dataset

from oracles import (all_parent_vectors, brute_force_errors, enumerate_posterior,
                     random_metric_instance, total_variation)

DATA_SEED = 1
RUN_SEEDS = (11, 12, 13)


@pytest.fixture(scope="module")
def synthetic():
    data, truth = simulate_dataset(SimulationSpec(J=100, T=5, K=4, mean_depth=200, mu=0.5,
                                                  rho=0.05, nu=0.9, gamma_sym=2.0,
                                                  seed=DATA_SEED))
    params = ModelParams()
    fits = {}
    for K, seed in [(4, s) for s in RUN_SEEDS] + [(3, RUN_SEEDS[0]), (5, RUN_SEEDS[0])]:
        fits[K, seed] = run(data, K, params, SamplerConfig(seed=seed))
    return SimpleNamespace(data=data, truth=truth, fits=fits)


@pytest.mark.slow
def test_criterion_1_synthetic_recovery(synthetic, criterion):
    _, est = synthetic.fits[4, RUN_SEEDS[0]]
    zerr, sigma = z_error(est.Z, synthetic.truth.Z)
    ferr = f_error(est.F, synthetic.truth.F, sigma, synthetic.data.J)
    criterion(1, zerr <= 0.05 and ferr <= 0.05, f"Z_err={zerr:.4f} F_err={ferr:.4f} (<= 0.05)")


@pytest.mark.slow
def test_criterion_2_model_selection(synthetic, criterion):
    cands = [(K, synthetic.fits[K, RUN_SEEDS[0]][1]) for K in (3, 4, 5)]
    chosen = model_select(cands)
    # constructed near-tie: smaller model ahead by 0.53 in posterior, larger fits better
    tie = [(4, SimpleNamespace(log_posterior=-14464.05, log_likelihood=-14100.0)),
           (5, SimpleNamespace(log_posterior=-14464.58, log_likelihood=-14090.0))]
    clear = [(4, SimpleNamespace(log_posterior=-14464.05, log_likelihood=-14100.0)),
             (5, SimpleNamespace(log_posterior=-14470.00, log_likelihood=-14090.0))]
    ok = chosen == 4 and model_select(tie) == 5 and model_select(clear) == 4
    lps = ", ".join(f"K={K}: {e.log_posterior:.2f}" for K, e in cands)
    criterion(2, ok, f"selected K={chosen} ({lps}); near-tie -> {model_select(tie)}")


@pytest.mark.slow
def test_criterion_3_convergence(synthetic, criterion):
    series = [synthetic.fits[4, s][0].log_posterior for s in RUN_SEEDS]
    r = gelman_rubin(series)
    criterion(3, r < 1.1, f"PSRF={r:.4f} over {len(series)} replicates (< 1.1)")


def test_criterion_4_exact_posterior(criterion):
    data = ObservedData(np.array([[5, 12], [0, 1], [8, 3]]),
                        np.array([[20, 25], [15, 18], [22, 30]]))
    # clones 2 and 3 share a fraction row, so relabelling moves never change F
    F = np.array([[0.4, 0.3], [0.3, 0.35], [0.3, 0.35]])
    params = ModelParams()
    s, gamma = 50.0, np.array([2.0, 2.0])
    exact = {}
    for (parents, zbytes, _), p in enumerate_posterior(data, 3, F, s, gamma, params).items():
        exact[parents, zbytes] = exact.get((parents, zbytes), 0.0) + p
    init = ChainState.build(Phylogeny(np.array([-1, 0, 0])), np.zeros((3, 3), np.int8), F, s,
                            gamma, data, params)
    cfg = SamplerConfig(iterations=111_112, burn_in_fraction=0.1, thin=1, seed=4,
                        frozen=("fractions", "overdispersion", "concentrations"))
    trace = sample(data, 3, params, cfg, init=[init] * cfg.n_chains)
    assert np.all(trace.F == F)
    emp = {}
    for i in range(len(trace)):
        key = (tuple(int(v) for v in trace.parents[i]), trace.Z[i].tobytes())
        emp[key] = emp.get(key, 0) + 1
    emp = {k: v / len(trace) for k, v in emp.items()}
    tv = total_variation(emp, exact)
    criterion(4, len(exact) == 128 and len(trace) >= 100_000 and tv < 0.05,
              f"TV={tv:.4f} over {len(exact)} states, {len(trace)} retained sweeps (< 0.05)")


def test_criterion_5_density_oracles(criterion):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(200):
        d = int(rng.integers(0, 400))
        x = int(rng.integers(0, d + 1))
        p = float(rng.uniform(0.005, 0.995))
        s = float(np.exp(rng.uniform(np.log(0.5), np.log(5000))))
        ref = scipy.stats.betabinom.logpmf(x, d, s * p, s * (1 - p))
        worst = max(worst, abs(float(betabinomial_log_pmf(x, d, p, s)) - ref))
    mass = 0.0
    for d in range(51):
        for p, s in [(0.005, 1.0), (0.3, 11.0), (0.5, 110.0), (0.9, 3000.0)]:
            xs = np.arange(d + 1)
            mass = max(mass, abs(np.exp(betabinomial_log_pmf(xs, d, p, s)).sum() - 1))
    tree_mass = 0.0
    for K in range(2, 7):
        delta = 1 / (2 * K)
        total = sum(math.exp(tree_log_prior(Phylogeny(np.array(pv)), delta))
                    for pv in all_parent_vectors(K))
        tree_mass = max(tree_mass, abs(total - 1))
    cond = 0.0
    params = ModelParams()
    for K in range(2, 6):
        for pv in all_parent_vectors(K):
            t = Phylogeny(np.array(pv))
            for bits in itertools.product((0, 1), repeat=K - 1):
                c = genotype_log_conditionals(np.array((0,) + bits), t, params)
                cond = max(cond, np.abs(np.exp(c[1:]).sum(axis=1) - 1).max())
    ok = worst < 1e-9 and mass < 1e-10 and tree_mass < 1e-10 and cond < 1e-12
    criterion(5, ok, f"bb grid {worst:.1e}, pmf mass {mass:.1e}, tree mass {tree_mass:.1e}, "
                     f"conditionals {cond:.1e}")


def test_criterion_6_prior_frequencies(criterion):
    n = 100_000
    rng = np.random.default_rng(6)
    worst, details = 0.0, []
    for K in (3, 4, 5):
        roots = np.zeros(K, dtype=np.int64)
        for _ in range(n):
            roots += sample_tree(K, rng).parents == 0
        delta = 1 / (2 * K)
        se = math.sqrt(delta * (1 - delta) / n)
        for k in range(2, K):
            z = abs(roots[k] / n - delta) / se
            worst = max(worst, z)
        details.append(f"K={K}: {roots[2:] / n}")
    criterion(6, worst <= 3.0, f"max |freq - delta| = {worst:.2f} SE (<= 3); " + "; ".join(details))


def test_criterion_7_metric_oracles(criterion):
    rng = np.random.default_rng(7)
    bad = 0
    for _ in range(100):
        Zi, Zt, Fi, Ft = random_metric_instance(rng)
        zb, fb, _ = brute_force_errors(Zi, Zt, Fi, Ft)
        err, sigma = z_error(Zi, Zt)
        ferr = f_error(Fi, Ft, sigma, Zt.shape[0])
        bad += not (abs(err - zb) < 1e-12 and abs(ferr - fb) < 1e-12)
    perm_bad = 0
    for _ in range(100):
        K = int(rng.integers(2, 7))
        _, Zt, _, _ = random_metric_instance(rng, K, K)
        perm = np.concatenate([[0], 1 + rng.permutation(K - 1)])
        perm_bad += z_error(Zt[:, perm], Zt)[0] != 0
    criterion(7, bad == 0 and perm_bad == 0,
              f"{bad}/100 brute-force mismatches, {perm_bad}/100 nonzero under permutation")


def test_criterion_8_ess(criterion):
    n = 10_000
    rng = np.random.default_rng(8)
    iid = effective_sample_size(rng.normal(size=n))
    x = np.empty(n)
    x[0] = rng.normal() / math.sqrt(0.75)
    eps = rng.normal(size=n)
    for i in range(1, n):
        x[i] = 0.5 * x[i - 1] + eps[i]
    ar = effective_sample_size(x)
    ok = 0.9 * n <= iid <= 1.1 * n and abs(ar - n / 3) <= 0.15 * n / 3
    criterion(8, ok, f"iid ESS={iid:.0f} (in [9000, 11000]); AR(1) ESS={ar:.0f} "
                     f"(within 15% of {n / 3:.0f})")


def test_criterion_9_determinism(tmp_path, criterion):
    data_dir = tmp_path / "data"
    subprocess.run([sys.executable, "-m", "phyloclone", "simulate", "-J", "30", "-T", "3",
                    "-K", "3", "--seed", "9", "--out", str(data_dir)], check=True)
    manifest = {"counts": str(data_dir / "counts.tsv"), "depths": str(data_dir / "depths.tsv"),
                "clones": [3], "seeds": [21], "outdir": "out",
                "config": {"iterations": 2000, "n_chains": 3, "swap_interval": 20}}
    maps = []
    for name in ("first", "second"):
        cwd = tmp_path / name
        cwd.mkdir()
        (cwd / "manifest.json").write_text(json.dumps(manifest, indent=1))
        subprocess.run([sys.executable, "-m", "phyloclone", "run", "--manifest",
                        "manifest.json"], cwd=cwd, check=True)
        maps.append((cwd / "out" / "K3" / "rep1" / "map.json").read_bytes())
    criterion(9, maps[0] == maps[1], f"map.json identical across invocations: "
                                     f"{maps[0] == maps[1]} ({len(maps[0])} bytes)")

"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line PASS/FAIL verdict; the lines are printed in the
terminal summary (see conftest.py) and immediately when run with ``-s``.
Run alone with ``pytest tests/test_acceptance.py -v`` or
``python tests/test_acceptance.py``.
"""
import math
import sys
import time
from fractions import Fraction

import numpy as np
import pytest

from rollprune.config import from_dict
from rollprune.experiments import (
    run_calibration,
    run_kappa_sweep,
    run_theory,
    run_train_sim,
    run_tts,
)
from rollprune.rng import derive
from rollprune.survival import SurvivalPolicy, sample_keep, solve_delta
from rollprune.theory import (
    best_prune_index,
    check_error_transfer,
    check_near_optimality,
    hoeffding_tail_check,
    random_instance,
    theorem1_batch,
)

VERDICTS = []

LOW_PASS_WORKLOAD = {"seed": 3, "difficulty": {"kind": "beta", "a": 1.0, "b": 4.0},
                     "score_model": {"kind": "epsilon_uniform", "epsilon": 0.05}}


def verdict(number, name, passed, detail):
    line = f"criterion {number:>2} {name}: {'PASS' if passed else 'FAIL'} ({detail})"
    VERDICTS.append(line)
    print(line)
    assert passed, line


@pytest.fixture(scope="module")
def train_summary(tmp_path_factory):
    cfg = from_dict({"experiment": "train_sim", "seed": 5, "workload": LOW_PASS_WORKLOAD,
                     "policy": {"kappa": 0.5}, "train": {"steps": 220}})
    out = tmp_path_factory.mktemp("train_sim")
    return cfg, run_train_sim(cfg, out)


def test_criterion_01_theorem1_monte_carlo():
    start = time.perf_counter()
    rows = theorem1_batch(17, 0.05, 0.05, 10_000, rng_seed=derive(1, 1))
    elapsed = time.perf_counter() - start
    rate = sum(not r["holds"] for r in rows) / len(rows)
    verdict(1, "theorem1 violation rate", rate <= 0.05 and elapsed < 10.0,
            f"rate {rate:.4f} <= 0.05 over {len(rows)} trials in {elapsed:.1f}s < 10s")


def test_criterion_02_lemma_assertions():
    rng = derive(1, 2)
    transfer_bad = optimality_bad = 0
    for _ in range(1000):
        inst = random_instance(int(rng.integers(2, 17)), 0.05, 0.5, rng)
        transfer_bad += check_error_transfer(inst) > inst.epsilon
        got, bound = check_near_optimality(inst)
        optimality_bad += got > bound
    verdict(2, "error transfer and near-optimality", transfer_bad == optimality_bad == 0,
            f"{transfer_bad} + {optimality_bad} violations on 1000 instances, G in [2, 16]")


def test_criterion_03_hoeffding_tails():
    rows = []
    for i, G in enumerate((9, 17)):
        for q_star in (derive(1, 3, i).random(G), np.full(G, 0.5)):
            rows += hoeffding_tail_check(G, q_star, [0.1, 0.2, 0.34, 0.5], 100_000,
                                         derive(1, 4, i, len(rows)))
    worst = max(r["empirical"] - r["bound"] - 3 * r["sigma"] for r in rows)
    verdict(3, "hoeffding tails", all(r["holds"] for r in rows),
            f"{sum(r['holds'] for r in rows)}/{len(rows)} cells within bound + 3 sigma, "
            f"worst margin {worst:.4f}")


def test_criterion_04_keep_rate_constraint():
    rng = derive(1, 5)
    worst_gap = 0.0
    kept = 0
    expected = variance = 0.0
    per_dist = 100
    for _ in range(100):
        n_bins = int(rng.integers(1, 129))
        q = rng.beta(0.7, 0.7, n_bins)
        w = rng.integers(1, 200, n_bins).astype(float)
        pol = SurvivalPolicy(kappa=float(rng.uniform(0.1, 0.9)), rho=float(rng.uniform(0.2, 0.8)),
                             lam=float(rng.uniform(0, 1)), direction=float(rng.choice([-1, 1])))
        solve_delta(pol, q, w)
        worst_gap = max(worst_gap, abs(pol.expected_keep(q, w) - pol.kappa))
        # decisions draw posteriors from the same buffer distribution
        draws = q[rng.choice(n_bins, per_dist, p=w / w.sum())]
        kept += int(sample_keep(pol.survival_prob(draws), rng).sum())
        expected += per_dist * pol.kappa
        variance += per_dist * pol.kappa * (1 - pol.kappa)
    n = 100 * per_dist
    ratio, target, sigma = kept / n, expected / n, math.sqrt(variance) / n
    ok = worst_gap <= 1e-6 and abs(ratio - target) <= 3 * sigma
    verdict(4, "keep-rate constraint", ok,
            f"max |E[p]-kappa| {worst_gap:.1e}; keep {ratio:.4f} vs {target:.4f} "
            f"+- {3 * sigma:.4f} over {n} decisions")


def test_criterion_05_calibration(tmp_path):
    cfg = from_dict({"experiment": "calibration", "seed": 3})
    s = run_calibration(cfg, tmp_path)
    err, inv = s["calibration_error"]["value"], s["monotone_invariance"]["value"]
    verdict(5, "calibration convergence", err <= 0.05 and inv,
            f"mean abs error {err:.4f} <= 0.05 (B=128, alpha=1, 10000 obs); "
            f"monotone invariance exact: {inv}")


def test_criterion_06_balance_steering(train_summary):
    cfg, s = train_summary
    phases = {r["arm"]: r for r in s["phases"]}
    a, r = phases["arrol"], phases["random"]
    base_rate = phases["none"]["rho_hat_mean"]
    steps = cfg.train.steps - cfg.policy.cold_start_steps
    ok = (a["var_proxy_mean"] >= r["var_proxy_mean"] + 0.01
          and abs(a["rho_hat_mean"] - 0.5) < abs(r["rho_hat_mean"] - 0.5)
          and abs(base_rate - 0.2) < 0.03 and steps >= 200)
    verdict(6, "balance steering", ok,
            f"E[rho(1-rho)] {a['var_proxy_mean']:.4f} vs random {r['var_proxy_mean']:.4f}; "
            f"E[rho] {a['rho_hat_mean']:.4f} vs {r['rho_hat_mean']:.4f}; "
            f"pass rate {base_rate:.3f}, {steps} steps")


def test_criterion_07_efficiency_decomposition(train_summary):
    cfg, s = train_summary
    phases = {r["arm"]: r for r in s["phases"]}
    a, none = phases["arrol"], phases["none"]
    inv_keep = 1 / a["keep_ratio"]
    gen, lp, up = a["speedup_generation"], a["speedup_logprob"], a["speedup_update"]
    split = np.array([none["generation"], none["logprob"], none["update"]])
    split_ok = np.allclose(split / split[0], np.array([106.82, 18.40, 63.05]) / 106.82)
    ln = cfg.workload.length
    mean_len = ln["median"] * math.exp(ln["sigma"] ** 2 / 2)
    ok = (abs(lp / inv_keep - 1) <= 0.10 and abs(up / inv_keep - 1) <= 0.10
          and 1 < gen < 2 and gen < up and split_ok
          and abs(mean_len / cfg.engine.l_detect - 4) < 0.2)
    verdict(7, "efficiency decomposition", ok,
            f"generation {gen:.3f}x < update {up:.3f}x, logprob {lp:.3f}x, "
            f"1/keep {inv_keep:.3f}; mean length {mean_len:.0f} tokens")


def test_criterion_08_kappa_sweep(tmp_path):
    cfg = from_dict({"experiment": "kappa_sweep", "seed": 5, "workload": LOW_PASS_WORKLOAD,
                     "train": {"steps": 120}})
    s = run_kappa_sweep(cfg, tmp_path)
    rows = s["sweep"]
    kappas = [r["kappa"] for r in rows]
    speedups = [r["speedup"] for r in rows]
    ok = (kappas == [1.0, 0.75, 0.5, 0.25] and s["cost_decreasing_in_kappa"]["pass"]
          and speedups[0] == 1.0 and all(b > a for a, b in zip(speedups, speedups[1:])))
    verdict(8, "keep-ratio sweep", ok,
            "speedups " + ", ".join(f"{k}: {v:.2f}x" for k, v in zip(kappas, speedups)))


def test_criterion_09_tts_voting(tmp_path):
    cfg = from_dict({"experiment": "tts", "seed": 11,
                     "workload": {"seed": 2, "difficulty": {"kind": "beta", "a": 2.0, "b": 2.0}}})
    s = run_tts(cfg, tmp_path)
    acc = {r["method"]: r["accuracy"] for r in s["accuracy"]}
    null = {r["method"]: r["accuracy"] for r in s["null_accuracy"]}
    ok = (acc["rank_quality"] >= acc["majority"] and acc["rank_quality"] >= acc["confidence"]
          and s["null_agreement"]["pass"])
    verdict(9, "test-time voting", ok,
            f"rank {acc['rank_quality']:.3f}, majority {acc['majority']:.3f}, "
            f"confidence {acc['confidence']:.3f}; null "
            + ", ".join(f"{k} {v:.3f}" for k, v in null.items()))


def _enumerate_prune_index(values, rho):
    vals = [Fraction(v) for v in values]
    total, n = sum(vals), len(vals)
    devs = [abs((total - v) / (n - 1) - Fraction(rho)) for v in vals]
    return devs.index(min(devs))


def test_criterion_10_oracle_equivalence():
    rng = derive(1, 10)
    mismatches = 0
    for i in range(1000):
        G = int(rng.integers(2, 17))
        if i % 2:
            values, rho = rng.random(G), float(rng.random())
        else:
            # grid values produce exact ties that exercise the lowest-index rule
            values, rho = rng.integers(0, 9, G) / 8, float(rng.integers(0, 5)) / 4
        mismatches += best_prune_index(values, rho) != _enumerate_prune_index(values, rho)
    verdict(10, "best_prune_index oracle", mismatches == 0,
            f"{mismatches} mismatches against exact enumeration on 1000 instances")


SMALL = {
    "calibration": {"calibration": {"observations": 2000}},
    "theory": {"theory": {"trials": 500, "lemma_instances": 50, "hoeffding_trials": 2000}},
    "train_sim": {"train": {"steps": 40}, "policy": {"cold_start_steps": 5},
                  "workload": LOW_PASS_WORKLOAD},
    "kappa_sweep": {"train": {"steps": 30}, "policy": {"cold_start_steps": 5}},
    "tts": {"tts": {"questions": 100, "resamples": 200}},
}


def test_criterion_11_determinism(tmp_path):
    runners = {"calibration": run_calibration, "theory": run_theory,
               "train_sim": run_train_sim, "kappa_sweep": run_kappa_sweep, "tts": run_tts}
    compared, differing = 0, []
    for name, extra in SMALL.items():
        dirs = []
        for rep in range(2):
            cfg = from_dict({"experiment": name, "seed": 21, **extra})
            out = tmp_path / name / str(rep)
            out.mkdir(parents=True)
            runners[name](cfg, out)
            dirs.append(out)
        files = sorted(p.name for p in dirs[0].iterdir()
                       if p.suffix in (".csv", ".jsonl", ".json"))
        for f in files:
            compared += 1
            if (dirs[0] / f).read_bytes() != (dirs[1] / f).read_bytes():
                differing.append(f"{name}/{f}")
    verdict(11, "determinism", compared > 0 and not differing,
            f"{compared} output files byte-identical across reruns"
            + (f"; differing: {differing}" if differing else ""))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))

"""The five experiment families behind ``rollprune run``.

Each runner writes its artifacts into ``out_dir`` and returns a summary dict
of headline metrics; every headline carries its threshold and a pass flag so
``report`` can print it without recomputing anything.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from rollprune.calibration import BinnedCalibrator
from rollprune.config import ExperimentConfig
from rollprune.rng import derive
from rollprune.sim import METRIC_FIELDS, PhaseCosts, run_training
from rollprune.theory import (
    check_error_transfer,
    check_near_optimality,
    hoeffding_tail_check,
    random_instance,
    theorem1_batch,
)
from rollprune.voting import evaluate_voting, read_candidates_jsonl, write_candidates_jsonl
from rollprune.workload import generate_tts_cohort, logit, sigmoid


def write_csv(path: Path, rows, columns) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k)) for k in columns})


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def headline(value, threshold: str, passed: bool) -> dict:
    return {"value": value, "threshold": threshold, "pass": bool(passed)}


# -- calibration ---------------------------------------------------------------

def bin_preserving_transform(raw, num_bins: int):
    """Strictly increasing map of raw scores that leaves every bin assignment
    unchanged: each bin's interval on the sigmoid scale is squeezed into its
    own middle half."""
    s = sigmoid(raw)
    b = np.minimum(num_bins - 1, np.floor(num_bins * s))
    u = num_bins * s - b
    return logit((b + 0.25 + 0.5 * u) / num_bins)


def calibration_error(cal: BinnedCalibrator, truth) -> tuple[float, float]:
    """(occupancy-weighted, unweighted) mean |posterior - truth| over occupied bins."""
    w = cal.occupancy().astype(float)
    occ = w > 0
    err = np.abs(cal.bin_posteriors() - truth)[occ]
    return float(np.dot(err, w[occ]) / w[occ].sum()), float(err.mean())


def run_calibration(cfg: ExperimentConfig, out: Path) -> dict:
    """Score s ~ U(0,1) on the sigmoid scale, label ~ Bernoulli(s): the true
    positive rate in bin b is its midpoint (b + 1/2) / B."""
    p = cfg.calibrator
    rng = derive(cfg.seed, 101)
    n = cfg.calibration.observations
    s = rng.random(n)
    y = (rng.random(n) < s).astype(int)
    raw = logit(s)
    cal = BinnedCalibrator(p.B, p.alpha, p.buffer_capacity, p.shared_buffer).observe_many(raw, y)
    moved = BinnedCalibrator(p.B, p.alpha, p.buffer_capacity, p.shared_buffer)
    moved.observe_many(bin_preserving_transform(raw, p.B), y)

    truth = (np.arange(p.B) + 0.5) / p.B
    weighted, unweighted = calibration_error(cal, truth)
    invariant = bool(np.array_equal(cal.bin_posteriors(), moved.bin_posteriors()))
    post = cal.bin_posteriors()
    rows = [{"bin": b, "pos_count": int(cal.pos_counts[b]), "neg_count": int(cal.neg_counts[b]),
             "posterior": float(post[b]), "truth": float(truth[b])} for b in range(p.B)]
    write_csv(out / "metrics.csv", rows, ["bin", "pos_count", "neg_count", "posterior", "truth"])
    (out / "calibrator.json").write_text(cal.dumps())
    return {
        "calibration_error": headline(weighted, "<= 0.05", weighted <= 0.05),
        "calibration_error_unweighted": unweighted,
        "monotone_invariance": headline(invariant, "exact", invariant),
        "prior_pi": cal.prior_pi,
    }


# -- theory --------------------------------------------------------------------

def run_theory(cfg: ExperimentConfig, out: Path) -> dict:
    th = cfg.theory
    rows = theorem1_batch(th.G, th.epsilon, th.delta, th.trials, th.rho, derive(cfg.seed, 201))
    write_csv(out / "metrics.csv", rows,
              ["trial", "G", "epsilon", "delta", "rho", "j_hat", "lhs", "rhs", "holds"])
    violations = sum(not r["holds"] for r in rows)

    rng = derive(cfg.seed, 202)
    transfer_bad = optimality_bad = 0
    for _ in range(th.lemma_instances):
        inst = random_instance(int(rng.integers(2, th.max_G + 1)), th.epsilon, th.rho, rng)
        transfer_bad += check_error_transfer(inst) > inst.epsilon
        got, bound = check_near_optimality(inst)
        optimality_bad += got > bound

    hrows = []
    for i, G in enumerate(th.hoeffding_G):
        q_star = derive(cfg.seed, 203, i).random(G)
        hrows += hoeffding_tail_check(G, q_star, th.hoeffding_t, th.hoeffding_trials,
                                      derive(cfg.seed, 204, i))
    write_csv(out / "hoeffding.csv", hrows, ["G", "t", "empirical", "bound", "sigma", "holds"])
    tails_ok = all(r["holds"] for r in hrows)

    rate = violations / len(rows)
    return {
        "theorem1_violations": headline(f"{violations}/{len(rows)}", f"rate <= {th.delta}",
                                        rate <= th.delta),
        "lemma_error_transfer_violations": headline(int(transfer_bad), "== 0", transfer_bad == 0),
        "lemma_near_optimality_violations": headline(int(optimality_bad), "== 0", optimality_bad == 0),
        "hoeffding_tails": headline(f"{sum(r['holds'] for r in hrows)}/{len(hrows)}",
                                    "all within bound + 3 sigma", tails_ok),
    }


# -- training simulation -------------------------------------------------------

def simulate_arm(cfg: ExperimentConfig, mode: str, kappa: float | None = None,
                 keep_rollouts: bool = False):
    pp = cfg.policy if kappa is None else dataclasses.replace(cfg.policy, kappa=kappa)
    cp = cfg.calibrator
    cal = BinnedCalibrator(cp.B, cp.alpha, cp.buffer_capacity, cp.shared_buffer)
    return run_training(cfg.engine, cfg.workload, pp.build(), cal, cfg.train.steps,
                        rng_seed=cfg.seed, mode=mode,
                        prompts_per_step=cfg.train.prompts_per_step,
                        learning_rate=cfg.train.learning_rate, keep_rollouts=keep_rollouts)


def window_summary(rows, cold_start: int) -> dict:
    """Phase costs and balance metrics over the steps after cold start."""
    win = [r for r in rows if r["step"] >= cold_start] or rows
    costs = PhaseCosts(sum(r["cost_generation"] for r in win),
                       sum(r["cost_logprob"] for r in win),
                       sum(r["cost_update"] for r in win))
    mean = lambda k: float(np.nanmean([r[k] for r in win]))
    return {
        "steps": len(win),
        "generation": costs.generation, "logprob": costs.logprob, "update": costs.update,
        "total": costs.total,
        "keep_ratio": sum(r["survivors"] for r in win) / sum(r["requests"] for r in win),
        "rho_hat_mean": mean("rho_hat_mean"), "var_proxy_mean": mean("var_proxy_mean"),
        "predictor_accuracy": mean("predictor_accuracy"),
        "mean_group_reward": mean("mean_group_reward"),
    }


def run_train_sim(cfg: ExperimentConfig, out: Path) -> dict:
    results, windows = {}, {}
    for arm in cfg.train.arms:
        results[arm] = simulate_arm(cfg, arm, keep_rollouts=(arm == "arrol"))
        windows[arm] = window_summary(results[arm].rows, cfg.policy.cold_start_steps)
    write_csv(out / "metrics.csv", [r for arm in cfg.train.arms for r in results[arm].rows],
              METRIC_FIELDS)
    if "arrol" in results:
        with open(out / "rollouts.jsonl", "w", encoding="utf-8") as fh:
            for rec in results["arrol"].rollouts:
                fh.write(json.dumps(rec) + "\n")

    base = windows.get("none")
    phase_rows = []
    for arm, w in windows.items():
        row = {"arm": arm, **{k: w[k] for k in ("generation", "logprob", "update", "total",
                                               "keep_ratio", "rho_hat_mean", "var_proxy_mean",
                                               "predictor_accuracy")}}
        for phase in ("generation", "logprob", "update", "total"):
            row[f"speedup_{phase}"] = base[phase] / w[phase] if base else float("nan")
        phase_rows.append(row)
    cols = ["arm", "generation", "logprob", "update", "total", "speedup_generation",
            "speedup_logprob", "speedup_update", "speedup_total", "keep_ratio",
            "rho_hat_mean", "var_proxy_mean", "predictor_accuracy"]
    write_csv(out / "phases.csv", phase_rows, cols)

    summary: dict = {"phases": phase_rows}
    if base and "arrol" in windows:
        a = windows["arrol"]
        inv_keep = 1.0 / a["keep_ratio"]
        sp = {ph: base[ph] / a[ph] for ph in ("generation", "logprob", "update")}
        summary["speedup_logprob"] = headline(sp["logprob"], f"within 10% of 1/keep={inv_keep:.3f}",
                                              abs(sp["logprob"] / inv_keep - 1) <= 0.10)
        summary["speedup_update"] = headline(sp["update"], f"within 10% of 1/keep={inv_keep:.3f}",
                                             abs(sp["update"] / inv_keep - 1) <= 0.10)
        summary["speedup_generation"] = headline(
            sp["generation"], "in (1, 2) and < update speedup",
            1.0 < sp["generation"] < 2.0 and sp["generation"] < sp["update"])
        summary["predictor_accuracy"] = headline(a["predictor_accuracy"], ">= 0.75",
                                                 a["predictor_accuracy"] >= 0.75)
    if "random" in windows and "arrol" in windows:
        a, r = windows["arrol"], windows["random"]
        rho = cfg.policy.rho
        summary["var_proxy"] = headline(
            {"arrol": a["var_proxy_mean"], "random": r["var_proxy_mean"]}, "arrol >= random + 0.01",
            a["var_proxy_mean"] >= r["var_proxy_mean"] + 0.01)
        summary["rho_hat"] = headline(
            {"arrol": a["rho_hat_mean"], "random": r["rho_hat_mean"]},
            f"|arrol - {rho}| < |random - {rho}|",
            abs(a["rho_hat_mean"] - rho) < abs(r["rho_hat_mean"] - rho))
    return summary


def run_kappa_sweep(cfg: ExperimentConfig, out: Path) -> dict:
    rows = []
    for kappa in cfg.sweep.kappas:
        mode = "none" if kappa >= 1.0 else "arrol"
        res = simulate_arm(cfg, mode, kappa=kappa)
        w = window_summary(res.rows, cfg.policy.cold_start_steps)
        rows.append({"kappa": kappa, "mode": mode, **w})
    base = next((r["total"] for r in rows if r["kappa"] >= 1.0), None)
    for r in rows:
        r["speedup"] = base / r["total"] if base else float("nan")
    cols = ["kappa", "mode", "generation", "logprob", "update", "total", "speedup",
            "keep_ratio", "rho_hat_mean", "var_proxy_mean"]
    write_csv(out / "metrics.csv", rows, cols)
    by_kappa = sorted(rows, key=lambda r: -r["kappa"])
    totals = [r["total"] for r in by_kappa]
    decreasing = all(b < a for a, b in zip(totals, totals[1:]))
    return {
        "sweep": [{k: r[k] for k in ("kappa", "total", "speedup", "keep_ratio")} for r in by_kappa],
        "cost_decreasing_in_kappa": headline([round(r["speedup"], 3) for r in by_kappa],
                                             "total cost strictly decreases as kappa decreases",
                                             decreasing),
    }


# -- voting --------------------------------------------------------------------

def _evaluate_all(questions, methods, resamples, seed):
    return [evaluate_voting(questions, m, resamples, derive(seed, 301, i))
            for i, m in enumerate(methods)]


def run_tts(cfg: ExperimentConfig, out: Path) -> dict:
    tp = cfg.tts
    methods = ["majority", "confidence", "rank_quality"]
    if tp.candidates:
        questions = read_candidates_jsonl(tp.candidates)
        if any(c.confidence is None for q in questions for c in q.candidates):
            methods.remove("confidence")
        null_rows = None
    else:
        questions = generate_tts_cohort(cfg.workload, tp.k, tp.quality_auc, derive(cfg.seed, 302),
                                        confidence_auc=tp.confidence_auc,
                                        num_distractors=tp.num_distractors,
                                        num_questions=tp.questions)
        null = generate_tts_cohort(cfg.workload, tp.k, 0.5, derive(cfg.seed, 303),
                                   confidence_auc=0.5, num_distractors=tp.num_distractors,
                                   num_questions=tp.questions)
        write_candidates_jsonl(out / "candidates.jsonl", questions)
        null_rows = _evaluate_all(null, methods, tp.resamples, cfg.seed + 1)
        write_csv(out / "null_metrics.csv", null_rows, ["method", "accuracy", "ci_low", "ci_high"])
    rows = _evaluate_all(questions, methods, tp.resamples, cfg.seed)
    write_csv(out / "metrics.csv", rows, ["method", "accuracy", "ci_low", "ci_high"])

    acc = {r["method"]: r["accuracy"] for r in rows}
    summary = {"accuracy": rows}
    summary["rank_vs_majority"] = headline(acc, "rank_quality >= majority",
                                           acc["rank_quality"] >= acc["majority"])
    if "confidence" in acc:
        summary["rank_vs_confidence"] = headline(acc, "rank_quality >= confidence",
                                                 acc["rank_quality"] >= acc["confidence"])
    if null_rows:
        summary["null_accuracy"] = null_rows
        agree = methods_agree(null_rows)
        summary["null_agreement"] = headline({r["method"]: r["accuracy"] for r in null_rows},
                                             "every accuracy inside every CI", agree)
    return summary


def methods_agree(rows) -> bool:
    return all(r["ci_low"] <= o["accuracy"] <= r["ci_high"] for r in rows for o in rows)


RUNNERS = {
    "calibration": run_calibration,
    "theory": run_theory,
    "train_sim": run_train_sim,
    "kappa_sweep": run_kappa_sweep,
    "tts": run_tts,
}


def jsonable(obj):
    if isinstance(obj, dict):
        return {k: jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return None if math.isnan(f) else f
    return obj

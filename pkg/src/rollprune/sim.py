"""Discrete-event model of a generation backend plus the training loop around it.

Backend: requests wait in a FIFO pool; at most ``capacity`` sequences are in
flight and each advances one token per engine step.  The first time a
sequence reaches ``l_detect`` tokens its score is turned into a keep/prune
decision; pruned sequences leave at once and the pool refills the slot.
Because nothing changes between events (a sequence finishing or hitting the
detection length), the loop jumps from event to event instead of stepping
token by token.

Frontend: survivors are re-batched; log-prob and update cost scale with the
surviving token count.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from rollprune.calibration import BinnedCalibrator
from rollprune.errors import DomainError
from rollprune.model import advantages_from_rewards, balance_from_labels
from rollprune.rng import as_generator, derive
from rollprune.survival import SurvivalPolicy, apply_floor, sample_keep, solve_delta
from rollprune.workload import WorkloadConfig, generate_group

# per-token costs whose no-prune split is 106.82 : 18.40 : 63.05
GEN_COST_PER_TOKEN, LOGPROB_COST_PER_TOKEN, UPDATE_COST_PER_TOKEN = 106.82e-6, 18.40e-6, 63.05e-6

PRUNE_MODES = ("arrol", "random", "none")


@dataclass
class EngineConfig:
    capacity: int = 256
    l_detect: int = 512
    cost_gen_per_token_step: float = GEN_COST_PER_TOKEN
    cost_logprob_per_token: float = LOGPROB_COST_PER_TOKEN
    cost_update_per_token: float = UPDATE_COST_PER_TOKEN

    def __post_init__(self):
        if self.capacity < 1:
            raise DomainError("capacity must be >= 1")
        if self.l_detect < 1:
            raise DomainError("l_detect must be >= 1")
        if min(self.cost_gen_per_token_step, self.cost_logprob_per_token,
               self.cost_update_per_token) < 0:
            raise DomainError("costs must be nonnegative")


@dataclass
class PhaseCosts:
    generation: float = 0.0
    logprob: float = 0.0
    update: float = 0.0

    @property
    def total(self) -> float:
        return self.generation + self.logprob + self.update

    def __add__(self, other: "PhaseCosts") -> "PhaseCosts":
        return PhaseCosts(self.generation + other.generation,
                          self.logprob + other.logprob,
                          self.update + other.update)


@dataclass
class EngineState:
    clock: int = 0
    tokens_generated: int = 0
    prune_masks: dict = field(default_factory=dict)


@dataclass
class StepResult:
    completed: list
    prune_masks: dict
    costs: PhaseCosts
    tokens_generated: int
    engine_steps: int
    posteriors: dict
    max_active: int = 0
    work_conserving: bool = True


def run_step(state: EngineState, requests, policy: SurvivalPolicy | None,
             calibrator: BinnedCalibrator | None, rng_seed=None,
             config: EngineConfig | None = None, mode: str = "arrol",
             pruning_enabled: bool = True) -> StepResult:
    """Generate one batch of rollouts, pruning at the detection length.

    ``requests`` are :class:`Rollout` objects; their ``generated_length``,
    ``pruned`` and ``survival_prob`` fields are filled in place.  ``mode``:
    ``arrol`` keeps with the policy's survival probability of the calibrated
    posterior, ``random`` keeps with probability kappa, ``none`` keeps all.
    """
    cfg = config or EngineConfig()
    if mode not in PRUNE_MODES:
        raise DomainError(f"mode must be one of {PRUNE_MODES}")
    n = len(requests)
    if n == 0:
        return StepResult([], {}, PhaseCosts(), 0, 0, {})
    rng = as_generator(rng_seed)
    prune = pruning_enabled and mode != "none" and policy is not None and not policy.disabled

    total = np.array([r.total_length for r in requests], dtype=np.int64)
    gen = np.zeros(n, dtype=np.int64)
    pruned = np.zeros(n, dtype=bool)
    # sequences shorter than l_detect finish before any decision
    decided = total < cfg.l_detect
    prompt = np.array([r.prompt_id for r in requests])
    alive = defaultdict(int)
    for pid in prompt:
        alive[int(pid)] += 1

    q = None
    if calibrator is not None and mode == "arrol":
        q = calibrator.posteriors([r.raw_score for r in requests])

    active = np.empty(0, dtype=np.int64)
    next_req = 0
    clock = tokens = max_active = 0
    conserving = True
    gen_cost = 0.0
    while next_req < n or active.size:
        room = cfg.capacity - active.size
        if room > 0 and next_req < n:
            take = min(room, n - next_req)
            active = np.concatenate((active, np.arange(next_req, next_req + take)))
            next_req += take
        remaining = n - int((pruned | (gen >= total)).sum())
        conserving &= active.size == min(cfg.capacity, remaining)
        max_active = max(max_active, active.size)

        g = gen[active]
        to_finish = total[active] - g
        to_detect = np.where(decided[active], np.iinfo(np.int64).max, cfg.l_detect - g)
        jump = int(min(to_finish.min(), to_detect.min()))
        gen[active] += jump
        clock += jump
        tokens += jump * active.size
        gen_cost += jump * active.size * cfg.cost_gen_per_token_step

        hit = active[~decided[active] & (gen[active] == cfg.l_detect)]
        if hit.size:
            decided[hit] = True
            if prune:
                _decide_hits(hit, prompt, alive, pruned, requests, q, policy, mode, rng)
        done = pruned[active] | (gen[active] >= total[active])
        active = active[~done]

    masks = {}
    completed = []
    for i, r in enumerate(requests):
        r.generated_length = int(gen[i])
        r.pruned = bool(pruned[i])
        masks[r.id] = r.pruned
        if not r.pruned:
            completed.append(r)
    state.clock += clock
    state.tokens_generated += tokens
    state.prune_masks.update(masks)
    posts = {} if q is None else {r.id: float(q[i]) for i, r in enumerate(requests)}
    return StepResult(completed, masks, PhaseCosts(generation=gen_cost), tokens, clock,
                      posts, max_active, bool(conserving))


def _decide_hits(hit, prompt, alive, pruned, requests, q, policy, mode, rng):
    by_group = defaultdict(list)
    for i in hit:
        by_group[int(prompt[i])].append(int(i))
    for pid in sorted(by_group):
        idx = np.array(by_group[pid])
        if mode == "arrol":
            probs = np.atleast_1d(policy.survival_prob(q[idx]))
        else:
            probs = np.full(idx.size, policy.kappa)
        # group members outside this batch are still alive and count toward the floor
        others = alive[pid] - idx.size
        keep = apply_floor(sample_keep(probs, rng), probs,
                           max(0, policy.min_survivors - others))
        for i, p, k in zip(idx, probs, keep):
            requests[i].survival_prob = float(p)
            if not k:
                pruned[i] = True
                alive[pid] -= 1


def frontend_step(survivors, config: EngineConfig | None = None) -> PhaseCosts:
    cfg = config or EngineConfig()
    toks = sum(r.generated_length for r in survivors)
    return PhaseCosts(0.0, cfg.cost_logprob_per_token * toks, cfg.cost_update_per_token * toks)


@dataclass
class TrainingResult:
    rows: list
    rollouts: list
    costs: PhaseCosts

    def active_rows(self):
        """Rows from steps where pruning was live (after cold start)."""
        return [r for r in self.rows if r["pruning_active"]]


METRIC_FIELDS = (
    "step", "mode", "kappa", "pruning_active", "direction", "delta",
    "requests", "survivors", "keep_ratio", "tokens_generated", "engine_steps",
    "cost_generation", "cost_logprob", "cost_update", "wall_cost", "cum_wall_cost",
    "mean_group_reward", "rho_hat_mean", "var_proxy_mean", "nonzero_adv_frac",
    "predictor_accuracy", "calibrator_prior",
)


def run_training(config: EngineConfig, workload: WorkloadConfig, policy: SurvivalPolicy,
                 calibrator: BinnedCalibrator, steps: int, rng_seed: int = 0,
                 mode: str = "arrol", prompts_per_step: int | None = None,
                 learning_rate: float = 0.0, keep_rollouts: bool = False) -> TrainingResult:
    """Simulated training loop; one row of metrics per step.

    Each step generates ``prompts_per_step`` groups, runs the backend, bills
    the frontend for survivors, and feeds the completed rollouts back into
    the calibrator.  ``learning_rate`` > 0 turns on a toy learning curve: the
    prompts' pass rate drifts up in logit space by ``learning_rate`` times the
    step's mean within-group variance proxy, so stronger signal means faster
    reward growth per unit of cost.
    """
    if steps < 1:
        raise DomainError("steps must be >= 1")
    if mode not in PRUNE_MODES:
        raise DomainError(f"mode must be one of {PRUNE_MODES}")
    pps = prompts_per_step or workload.num_prompts
    state = EngineState()
    total_costs = PhaseCosts()
    rows, log = [], []
    skill = 0.0
    for t in range(steps):
        groups = [generate_group(workload, t * pps + k, difficulty_shift=skill) for k in range(pps)]
        requests = [r for g in groups for r in g.rollouts]
        live = mode != "none" and t >= policy.cold_start_steps and not policy.disabled

        posts = calibrator.posteriors([r.raw_score for r in requests])
        if live and mode == "arrol":
            policy.orient(calibrator.prior_pi)
            qd, w = calibrator.buffer_distribution()
            if w.size == 0:
                qd, w = np.array([calibrator.prior_pi]), np.array([1.0])
            solve_delta(policy, qd, w)

        res = run_step(state, requests, policy, calibrator, derive(rng_seed, t, 1),
                       config, mode=mode, pruning_enabled=live)
        costs = res.costs + frontend_step(res.completed, config)
        total_costs = total_costs + costs

        rho, var, nonzero, rewards = [], [], [], []
        for g in groups:
            y = g.labels()
            if y.size == 0:
                continue
            b = balance_from_labels(y)
            rho.append(b.rho_hat)
            var.append(b.variance_proxy)
            rewards.extend(y)
            if y.size >= 2:
                nonzero.append(bool(np.any(advantages_from_rewards(y) != 0)))

        labels = np.array([r.label for r in requests])
        done = np.array([not r.pruned for r in requests])
        acc = float(np.mean((posts[done] >= 0.5) == labels[done])) if done.any() else float("nan")
        prior = calibrator.prior_pi
        for r in res.completed:
            calibrator.observe(r.raw_score, r.label)

        skill += learning_rate * float(np.mean(var)) if var else 0.0
        rows.append({
            "step": t, "mode": mode, "kappa": policy.kappa, "pruning_active": live,
            "direction": policy.direction if live and mode == "arrol" else 0.0,
            "delta": policy.delta if live and mode == "arrol" else 0.0,
            "requests": len(requests), "survivors": len(res.completed),
            "keep_ratio": len(res.completed) / len(requests),
            "tokens_generated": res.tokens_generated, "engine_steps": res.engine_steps,
            "cost_generation": costs.generation, "cost_logprob": costs.logprob,
            "cost_update": costs.update, "wall_cost": costs.total,
            "cum_wall_cost": total_costs.total,
            "mean_group_reward": float(np.mean(rewards)) if rewards else float("nan"),
            "rho_hat_mean": float(np.mean(rho)), "var_proxy_mean": float(np.mean(var)),
            "nonzero_adv_frac": float(np.mean(nonzero)) if nonzero else 0.0,
            "predictor_accuracy": acc, "calibrator_prior": prior,
        })
        if keep_rollouts:
            for r in requests:
                rec = r.to_record()
                rec["step"] = t
                log.append(rec)
    return TrainingResult(rows, log, total_costs)

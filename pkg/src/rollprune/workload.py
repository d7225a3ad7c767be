"""Synthetic prompts, rollouts and candidate sets with controllable signal.

A prompt has a difficulty ``d`` (its expected pass rate).  In ``shared`` mode
every rollout of the prompt succeeds with probability ``d``.  In
``per_rollout`` mode each rollout draws its own success probability from
``Beta(c*d, c*(1-d))``, which is what makes early scores informative about
*which* rollouts of a group will succeed; ``c`` is the concentration.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit
from scipy.stats import mannwhitneyu

from rollprune.errors import ConfigError
from rollprune.model import Rollout, RolloutGroup, read_jsonl, write_jsonl
from rollprune.rng import as_generator, derive
from rollprune.voting import Candidate, Question

LOGIT_CLIP = 1e-12
AUC_TOLERANCE = 0.02


def logit(p):
    p = np.clip(p, LOGIT_CLIP, 1.0 - LOGIT_CLIP)
    return np.log(p) - np.log1p(-p)


def sigmoid(x):
    return expit(np.asarray(x, dtype=float))


@dataclass
class WorkloadConfig:
    num_prompts: int = 16
    group_size: int = 16
    difficulty: dict = field(default_factory=lambda: {"kind": "beta", "a": 1.0, "b": 1.0})
    q_mode: str = "per_rollout"
    rollout_concentration: float = 1.0
    length: dict = field(default_factory=lambda: {
        "kind": "lognormal", "median": 1800.0, "sigma": 0.5, "min": 512, "max": 8192})
    score_model: dict = field(default_factory=lambda: {"kind": "epsilon_uniform", "epsilon": 0.05})
    seed: int = 0

    def __post_init__(self):
        problems = validate_workload(self)
        if problems:
            raise ConfigError(problems)

    def to_dict(self) -> dict:
        return asdict(self)


def validate_workload(cfg: WorkloadConfig) -> dict:
    p: dict = {}
    if cfg.num_prompts < 1:
        p["num_prompts"] = "must be >= 1"
    if cfg.group_size < 2:
        p["group_size"] = "must be >= 2"
    if cfg.q_mode not in ("shared", "per_rollout"):
        p["q_mode"] = "must be 'shared' or 'per_rollout'"
    if cfg.rollout_concentration <= 0:
        p["rollout_concentration"] = "must be > 0"

    d = cfg.difficulty
    kind = d.get("kind")
    if kind == "beta":
        if d.get("a", 0) <= 0 or d.get("b", 0) <= 0:
            p["difficulty"] = "beta needs a > 0 and b > 0"
    elif kind == "point":
        if not 0.0 <= d.get("value", -1) <= 1.0:
            p["difficulty.value"] = "point mass must be in [0, 1]"
    elif kind != "uniform":
        p["difficulty.kind"] = f"unknown difficulty kind {kind!r}"

    ln = cfg.length
    kind = ln.get("kind")
    if kind == "fixed":
        if ln.get("value", 0) < 1:
            p["length.value"] = "must be >= 1"
    elif kind == "lognormal":
        if ln.get("median", 0) <= 0 or ln.get("sigma", -1) < 0:
            p["length"] = "lognormal needs median > 0 and sigma >= 0"
        if not 1 <= ln.get("min", 1) <= ln.get("max", 1):
            p["length.min"] = "need 1 <= min <= max"
    else:
        p["length.kind"] = f"unknown length kind {kind!r}"

    sm = cfg.score_model
    kind = sm.get("kind")
    if kind == "epsilon_uniform":
        if sm.get("epsilon", -1) < 0:
            p["score_model.epsilon"] = "must be >= 0"
    elif kind == "logit_gauss":
        if sm.get("sigma", -1) < 0:
            p["score_model.sigma"] = "must be >= 0"
    else:
        p["score_model.kind"] = f"unknown score model {kind!r}"
    return p


def draw_difficulty(cfg: WorkloadConfig, rng, size=None):
    d = cfg.difficulty
    if d["kind"] == "beta":
        return rng.beta(d["a"], d["b"], size)
    if d["kind"] == "point":
        return np.full(size, float(d["value"])) if size is not None else float(d["value"])
    return rng.random(size)


def draw_lengths(cfg: WorkloadConfig, rng, size) -> np.ndarray:
    ln = cfg.length
    if ln["kind"] == "fixed":
        return np.full(size, int(ln["value"]), dtype=np.int64)
    raw = ln["median"] * np.exp(ln["sigma"] * rng.standard_normal(size))
    return np.clip(np.rint(raw), ln["min"], ln["max"]).astype(np.int64)


def draw_scores(cfg: WorkloadConfig, q_star: np.ndarray, rng) -> np.ndarray:
    sm = cfg.score_model
    if sm["kind"] == "epsilon_uniform":
        eps = sm["epsilon"]
        q_est = np.clip(q_star + rng.uniform(-eps, eps, q_star.shape), 0.0, 1.0)
        return logit(q_est)
    return logit(q_star) + sm["sigma"] * rng.standard_normal(q_star.shape)


def group_q_star(cfg: WorkloadConfig, difficulty: float, rng) -> np.ndarray:
    G = cfg.group_size
    if cfg.q_mode == "shared" or difficulty in (0.0, 1.0):
        return np.full(G, float(difficulty))
    c = cfg.rollout_concentration
    return rng.beta(c * difficulty, c * (1.0 - difficulty), G)


def generate_group(cfg: WorkloadConfig, prompt_id: int, rng_seed=None,
                   difficulty_shift: float = 0.0) -> RolloutGroup:
    """All G rollouts of one prompt.

    Without ``rng_seed`` the stream is derived from (cfg.seed, prompt_id), so
    a prompt's group does not depend on which other prompts were generated.
    ``difficulty_shift`` moves the prompt's pass rate in logit space.
    """
    rng = derive(cfg.seed, prompt_id) if rng_seed is None else as_generator(rng_seed)
    d = float(draw_difficulty(cfg, rng))
    if difficulty_shift and 0.0 < d < 1.0:
        d = float(sigmoid(logit(d) + difficulty_shift))
    q = group_q_star(cfg, d, rng)
    labels = (rng.random(cfg.group_size) < q).astype(int)
    lengths = draw_lengths(cfg, rng, cfg.group_size)
    scores = draw_scores(cfg, q, rng)
    G = cfg.group_size
    rollouts = [
        Rollout(id=prompt_id * G + i, prompt_id=prompt_id, q_star=float(q[i]),
                label=int(labels[i]), raw_score=float(scores[i]),
                total_length=int(lengths[i]))
        for i in range(G)
    ]
    return RolloutGroup(prompt_id=prompt_id, rollouts=rollouts)


def generate_groups(cfg: WorkloadConfig, prompt_ids=None, difficulty_shift: float = 0.0):
    ids = range(cfg.num_prompts) if prompt_ids is None else prompt_ids
    return [generate_group(cfg, pid, difficulty_shift=difficulty_shift) for pid in ids]


def export_workload(path, groups) -> None:
    write_jsonl(path, (r for g in groups for r in g.rollouts))


def import_workload(path) -> list[RolloutGroup]:
    by_prompt: dict = {}
    for r in read_jsonl(path):
        by_prompt.setdefault(r.prompt_id, []).append(r)
    return [RolloutGroup(pid, rs) for pid, rs in by_prompt.items()]


# -- test-time voting cohorts ------------------------------------------------

def uniform_shift_for_auc(auc: float) -> float:
    """Shift c with AUC(U[c, 1+c] vs U[0, 1]) = auc, i.e. 1 - (1-c)^2 / 2."""
    if not 0.5 <= auc <= 1.0:
        raise ConfigError({"auc_target": f"unattainable AUC {auc}; must be in [0.5, 1]"})
    return 1.0 - math.sqrt(2.0 * (1.0 - auc))


def class_scores(correct: np.ndarray, auc: float, rng) -> np.ndarray:
    c = uniform_shift_for_auc(auc)
    return rng.random(correct.shape) + c * correct


def empirical_auc(scores, correct) -> float:
    scores = np.asarray(scores, dtype=float)
    correct = np.asarray(correct, dtype=bool)
    pos, neg = scores[correct], scores[~correct]
    if pos.size == 0 or neg.size == 0:
        return float("nan")
    u = mannwhitneyu(pos, neg, alternative="two-sided").statistic
    return float(u / (pos.size * neg.size))


def generate_tts_cohort(cfg: WorkloadConfig, k: int, auc_target: float, rng_seed=None,
                        confidence_auc: float | None = None, num_distractors: int = 3,
                        num_questions: int | None = None, verify_min: int = 2000) -> list[Question]:
    """Questions with ``k`` candidates each.

    A question's pass rate comes from the difficulty distribution; wrong
    candidates split over ``num_distractors`` wrong answers with
    Dirichlet(1) shares, so wrong answers can out-vote a weak right one.
    Scores separate correct from wrong at ``auc_target``; the optional
    ``confidence`` signal is drawn independently at ``confidence_auc``.
    The realised AUC is checked once both classes have ``verify_min``
    members.
    """
    if k < 1:
        raise ConfigError({"k": "must be >= 1"})
    uniform_shift_for_auc(auc_target)
    if confidence_auc is not None:
        uniform_shift_for_auc(confidence_auc)
    rng = derive(cfg.seed, 7_001) if rng_seed is None else as_generator(rng_seed)
    n_q = cfg.num_prompts if num_questions is None else num_questions

    questions = []
    all_scores, all_correct = [], []
    for qid in range(n_q):
        p = float(draw_difficulty(cfg, rng))
        correct = (rng.random(k) < p).astype(int)
        keys = rng.permutation(num_distractors + 1)
        right, wrong = int(keys[0]), keys[1:]
        shares = rng.dirichlet(np.ones(num_distractors))
        wrong_pick = wrong[rng.choice(num_distractors, size=k, p=shares)]
        answers = np.where(correct == 1, right, wrong_pick)
        scores = class_scores(correct, auc_target, rng)
        conf = class_scores(correct, confidence_auc, rng) if confidence_auc is not None else None
        cands = [
            Candidate(int(answers[i]), float(scores[i]), int(correct[i]),
                      None if conf is None else float(conf[i]))
            for i in range(k)
        ]
        questions.append(Question(qid, cands))
        all_scores.append(scores)
        all_correct.append(correct)

    s, y = np.concatenate(all_scores), np.concatenate(all_correct)
    if min(y.sum(), y.size - y.sum()) >= verify_min:
        got = empirical_auc(s, y)
        if abs(got - auc_target) > AUC_TOLERANCE:
            raise ConfigError({"auc_target": f"realised AUC {got:.4f} misses target {auc_target}"})
    return questions

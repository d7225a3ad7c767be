"""Answer aggregation over k sampled candidates per question."""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from rollprune.errors import DomainError
from rollprune.rng import as_generator

METHODS = ("majority", "confidence", "rank_quality")


@dataclass
class Candidate:
    answer_key: object
    score: float
    correct: int | None = None
    confidence: float | None = None


@dataclass
class VoteResult:
    winner: object
    weights: dict = field(default_factory=dict)
    per_candidate_weight: list = field(default_factory=list)


@dataclass
class Question:
    question_id: object
    candidates: list


def rank_weights(scores) -> list[float]:
    """Ascending ranks rescaled to [0, 1]; tied scores share their mean rank."""
    s = np.asarray(scores, dtype=float)
    if s.size == 0:
        raise DomainError("need at least one score")
    if s.size == 1:
        return [1.0]
    ranks = rankdata(s, method="average") - 1.0
    return (ranks / (s.size - 1)).tolist()


def minmax_weights(values) -> list[float]:
    v = np.asarray(values, dtype=float)
    lo, hi = v.min(), v.max()
    if hi == lo:
        return [1.0] * v.size
    return ((v - lo) / (hi - lo)).tolist()


def weighted_vote(candidates, weights) -> VoteResult:
    """Sum weights per answer and return the heaviest answer.

    Ties on total weight go to the answer holding the single heaviest
    candidate, then to the smallest answer key.
    """
    if not candidates:
        raise DomainError("no candidates to vote over")
    if len(weights) != len(candidates):
        raise DomainError("one weight per candidate required")
    totals: dict = defaultdict(float)
    best_single: dict = defaultdict(float)
    for c, w in zip(candidates, weights):
        if w < 0:
            raise DomainError("weights must be nonnegative")
        totals[c.answer_key] += w
        best_single[c.answer_key] = max(best_single[c.answer_key], w)
    top = max(totals.values())
    tied = [k for k, v in totals.items() if v == top]
    if len(tied) > 1:
        top_single = max(best_single[k] for k in tied)
        tied = [k for k in tied if best_single[k] == top_single]
    winner = min(tied) if len(tied) > 1 else tied[0]
    return VoteResult(winner=winner, weights=dict(totals), per_candidate_weight=list(weights))


def method_weights(candidates, method: str) -> list[float]:
    if method == "majority":
        return [1.0] * len(candidates)
    if method == "rank_quality":
        return rank_weights([c.score for c in candidates])
    if method == "confidence":
        if any(c.confidence is None for c in candidates):
            raise DomainError("confidence voting needs a confidence on every candidate")
        return minmax_weights([c.confidence for c in candidates])
    raise DomainError(f"unknown method {method!r}")


def vote(candidates, method: str) -> VoteResult:
    return weighted_vote(candidates, method_weights(candidates, method))


def question_outcomes(questions, method: str) -> np.ndarray:
    out = np.empty(len(questions))
    for i, q in enumerate(questions):
        if any(c.correct is None for c in q.candidates):
            raise DomainError(f"question {q.question_id} has candidates without ground truth")
        res = vote(q.candidates, method)
        winner_correct = [c.correct for c in q.candidates if c.answer_key == res.winner]
        out[i] = float(winner_correct[0])
    return out


def bootstrap_ci(outcomes, resamples: int = 1000, level: float = 0.95, rng_seed=0):
    x = np.asarray(outcomes, dtype=float)
    rng = as_generator(rng_seed)
    idx = rng.integers(0, x.size, size=(resamples, x.size))
    means = x[idx].mean(axis=1)
    a = (1.0 - level) / 2.0
    return float(np.quantile(means, a)), float(np.quantile(means, 1.0 - a))


def evaluate_voting(questions, method: str, resamples: int = 1000, rng_seed=0) -> dict:
    """Accuracy of the voted answer with a percentile bootstrap CI.

    Answers sharing a key are assumed to agree on correctness.
    """
    if not questions:
        raise DomainError("no questions")
    outcomes = question_outcomes(questions, method)
    lo, hi = bootstrap_ci(outcomes, resamples, rng_seed=rng_seed)
    return {"method": method, "accuracy": float(outcomes.mean()), "ci_low": lo, "ci_high": hi}


def read_candidates_jsonl(path) -> list[Question]:
    groups: dict = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            cand = Candidate(rec["answer_key"], float(rec["score"]),
                             None if rec.get("correct") is None else int(rec["correct"]),
                             rec.get("confidence"))
            groups.setdefault(rec["question_id"], []).append(cand)
    return [Question(qid, cands) for qid, cands in groups.items()]


def write_candidates_jsonl(path, questions) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in questions:
            for c in q.candidates:
                rec = {"question_id": q.question_id, "answer_key": c.answer_key,
                       "score": c.score, "correct": c.correct}
                if c.confidence is not None:
                    rec["confidence"] = c.confidence
                fh.write(json.dumps(rec) + "\n")

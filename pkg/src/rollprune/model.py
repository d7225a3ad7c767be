"""Rollouts, prompt groups and the per-group statistics built on them."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Iterator

import numpy as np

from rollprune.errors import DegenerateGroupError, DomainError
from rollprune.rng import as_generator

ROLLOUT_FIELDS = (
    "id",
    "prompt_id",
    "q_star",
    "label",
    "raw_score",
    "total_length",
    "generated_length",
    "pruned",
    "survival_prob",
)


@dataclass
class Rollout:
    id: int
    prompt_id: int
    q_star: float
    label: int
    raw_score: float
    total_length: int
    generated_length: int = 0
    pruned: bool = False
    survival_prob: float | None = None

    def __post_init__(self):
        if self.label not in (0, 1):
            raise DomainError(f"label must be 0 or 1, got {self.label!r}")
        if not 0.0 <= self.q_star <= 1.0:
            raise DomainError(f"q_star must be in [0, 1], got {self.q_star!r}")
        if self.total_length < 1:
            raise DomainError("total_length must be positive")
        if not 0 <= self.generated_length <= self.total_length:
            raise DomainError("generated_length must lie in [0, total_length]")

    def to_record(self) -> dict:
        return asdict(self)

    @classmethod
    def from_record(cls, rec: dict) -> "Rollout":
        missing = [k for k in ROLLOUT_FIELDS if k not in rec]
        if missing:
            raise DomainError(f"rollout record missing fields {missing}")
        return cls(
            id=int(rec["id"]),
            prompt_id=int(rec["prompt_id"]),
            q_star=float(rec["q_star"]),
            label=int(rec["label"]),
            raw_score=float(rec["raw_score"]),
            total_length=int(rec["total_length"]),
            generated_length=int(rec["generated_length"]),
            pruned=bool(rec["pruned"]),
            survival_prob=None if rec["survival_prob"] is None else float(rec["survival_prob"]),
        )


@dataclass
class RolloutGroup:
    prompt_id: int
    rollouts: list[Rollout] = field(default_factory=list)

    def __post_init__(self):
        if len(self.rollouts) < 2:
            raise DomainError("a group needs at least 2 rollouts")
        bad = [r.id for r in self.rollouts if r.prompt_id != self.prompt_id]
        if bad:
            raise DomainError(f"rollouts {bad} do not belong to prompt {self.prompt_id}")

    @property
    def group_size(self) -> int:
        return len(self.rollouts)

    def survivors(self) -> list[Rollout]:
        return [r for r in self.rollouts if not r.pruned]

    def labels(self, survivors_only: bool = True) -> np.ndarray:
        rs = self.survivors() if survivors_only else self.rollouts
        return np.array([r.label for r in rs], dtype=float)


@dataclass(frozen=True)
class BalanceStats:
    rho_hat: float
    variance_proxy: float


def draw_label(q_star: float, rng_seed=None) -> int:
    """One Bernoulli(q_star) reward. ``rng_seed`` may be an int or a Generator."""
    if not (0.0 <= q_star <= 1.0) or math.isnan(q_star):
        raise DomainError(f"q_star must be in [0, 1], got {q_star!r}")
    rng = as_generator(rng_seed)
    # random() is in [0, 1): q=0 never fires, q=1 always does
    return int(rng.random() < q_star)


def draw_labels(q_star, rng_seed=None) -> np.ndarray:
    """Vectorised :func:`draw_label`; one independent draw per entry."""
    q = np.asarray(q_star, dtype=float)
    if np.any((q < 0) | (q > 1)) or np.any(np.isnan(q)):
        raise DomainError("q_star entries must be in [0, 1]")
    rng = as_generator(rng_seed)
    return (rng.random(q.shape) < q).astype(np.int64)


def advantages_from_rewards(rewards) -> np.ndarray:
    r = np.asarray(rewards, dtype=float)
    if r.size < 2:
        raise DegenerateGroupError("advantages need at least 2 surviving rollouts")
    std = r.std()  # population std
    if std == 0.0:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def group_advantages(group: RolloutGroup) -> list[float]:
    """Group-normalised advantage of every surviving rollout, in order.

    A group whose survivors all share one reward gets all-zero advantages.
    """
    return advantages_from_rewards(group.labels()).tolist()


def balance_from_labels(labels) -> BalanceStats:
    y = np.asarray(labels, dtype=float)
    if y.size == 0:
        raise DegenerateGroupError("balance stats need at least one survivor")
    rho = float(y.mean())
    return BalanceStats(rho_hat=rho, variance_proxy=rho * (1.0 - rho))


def balance_stats(group: RolloutGroup) -> BalanceStats:
    return balance_from_labels(group.labels())


def write_jsonl(path, rollouts: Iterable[Rollout]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in rollouts:
            fh.write(json.dumps(r.to_record(), sort_keys=False) + "\n")


def read_jsonl(path) -> Iterator[Rollout]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield Rollout.from_record(json.loads(line))

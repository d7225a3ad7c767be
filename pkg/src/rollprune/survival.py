"""Survival probabilities for partial rollouts.

Each rollout with success estimate ``q`` is kept with probability

    clip(kappa + delta + lam * direction * (rho - q), p_min, p_max)

where ``delta`` is solved so the mean keep probability over a reference
posterior distribution equals ``kappa``.  ``direction`` is +1 in the plain
rule (high-``q`` rollouts are pruned harder, which pulls a group's positive
ratio down toward ``rho``).  When the population sits below ``rho`` the
mirrored rule (-1) is the one that pulls the ratio up; ``orient`` picks it
from the calibrator's base rate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rollprune.errors import DomainError, UnreachableTargetError
from rollprune.rng import as_generator

STEERING_MODES = ("adaptive", "fixed")


@dataclass
class SurvivalPolicy:
    kappa: float = 0.5
    rho: float = 0.5
    lam: float = 0.5
    p_min: float = 0.05
    p_max: float = 0.95
    delta: float = 0.0
    min_survivors: int = 2
    cold_start_steps: int = 20
    steering: str = "adaptive"
    direction: float = 1.0
    max_iter: int = 200
    tol: float = 1e-9

    def __post_init__(self):
        problems = []
        if not 0.0 < self.kappa <= 1.0:
            problems.append("kappa must be in (0, 1]")
        if not 0.0 <= self.rho <= 1.0:
            problems.append("rho must be in [0, 1]")
        if self.lam < 0:
            problems.append("lambda must be >= 0")
        if not 0.0 < self.p_min < self.p_max <= 1.0:
            problems.append("need 0 < p_min < p_max <= 1")
        if self.min_survivors < 2:
            problems.append("min_survivors must be >= 2")
        if self.cold_start_steps < 0:
            problems.append("cold_start_steps must be >= 0")
        if self.steering not in STEERING_MODES:
            problems.append(f"steering must be one of {STEERING_MODES}")
        if self.direction not in (1.0, -1.0):
            problems.append("direction must be +1 or -1")
        if problems:
            raise DomainError("; ".join(problems))

    @property
    def disabled(self) -> bool:
        """kappa == 1 means keep everything; the clip bounds are bypassed."""
        return self.kappa >= 1.0

    def survival_prob(self, q):
        """Keep probability for a scalar or array of posteriors."""
        q_arr = np.asarray(q, dtype=float)
        if np.any((q_arr < 0) | (q_arr > 1)):
            raise DomainError("posteriors must be in [0, 1]")
        if self.disabled:
            p = np.ones_like(q_arr)
        else:
            raw = self.kappa + self.delta + self.lam * self.direction * (self.rho - q_arr)
            p = np.clip(raw, self.p_min, self.p_max)
        return float(p) if p.ndim == 0 else p

    def orient(self, base_rate: float) -> float:
        """Pick the balance direction from the population's positive rate."""
        if self.steering == "adaptive":
            self.direction = 1.0 if base_rate >= self.rho else -1.0
        else:
            self.direction = 1.0
        return self.direction

    def expected_keep(self, q, weights=None, delta: float | None = None) -> float:
        q = np.asarray(q, dtype=float)
        w = np.ones_like(q) if weights is None else np.asarray(weights, dtype=float)
        d = self.delta if delta is None else delta
        raw = self.kappa + d + self.lam * self.direction * (self.rho - q)
        return float(np.dot(w, np.clip(raw, self.p_min, self.p_max)) / w.sum())


def solve_delta(policy: SurvivalPolicy, q_distribution, weights=None) -> float:
    """Bisect for the bias that makes the weighted mean keep rate hit kappa.

    The clipped mean is continuous and nondecreasing in delta, and over
    ``[-(1 + lam), 1 + lam]`` it runs from ``p_min`` to ``p_max``, so a root
    exists whenever ``p_min <= kappa <= p_max``.  Sets ``policy.delta`` and
    returns it.
    """
    q = np.asarray(q_distribution, dtype=float).ravel()
    w = np.ones_like(q) if weights is None else np.asarray(weights, dtype=float).ravel()
    if q.size == 0 or w.shape != q.shape or w.sum() <= 0 or np.any(w < 0):
        raise DomainError("q_distribution must be nonempty with positive total weight")
    if np.any((q < 0) | (q > 1)) or np.any(np.isnan(q)):
        raise DomainError("posteriors must be in [0, 1]")
    if policy.disabled:
        policy.delta = 0.0
        return 0.0
    if policy.kappa < policy.p_min:
        raise UnreachableTargetError(policy.kappa, policy.p_min)
    if policy.kappa > policy.p_max:
        raise UnreachableTargetError(policy.kappa, policy.p_max)

    lo, hi = -(1.0 + policy.lam), 1.0 + policy.lam
    mid = 0.0
    for _ in range(policy.max_iter):
        mid = 0.5 * (lo + hi)
        gap = policy.expected_keep(q, w, mid) - policy.kappa
        if gap == 0.0 or hi - lo < policy.tol:
            break
        if gap < 0:
            lo = mid
        else:
            hi = mid
    policy.delta = mid
    return mid


def sample_keep(probs, rng_seed=None) -> np.ndarray:
    """Independent Bernoulli keep draws, no survivor floor."""
    p = np.asarray(probs, dtype=float)
    rng = as_generator(rng_seed)
    return rng.random(p.shape) < p


def apply_floor(keep: np.ndarray, probs, min_keep: int) -> np.ndarray:
    """If fewer than ``min_keep`` survive, keep exactly the ``min_keep`` most
    likely survivors instead (ties go to the lower index)."""
    keep = np.asarray(keep, dtype=bool)
    min_keep = min(int(min_keep), keep.size)
    if min_keep <= 0 or keep.sum() >= min_keep:
        return keep
    # stable sort on -p keeps lower indices first among equal p
    order = np.argsort(-np.asarray(probs, dtype=float), kind="stable")
    out = np.zeros_like(keep)
    out[order[:min_keep]] = True
    return out


def decide(policy: SurvivalPolicy, posteriors, rng_seed=None,
           min_keep: int | None = None) -> list[bool]:
    """Sample keep masks for one group.

    ``min_keep`` overrides the policy's survivor floor; the simulator lowers
    it when other members of the group are still alive.
    """
    probs = policy.survival_prob(np.asarray(posteriors, dtype=float))
    probs = np.atleast_1d(probs)
    keep = sample_keep(probs, rng_seed)
    floor = policy.min_survivors if min_keep is None else min_keep
    return apply_floor(keep, probs, floor).tolist()

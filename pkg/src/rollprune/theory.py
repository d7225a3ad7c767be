"""Numerical checks of the leave-one-out pruning guarantees.

For a group with true success probabilities ``q_star`` and estimates ``q_hat``
(uniformly within ``epsilon``), dropping the index whose leave-one-out mean of
``q_hat`` is nearest ``rho`` gives a realised positive ratio that is, with
probability at least ``1 - delta``, within

    min_j |mean_{-j}(q_star) - rho| + 2 * epsilon + sqrt(log(2/delta) / (2(G-1)))

of ``rho``.  The pieces (error transfer, near-optimality, Hoeffding tail) are
checked separately as well.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from rollprune.errors import DomainError
from rollprune.rng import as_generator


@dataclass(frozen=True)
class PruneInstance:
    q_star: tuple
    q_hat: tuple
    epsilon: float
    rho: float = 0.5

    def __post_init__(self):
        qs = np.asarray(self.q_star, dtype=float)
        qh = np.asarray(self.q_hat, dtype=float)
        if qs.size < 2 or qs.shape != qh.shape:
            raise DomainError("need matching q_star/q_hat with G >= 2")
        if np.any((qs < 0) | (qs > 1)) or np.any((qh < 0) | (qh > 1)):
            raise DomainError("probabilities must be in [0, 1]")
        if self.epsilon < 0:
            raise DomainError("epsilon must be >= 0")
        if np.any(np.abs(qh - qs) > self.epsilon):
            raise DomainError("q_hat violates the uniform accuracy bound")
        object.__setattr__(self, "q_star", tuple(float(x) for x in qs))
        object.__setattr__(self, "q_hat", tuple(float(x) for x in qh))

    @property
    def G(self) -> int:
        return len(self.q_star)


def random_instance(G: int, epsilon: float, rho: float = 0.5, rng_seed=None) -> PruneInstance:
    """q_star ~ U[0,1]; q_hat = clip(q_star + U[-eps, eps], 0, 1)."""
    rng = as_generator(rng_seed)
    qs = rng.random(G)
    qh = np.clip(qs + rng.uniform(-epsilon, epsilon, G), 0.0, 1.0)
    return PruneInstance(tuple(qs), tuple(qh), epsilon, rho)


def leave_one_out_means(values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    return (v.sum() - v) / (v.size - 1)


def pruned_mean(values, j: int) -> float:
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise DomainError("need G >= 2")
    if not 0 <= j < v.size:
        raise IndexError(f"index {j} out of range for G={v.size}")
    return float(np.delete(v, j).sum() / (v.size - 1))


def best_prune_index(values, rho: float) -> int:
    """argmin_j |mean_{-j} - rho|; np.argmin returns the first (lowest) tie.

    Compares ``|sum - v_j - rho (G-1)|`` instead of the divided means: same
    argmin, one rounding fewer, so genuine ties stay tied.
    """
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise DomainError("need G >= 2")
    return int(np.argmin(np.abs((v.sum() - v) - rho * (v.size - 1))))


def lemma1_check(instance: PruneInstance) -> dict:
    """Try the corrective prune: an above-mean index when the true mean
    overshoots rho, a below-mean one when it undershoots.

    ``applicable`` says whether such an index exists.  Among them the one
    nearest the mean moves it least, so it improves whenever any of them
    does.  The improvement is strict only while the step
    ``|q_j - mean| / (G-1)`` stays below ``2 |mean - rho|``; a larger step
    overshoots rho, which ``holds = False`` reports instead of raising.
    """
    q = np.asarray(instance.q_star)
    mu = q.mean()
    before = abs(mu - instance.rho)
    report = {"applicable": False, "improving_index": None, "holds": True,
              "deviation_before": float(before), "deviation_after": float(before)}
    if mu > instance.rho:
        candidates = np.flatnonzero(q > mu)
    elif mu < instance.rho:
        candidates = np.flatnonzero(q < mu)
    else:
        return report
    if candidates.size == 0:
        return report
    # argmin is stable, so equal steps resolve to the lowest index
    j = int(candidates[np.argmin(np.abs(q[candidates] - mu))])
    after = abs(pruned_mean(q, j) - instance.rho)
    report.update(applicable=True, improving_index=j, holds=bool(after < before),
                  deviation_after=float(after))
    return report


def concentration_term(G: int, delta: float) -> float:
    return math.sqrt(math.log(2.0 / delta) / (2.0 * (G - 1)))


def hoeffding_bound(G: int, t: float) -> float:
    return 2.0 * math.exp(-2.0 * (G - 1) * t * t)


def theorem1_trial(instance: PruneInstance, confidence_delta: float, rng_seed=None) -> dict:
    if not 0.0 < confidence_delta < 1.0:
        raise DomainError("confidence_delta must be in (0, 1)")
    rng = as_generator(rng_seed)
    qs = np.asarray(instance.q_star)
    j_hat = best_prune_index(instance.q_hat, instance.rho)
    y = (rng.random(qs.size) < qs).astype(float)
    lhs = abs(pruned_mean(y, j_hat) - instance.rho)
    oracle = float(np.min(np.abs(leave_one_out_means(qs) - instance.rho)))
    rhs = oracle + 2 * instance.epsilon + concentration_term(instance.G, confidence_delta)
    return {"j_hat": j_hat, "lhs": float(lhs), "rhs": float(rhs), "holds": bool(lhs <= rhs)}


def theorem1_batch(G: int, epsilon: float, confidence_delta: float, trials: int,
                   rho: float = 0.5, rng_seed=None) -> list[dict]:
    """Fresh random instance and fresh labels per trial."""
    rng = as_generator(rng_seed)
    rows = []
    for i in range(trials):
        inst = random_instance(G, epsilon, rho, rng)
        row = theorem1_trial(inst, confidence_delta, rng)
        row.update(trial=i, G=G, epsilon=epsilon, delta=confidence_delta, rho=rho)
        rows.append(row)
    return rows


def check_error_transfer(instance: PruneInstance) -> float:
    """Largest |mean_{-j}(q_hat) - mean_{-j}(q_star)| over j; must be <= eps."""
    gap = np.abs(leave_one_out_means(instance.q_hat) - leave_one_out_means(instance.q_star))
    return float(gap.max())


def check_near_optimality(instance: PruneInstance) -> tuple[float, float]:
    """(|mean*_{-j_hat} - rho|, min_j |mean*_{-j} - rho| + 2 eps)."""
    true_loo = np.abs(leave_one_out_means(instance.q_star) - instance.rho)
    j_hat = best_prune_index(instance.q_hat, instance.rho)
    return float(true_loo[j_hat]), float(true_loo.min() + 2 * instance.epsilon)


def hoeffding_tail_check(G: int, q_star, t_grid, trials: int, rng_seed=None,
                         q_hat=None, rho: float = 0.5) -> list[dict]:
    """Empirical P(|p_hat_{-j} - mean*_{-j}| >= t) against 2 exp(-2(G-1) t^2).

    The pruned index comes from ``q_hat`` (``q_star`` when omitted).  The
    check passes when the empirical tail is below the bound plus three Monte
    Carlo standard errors.
    """
    if trials < 1000:
        raise DomainError("need at least 1000 trials")
    qs = np.asarray(q_star, dtype=float)
    if qs.size != G:
        raise DomainError("q_star length must equal G")
    j = best_prune_index(qs if q_hat is None else q_hat, rho)
    keep = np.ones(G, dtype=bool)
    keep[j] = False
    mu = float(qs[keep].mean())
    rng = as_generator(rng_seed)
    y = rng.random((trials, G - 1)) < qs[keep]
    dev = np.abs(y.mean(axis=1) - mu)
    rows = []
    for t in t_grid:
        emp = float(np.mean(dev >= t))
        bound = hoeffding_bound(G, t)
        sigma = math.sqrt(emp * (1 - emp) / trials)
        rows.append({"G": G, "t": float(t), "empirical": emp, "bound": bound,
                     "sigma": sigma, "holds": emp <= bound + 3 * sigma})
    return rows

"""Online binned estimator mapping raw quality scores to success probabilities.

Scores are squashed with a sigmoid, dropped into ``B`` uniform bins, and a
sliding window of labelled history gives Laplace-smoothed class-conditional
bin likelihoods.  Bayes' rule with the window's base rate turns those into a
posterior per bin.
"""
from __future__ import annotations

import json
import math
from collections import deque

import numpy as np
from scipy.special import expit

from rollprune.errors import DomainError, UndefinedLikelihoodError


def normalize_score(raw_score: float) -> float:
    if not math.isfinite(raw_score):
        raise DomainError(f"score must be finite, got {raw_score!r}")
    return float(expit(raw_score))


def bin_index(s_norm: float, num_bins: int) -> int:
    if not 0.0 <= s_norm <= 1.0:
        raise DomainError(f"normalised score must be in [0, 1], got {s_norm!r}")
    return min(num_bins - 1, int(math.floor(num_bins * s_norm)))


class BinnedCalibrator:
    """Sliding-window histogram calibrator.

    Args:
        num_bins: number of uniform bins on the sigmoid scale (>= 2).
        alpha: Laplace pseudo-count added to every bin of both classes.
        buffer_capacity: window length. With ``shared_buffer`` (default) this
            bounds the combined history, so the base rate tracks the recent
            label mix. Otherwise each class keeps its own FIFO of this size.
        shared_buffer: see above.

    ``observe`` mutates; callers must serialise it against every other call.
    """

    def __init__(self, num_bins: int = 128, alpha: float = 1.0,
                 buffer_capacity: int = 8192, shared_buffer: bool = True):
        if num_bins < 2:
            raise DomainError("num_bins must be >= 2")
        if alpha < 0:
            raise DomainError("alpha must be >= 0")
        if buffer_capacity < 1:
            raise DomainError("buffer_capacity must be >= 1")
        self.num_bins = int(num_bins)
        self.alpha = float(alpha)
        self.buffer_capacity = int(buffer_capacity)
        self.shared_buffer = bool(shared_buffer)
        self.pos_buffer: deque[float] = deque()
        self.neg_buffer: deque[float] = deque()
        # arrival order of labels, only needed for shared eviction
        self._order: deque[int] = deque()
        self.pos_counts = np.zeros(self.num_bins, dtype=np.int64)
        self.neg_counts = np.zeros(self.num_bins, dtype=np.int64)

    # -- state --------------------------------------------------------------
    @property
    def prior_pi(self) -> float:
        n_pos, n_neg = len(self.pos_buffer), len(self.neg_buffer)
        denom = n_pos + n_neg + 2 * self.alpha
        if denom == 0:
            raise UndefinedLikelihoodError("empty buffers with alpha=0 give no prior")
        return (n_pos + self.alpha) / denom

    def __len__(self):
        return len(self.pos_buffer) + len(self.neg_buffer)

    def observe(self, raw_score: float, label: int) -> "BinnedCalibrator":
        if label not in (0, 1):
            raise DomainError(f"label must be 0 or 1, got {label!r}")
        s = normalize_score(raw_score)
        b = bin_index(s, self.num_bins)
        if label:
            self.pos_buffer.append(s)
            self.pos_counts[b] += 1
        else:
            self.neg_buffer.append(s)
            self.neg_counts[b] += 1

        if self.shared_buffer:
            self._order.append(label)
            if len(self._order) > self.buffer_capacity:
                self._evict(self._order.popleft())
        elif len(self.pos_buffer if label else self.neg_buffer) > self.buffer_capacity:
            self._evict(label)
        return self

    def _evict(self, label: int) -> None:
        if label:
            s = self.pos_buffer.popleft()
            self.pos_counts[bin_index(s, self.num_bins)] -= 1
        else:
            s = self.neg_buffer.popleft()
            self.neg_counts[bin_index(s, self.num_bins)] -= 1

    def observe_many(self, raw_scores, labels) -> "BinnedCalibrator":
        for s, y in zip(raw_scores, labels):
            self.observe(float(s), int(y))
        return self

    # -- estimates ----------------------------------------------------------
    def likelihoods(self) -> tuple[np.ndarray, np.ndarray]:
        """Smoothed P(bin | Y=1) and P(bin | Y=0) for every bin."""
        a, B = self.alpha, self.num_bins
        pos_tot = self.pos_counts.sum() + a * B
        neg_tot = self.neg_counts.sum() + a * B
        if pos_tot == 0 or neg_tot == 0:
            raise UndefinedLikelihoodError(
                "alpha=0 with an empty class histogram leaves P(b|Y) undefined"
            )
        return (self.pos_counts + a) / pos_tot, (self.neg_counts + a) / neg_tot

    def bin_posteriors(self) -> np.ndarray:
        """Posterior P(Y=1 | bin) for all bins.

        Bins that are empty in both classes are NaN when ``alpha == 0``.
        """
        l1, l0 = self.likelihoods()
        pi = self.prior_pi
        num = pi * l1
        den = num + (1.0 - pi) * l0
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)

    def posterior(self, raw_score: float) -> float:
        b = bin_index(normalize_score(raw_score), self.num_bins)
        q = self.bin_posteriors()[b]
        if np.isnan(q):
            raise UndefinedLikelihoodError(f"bin {b} is empty in both classes and alpha=0")
        return float(q)

    def posteriors(self, raw_scores) -> np.ndarray:
        """Vectorised :meth:`posterior`."""
        raw = np.asarray(raw_scores, dtype=float)
        if not np.all(np.isfinite(raw)):
            raise DomainError("scores must be finite")
        s = expit(raw)
        b = np.minimum(self.num_bins - 1, np.floor(self.num_bins * s).astype(np.int64))
        q = self.bin_posteriors()[b]
        if np.any(np.isnan(q)):
            raise UndefinedLikelihoodError("some scores fall in bins empty in both classes")
        return q

    def occupancy(self) -> np.ndarray:
        return self.pos_counts + self.neg_counts

    def buffer_distribution(self) -> tuple[np.ndarray, np.ndarray]:
        """(posteriors, weights) over occupied bins; the current buffer's view
        of what posteriors the next batch will produce."""
        w = self.occupancy()
        occupied = w > 0
        return self.bin_posteriors()[occupied], w[occupied].astype(float)

    # -- checkpointing ------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "num_bins": self.num_bins,
            "alpha": self.alpha,
            "buffer_capacity": self.buffer_capacity,
            "shared_buffer": self.shared_buffer,
            "pos_buffer": list(self.pos_buffer),
            "neg_buffer": list(self.neg_buffer),
            "order": list(self._order),
            "pos_counts": self.pos_counts.tolist(),
            "neg_counts": self.neg_counts.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BinnedCalibrator":
        cal = cls(d["num_bins"], d["alpha"], d["buffer_capacity"], d["shared_buffer"])
        cal.pos_buffer = deque(float(x) for x in d["pos_buffer"])
        cal.neg_buffer = deque(float(x) for x in d["neg_buffer"])
        cal._order = deque(int(x) for x in d["order"])
        cal.pos_counts = np.asarray(d["pos_counts"], dtype=np.int64)
        cal.neg_counts = np.asarray(d["neg_counts"], dtype=np.int64)
        return cal

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "BinnedCalibrator":
        return cls.from_dict(json.loads(text))

"""Log-probability trace confidence, used as a heuristic voting baseline."""
from __future__ import annotations

import math

import numpy as np

from rollprune.errors import DomainError, ShortTraceError

PROB_FLOOR = 1e-12
DEFAULT_WINDOW = 128
TRACE_MODES = ("min_window", "bottom10_mean", "mean")


def token_confidence(probs) -> float:
    """-sum_j log P(j) over the whole distribution.

    Note this sums over every vocabulary entry, so it grows with the
    vocabulary size; it is not the mean top-k negative log-prob.
    """
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise DomainError("expected a nonempty 1-d distribution")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise DomainError("probabilities must be nonnegative and sum to 1")
    p = np.maximum(p, PROB_FLOOR)
    return float(-np.log(p).sum())


def window_confidence(token_conf, window_size: int = DEFAULT_WINDOW) -> np.ndarray:
    h = np.asarray(token_conf, dtype=float)
    if window_size < 1:
        raise DomainError("window_size must be >= 1")
    if h.size < window_size:
        raise ShortTraceError(f"trace of {h.size} tokens is shorter than window {window_size}")
    return np.lib.stride_tricks.sliding_window_view(h, window_size).mean(axis=1)


def bottom_fraction_mean(values, fraction: float = 0.1) -> float:
    v = np.sort(np.asarray(values, dtype=float))
    k = max(1, math.ceil(fraction * v.size))
    return float(v[:k].mean())


def trace_score(token_conf, mode: str = "bottom10_mean", window_size: int = DEFAULT_WINDOW) -> float:
    h = np.asarray(token_conf, dtype=float)
    if h.size == 0:
        raise DomainError("empty trace")
    if mode == "mean":
        return float(h.mean())
    windows = window_confidence(h, window_size)
    if mode == "min_window":
        return float(windows.min())
    if mode == "bottom10_mean":
        return bottom_fraction_mean(windows, 0.1)
    raise DomainError(f"unknown mode {mode!r}; expected one of {TRACE_MODES}")

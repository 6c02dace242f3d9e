"""Input checks shared by the estimator facade and the CLI."""

from __future__ import annotations

import numpy as np

from .network import ReactionNetwork


def check_times(times) -> np.ndarray:
    """1-D, finite, non-negative, strictly increasing observation times."""
    t = np.asarray(times, dtype=float)
    if t.ndim == 2 and 1 in t.shape:
        t = t.ravel()
    if t.ndim != 1 or t.size == 0:
        raise ValueError(f"times must be a non-empty 1-D array, got shape {t.shape}")
    if not np.all(np.isfinite(t)):
        raise ValueError("times must be finite")
    if t[0] < 0 or np.any(np.diff(t) <= 0):
        raise ValueError("times must be non-negative and strictly increasing")
    return t


def check_observations(observations, n_times: int, n_observed: int) -> np.ndarray:
    """Observations as a finite (n_times, n_observed) array."""
    y = np.asarray(observations, dtype=float)
    if y.ndim == 1 and n_observed == 1:
        y = y[:, None]
    if y.shape != (n_times, n_observed):
        raise ValueError(f"observations must have shape ({n_times}, {n_observed}), got {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError("observations must be finite")
    return y


def check_positive(name: str, value: float) -> float:
    v = float(value)
    if not (np.isfinite(v) and v > 0):
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return v


def check_network(net: ReactionNetwork) -> ReactionNetwork:
    from .network import validate_network

    problems = validate_network(net)
    if problems:
        raise ValueError("invalid network: " + "; ".join(problems))
    return net

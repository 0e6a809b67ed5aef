"""Temperature-scaled softmax and the seeded sampler used by the mock backends."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import InvalidInput


def temperature_softmax(logits: Sequence[float], temperature: float) -> np.ndarray:
    """P(i) = exp(z_i / T) / sum_j exp(z_j / T), computed with a max shift."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise InvalidInput("logits must be a non-empty 1-d sequence")
    if not temperature > 0:
        raise InvalidInput(f"temperature must be > 0, got {temperature}")
    scaled = z / temperature
    scaled -= scaled.max()
    weights = np.exp(scaled)
    return weights / weights.sum()


def entropy(probs: np.ndarray) -> float:
    p = probs[probs > 0]
    return float(-(p * np.log(p)).sum())


def mock_sample(logits: Sequence[float], temperature: float, seed: int) -> int:
    """Draw one index from the temperature softmax with a seeded generator."""
    probs = temperature_softmax(logits, temperature)
    u = np.random.default_rng(seed).random()
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return min(idx, probs.size - 1)

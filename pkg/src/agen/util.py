"""Shared numerics and RNG plumbing.

All stochastic components in this package draw from named streams derived
from one root seed, so that adding draws to one component never perturbs
another component's sequence.
"""

from __future__ import annotations

import zlib

import numpy as np
from scipy.special import entr, expit, logsumexp

__all__ = [
    "sigmoid",
    "softplus",
    "binary_entropy",
    "log_sum_exp",
    "rng_stream",
]


def sigmoid(x):
    """Numerically stable logistic function."""
    return expit(x)


def softplus(x):
    """log(1 + exp(x)) without overflow for large |x|."""
    return np.logaddexp(0.0, x)


def binary_entropy(p):
    """Elementwise entropy of Bernoulli(p) in nats; 0 at p in {0, 1}."""
    return entr(p) + entr(1.0 - np.asarray(p, dtype=np.float64))


def log_sum_exp(x, axis=None):
    """Stable log(sum(exp(x)))."""
    return logsumexp(x, axis=axis)


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Generator for a named substream of the root seed.

    Distinct names give statistically independent streams; the same
    (seed, name) pair always reproduces the same sequence.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key,)))

"""Small numerical helpers shared across modules."""
import numpy as np
from scipy.special import expit, logsumexp

__all__ = ["sigmoid", "logsumexp", "bernoulli", "all_binary_states", "pattern_value", "pattern_bits", "derive_rng"]

sigmoid = expit


def bernoulli(p, rng):
    """Draw {0,1} samples (as float64) with success probabilities ``p``."""
    return (rng.random(np.shape(p)) < p).astype(np.float64)


def all_binary_states(n, values=(0.0, 1.0)):
    """Return a (2**n, n) array enumerating every state; row k has bit j = (k >> j) & 1."""
    k = np.arange(2 ** n)[:, None]
    bits = (k >> np.arange(n)[None, :]) & 1
    lo, hi = values
    return np.where(bits == 1, hi, lo).astype(np.float64)


def pattern_value(h):
    """Integer key of a binary vector, unit 0 is the least significant bit."""
    h = np.asarray(h)
    return int(sum(1 << j for j, x in enumerate(h) if x > 0.5))


def pattern_bits(value, m):
    return np.array([(value >> j) & 1 for j in range(m)], dtype=np.float64)


def derive_rng(seed, *key):
    """Independent generator for item ``key`` under a run seed; order of creation does not matter."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))

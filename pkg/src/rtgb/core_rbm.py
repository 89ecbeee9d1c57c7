"""Gaussian-Bernoulli RBM: energy, conditionals, sampling and exact small-model oracles.

Visible units are real valued with per-unit standard deviation ``s``; hidden
units are binary. The energy is

    E(v, h) = sum_i (v_i - b_i)^2 / (2 s_i^2) - sum_ij w_ij v_i h_j / s_i^2 - sum_j c_j h_j

which is the sign convention whose Boltzmann distribution has the conditionals

    v_i | h ~ Normal(b_i + sum_j w_ij h_j, s_i^2)
    P(h_j = 1 | v) = sigmoid(sum_i w_ij v_i / s_i^2 + c_j)            (0/1 hidden units)
    P(h_j = 1 | v) = exp(a_j) / (2 cosh(a_j)), a_j = c_j + sum_i w_ij v_i / s_i^2   (+-1 units)

For the +-1 convention ``exp(a)/(2 cosh a)`` equals ``sigmoid(2a)``.
"""
import enum
import struct
from dataclasses import dataclass

import numpy as np

from ._numeric import all_binary_states, logsumexp, sigmoid
from .errors import DimensionError, EnumerationLimitError, FormatError

__all__ = [
    "SpinConvention",
    "GbRbmParams",
    "energy",
    "sample_visible",
    "hidden_prob",
    "hidden_states",
    "exact_log_partition",
    "exact_visible_loglik",
    "save_gbrbm",
    "load_gbrbm",
    "MAX_ENUM_HIDDEN",
]

MAX_ENUM_HIDDEN = 20
LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class SpinConvention(enum.IntEnum):
    ZERO_ONE = 0
    PLUS_MINUS_ONE = 1

    @property
    def values(self):
        return (0.0, 1.0) if self is SpinConvention.ZERO_ONE else (-1.0, 1.0)


def _frozen(x, name):
    a = np.array(x, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GbRbmParams:
    """Parameters of a static GB-RBM.

    ``w`` is indexed ``[visible, hidden]``; ``s`` holds standard deviations
    (squared wherever a variance is needed).
    """

    w: np.ndarray
    b: np.ndarray
    c: np.ndarray
    s: np.ndarray
    convention: SpinConvention = SpinConvention.ZERO_ONE

    def __post_init__(self):
        for name in ("w", "b", "c", "s"):
            object.__setattr__(self, name, _frozen(getattr(self, name), name))
        object.__setattr__(self, "convention", SpinConvention(self.convention))
        if self.w.ndim != 2:
            raise DimensionError("w.ndim", 2, self.w.ndim)
        n_v, n_h = self.w.shape
        if self.b.shape != (n_v,):
            raise DimensionError("b (visible)", n_v, self.b.shape)
        if self.c.shape != (n_h,):
            raise DimensionError("c (hidden)", n_h, self.c.shape)
        if self.s.shape != (n_v,):
            raise DimensionError("s (visible)", n_v, self.s.shape)
        if np.any(self.s <= 0):
            raise ValueError("all standard deviations s must be positive")

    @property
    def n_visible(self):
        return self.w.shape[0]

    @property
    def n_hidden(self):
        return self.w.shape[1]

    @classmethod
    def zeros(cls, n_visible, n_hidden, s=1.0, convention=SpinConvention.ZERO_ONE):
        return cls(
            w=np.zeros((n_visible, n_hidden)),
            b=np.zeros(n_visible),
            c=np.zeros(n_hidden),
            s=np.full(n_visible, float(s)),
            convention=convention,
        )

    def __eq__(self, other):
        if not isinstance(other, GbRbmParams):
            return NotImplemented
        return self.convention == other.convention and all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in ("w", "b", "c", "s")
        )


def _check_last(x, n, axis):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0 or x.shape[-1] != n:
        raise DimensionError(axis, n, x.shape[-1] if x.ndim else ())
    return x


def hidden_states(n_hidden, convention=SpinConvention.ZERO_ONE):
    """All 2**n_hidden hidden configurations under ``convention``."""
    return all_binary_states(n_hidden, SpinConvention(convention).values)


def energy(params, v, h):
    """Energy of (v, h). Broadcasts over leading batch axes of ``v`` and ``h``."""
    v = _check_last(v, params.n_visible, "visible")
    h = _check_last(h, params.n_hidden, "hidden")
    lo, hi = params.convention.values
    if not np.all((h == lo) | (h == hi)):
        raise ValueError(f"hidden state entries must be in {{{lo:g}, {hi:g}}}")
    inv_var = 1.0 / params.s**2
    quad = 0.5 * np.sum((v - params.b) ** 2 * inv_var, axis=-1)
    coupling = np.sum(((v * inv_var) @ params.w) * h, axis=-1)
    return quad - coupling - h @ params.c


def sample_visible(params, h, rng):
    """Draw v ~ Normal(b + w h, s^2) independently per visible unit."""
    h = _check_last(h, params.n_hidden, "hidden")
    mean = params.b + h @ params.w.T
    return mean + params.s * rng.standard_normal(mean.shape)


def hidden_prob(params, v, convention=None):
    """P(h_j = 1 | v) for each hidden unit, always strictly inside (0, 1) up to float rounding."""
    convention = params.convention if convention is None else SpinConvention(convention)
    v = _check_last(v, params.n_visible, "visible")
    a = (v / params.s**2) @ params.w + params.c
    if convention is SpinConvention.ZERO_ONE:
        return sigmoid(a)
    # exp(a) / (2 cosh a) written as sigmoid(2a) to stay finite for large |a|
    return sigmoid(2.0 * a)


def _log_state_weights(params, states):
    """log of the v-integral of exp(-E(v, h)) for each row of ``states``."""
    m = params.b + states @ params.w.T
    inv_2var = 0.5 / params.s**2
    gauss = np.sum((m**2 - params.b**2) * inv_2var, axis=-1)
    return states @ params.c + gauss + np.sum(LOG_SQRT_2PI + np.log(params.s))


def _guard(n_hidden, limit):
    if n_hidden > limit:
        raise EnumerationLimitError(n_hidden, limit)


def exact_log_partition(params):
    """log Z by enumerating hidden states and integrating v in closed form."""
    _guard(params.n_hidden, MAX_ENUM_HIDDEN)
    states = hidden_states(params.n_hidden, params.convention)
    return float(logsumexp(_log_state_weights(params, states)))


def exact_visible_loglik(params, v):
    """log P(v) = log sum_h exp(-E(v, h)) - log Z. Accepts a batch of visible vectors."""
    _guard(params.n_hidden, MAX_ENUM_HIDDEN)
    v = _check_last(v, params.n_visible, "visible")
    states = hidden_states(params.n_hidden, params.convention)
    neg_e = -energy(params, v[..., None, :], states)
    return logsumexp(neg_e, axis=-1) - exact_log_partition(params)


# -- checkpoint ---------------------------------------------------------------
#
# "RBM1" | u32 n_visible | u32 n_hidden | u8 convention | b | c | s | w
# All integers and floats little-endian; b, c, s, w are f64, w row-major [visible, hidden].

_RBM_HEADER = struct.Struct("<4sIIB")


def save_gbrbm(params, path):
    with open(path, "wb") as f:
        f.write(_RBM_HEADER.pack(b"RBM1", params.n_visible, params.n_hidden, int(params.convention)))
        for a in (params.b, params.c, params.s, params.w):
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def unpack(self, st):
        if self.pos + st.size > len(self.data):
            raise FormatError(f"truncated file: need {st.size} bytes, have {len(self.data) - self.pos}", self.pos)
        out = st.unpack_from(self.data, self.pos)
        self.pos += st.size
        return out

    def floats(self, shape, dtype="<f8"):
        count = int(np.prod(shape))
        nbytes = count * np.dtype(dtype).itemsize
        if self.pos + nbytes > len(self.data):
            raise FormatError(f"truncated payload: need {nbytes} bytes, have {len(self.data) - self.pos}", self.pos)
        a = np.frombuffer(self.data, dtype=dtype, count=count, offset=self.pos).reshape(shape)
        self.pos += nbytes
        return a.astype(np.float64) if dtype == "<f8" else a

    def finish(self):
        if self.pos != len(self.data):
            raise FormatError(f"{len(self.data) - self.pos} trailing bytes", self.pos)


def load_gbrbm(path):
    with open(path, "rb") as f:
        r = _Reader(f.read())
    magic, n_v, n_h, conv = r.unpack(_RBM_HEADER)
    if magic != b"RBM1":
        raise FormatError(f"bad magic {magic!r}, expected b'RBM1'", 0)
    if conv not in (0, 1):
        raise FormatError(f"unknown spin convention {conv}", 12)
    b = r.floats((n_v,))
    c = r.floats((n_h,))
    s = r.floats((n_v,))
    w = r.floats((n_v, n_h))
    r.finish()
    return GbRbmParams(w=w, b=b, c=c, s=s, convention=SpinConvention(conv))

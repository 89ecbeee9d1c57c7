"""Recurrent temporal Gaussian-Bernoulli RBM.

Each frame ``v_t`` is modelled by a GB-RBM whose hidden bias is shifted by
``U @ hhat_{t-1}``, the previous step's hidden expectation:

    hhat_t = sigmoid(W' v_t + c + U hhat_{t-1})      (hhat_0 term omitted at the first frame)
    P(h_t,j = 1 | v_t, hhat_{t-1}) = sigmoid(W' v_t + c + U hhat_{t-1})_j
    v_t,i | h_t ~ Normal(b_i + (W h_t)_i, s_i^2)

where ``W' v`` is ``sum_i w_ij v_i / s_i^2`` for continuous visibles. The
binary-visible RT-RBM is the same model with ``W' v = W^T v`` and Bernoulli
visibles ``sigmoid(b + W h)``.

Training is CD-K on the per-frame conditional likelihood with ``hhat_{t-1}``
clamped to its data-driven value; there is no backpropagation through the
recurrence.
"""
import enum
import struct
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np

from . import core_rbm
from ._numeric import all_binary_states, bernoulli, derive_rng, logsumexp, sigmoid
from .errors import DimensionError, DivergenceError, EnumerationLimitError, FormatError

__all__ = [
    "VisibleMode",
    "RtgbParams",
    "TrainConfig",
    "Gradients",
    "VisibleConditional",
    "hidden_mean_step",
    "hidden_means",
    "cond_hidden",
    "cond_visible",
    "sample_visible",
    "cd_gradients",
    "train",
    "predict",
    "predict_dataset",
    "evaluate",
    "exact_transition_distribution",
    "exact_conditional_loglik",
    "exact_loglik_gradient",
    "save_rtgb",
    "load_rtgb",
    "MAX_TRANSITION_HIDDEN",
]

MAX_TRANSITION_HIDDEN = 12


class VisibleMode(enum.IntEnum):
    CONTINUOUS = 0
    BINARY = 1


def _frozen(x, name):
    a = np.array(x, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RtgbParams:
    """Parameters {W, U, b, c, s} plus the visible-unit type.

    ``w`` is ``[visible, hidden]``; ``u[j, j']`` couples previous unit ``j'``
    to current unit ``j``.
    """

    w: np.ndarray
    u: np.ndarray
    b: np.ndarray
    c: np.ndarray
    s: np.ndarray
    mode: VisibleMode = VisibleMode.CONTINUOUS

    def __post_init__(self):
        for name in ("w", "u", "b", "c", "s"):
            object.__setattr__(self, name, _frozen(getattr(self, name), name))
        object.__setattr__(self, "mode", VisibleMode(self.mode))
        if self.w.ndim != 2:
            raise DimensionError("w.ndim", 2, self.w.ndim)
        n_v, n_h = self.w.shape
        if self.u.shape != (n_h, n_h):
            raise DimensionError("u (hidden x hidden)", (n_h, n_h), self.u.shape)
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
    def zeros(cls, n_visible, n_hidden, s=1.0, mode=VisibleMode.CONTINUOUS):
        return cls(
            w=np.zeros((n_visible, n_hidden)),
            u=np.zeros((n_hidden, n_hidden)),
            b=np.zeros(n_visible),
            c=np.zeros(n_hidden),
            s=np.full(n_visible, float(s)),
            mode=mode,
        )

    @classmethod
    def initial(cls, n_visible, n_hidden, rng, scale=0.01, s=1.0, mode=VisibleMode.CONTINUOUS):
        """Small Gaussian couplings, zero biases."""
        p = cls.zeros(n_visible, n_hidden, s=s, mode=mode)
        return p.replace(
            w=scale * rng.standard_normal((n_visible, n_hidden)),
            u=scale * rng.standard_normal((n_hidden, n_hidden)),
        )

    def replace(self, **changes):
        return replace(self, **changes)

    def static(self, convention=core_rbm.SpinConvention.ZERO_ONE):
        """The GB-RBM obtained by dropping the temporal coupling."""
        return core_rbm.GbRbmParams(w=self.w, b=self.b, c=self.c, s=self.s, convention=convention)

    def __eq__(self, other):
        if not isinstance(other, RtgbParams):
            return NotImplemented
        return self.mode == other.mode and all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in ("w", "u", "b", "c", "s")
        )


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation settings.

    ``input_prefix_len`` (T) frames are given and frames ``T .. total_len-1``
    (0-based) are scored when computing the per-epoch prediction loss.
    """

    cd_steps: int = 20
    learning_rate: float = 1e-3
    epochs: int = 1
    seed: int = 0
    input_prefix_len: int = 3
    total_len: int = 8
    holdout: bool = False
    chains: int = 1

    def __post_init__(self):
        if self.cd_steps < 1:
            raise ValueError("cd_steps must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if not 1 <= self.input_prefix_len < self.total_len:
            raise ValueError("need 1 <= input_prefix_len < total_len")


class Gradients(NamedTuple):
    dw: np.ndarray
    du: np.ndarray
    db: np.ndarray
    dc: np.ndarray

    def flat(self):
        return np.concatenate([np.ravel(g) for g in self])


class VisibleConditional(NamedTuple):
    """Per-unit visible distribution: Gaussian (mean, std) or Bernoulli (mean=p, std=None)."""

    mode: VisibleMode
    mean: np.ndarray
    std: Optional[np.ndarray]


def _check_last(x, n, axis):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0 or x.shape[-1] != n:
        raise DimensionError(axis, n, x.shape[-1] if x.ndim else ())
    return x


def _visible_drive(params, v):
    if params.mode is VisibleMode.CONTINUOUS:
        return (v / params.s**2) @ params.w
    return v @ params.w


def hidden_mean_step(params, v_t, h_prev=None):
    """Expected hidden vector for one frame; ``h_prev=None`` marks the first frame."""
    v_t = _check_last(v_t, params.n_visible, "visible")
    a = _visible_drive(params, v_t) + params.c
    if h_prev is not None:
        h_prev = _check_last(h_prev, params.n_hidden, "previous hidden mean")
        a = a + h_prev @ params.u.T
    return sigmoid(a)


def hidden_means(params, seq):
    """Data-driven hidden expectations for every frame. ``seq`` is (..., T, V)."""
    seq = _check_last(seq, params.n_visible, "visible")
    out = np.empty(seq.shape[:-1] + (params.n_hidden,))
    h = None
    for t in range(seq.shape[-2]):
        h = hidden_mean_step(params, seq[..., t, :], h)
        out[..., t, :] = h
    return out


def cond_hidden(params, v_t, h_prev_mean):
    """P(h_t,j = 1 | v_t, hhat_{t-1})."""
    v_t = _check_last(v_t, params.n_visible, "visible")
    h_prev_mean = _check_last(h_prev_mean, params.n_hidden, "previous hidden mean")
    return sigmoid(_visible_drive(params, v_t) + params.c + h_prev_mean @ params.u.T)


def cond_visible(params, h_t, mode=None):
    mode = params.mode if mode is None else VisibleMode(mode)
    h_t = _check_last(h_t, params.n_hidden, "hidden")
    a = params.b + h_t @ params.w.T
    if mode is VisibleMode.CONTINUOUS:
        return VisibleConditional(mode, a, np.broadcast_to(params.s, a.shape))
    return VisibleConditional(mode, sigmoid(a), None)


def sample_visible(params, h_t, rng, mode=None):
    d = cond_visible(params, h_t, mode)
    if d.mode is VisibleMode.CONTINUOUS:
        return d.mean + d.std * rng.standard_normal(d.mean.shape)
    return bernoulli(d.mean, rng)


def _previous_means(hhat):
    prev = np.zeros_like(hhat)
    prev[..., 1:, :] = hhat[..., :-1, :]
    return prev


def gibbs_reconstruct(params, v_data, prev_means, K, rng, chains=1):
    """K Gibbs sweeps per frame started at the data, ``hhat_{t-1}`` held fixed.

    Returns reconstructions of shape (chains, T, V).
    """
    v = np.broadcast_to(v_data, (chains,) + v_data.shape).copy()
    for _ in range(K):
        h = bernoulli(cond_hidden(params, v, prev_means), rng)
        v = sample_visible(params, h, rng)
    return v


def cd_gradients(params, seq, K, rng, chains=1, sampler=None):
    """CD-K estimate of the conditional log-likelihood gradient, averaged over time steps.

    ``sampler(params, seq, prev_means, K, rng, chains)`` returns the negative
    phase visibles; it defaults to :func:`gibbs_reconstruct`. The variance
    parameters ``s`` are not learned.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    seq = _check_last(seq, params.n_visible, "visible")
    if seq.ndim != 2 or seq.shape[0] < 2:
        raise ValueError(f"sequence must be (T>=2, V); got shape {seq.shape}")
    sampler = gibbs_reconstruct if sampler is None else sampler
    T = seq.shape[0]

    hhat = hidden_means(params, seq)
    prev = _previous_means(hhat)
    v_model = np.asarray(sampler(params, seq, prev, K, rng, chains), dtype=np.float64).reshape(-1, T, params.n_visible)
    p_model = cond_hidden(params, v_model, prev)
    n_model = v_model.shape[0] * T

    scale = 1.0 / params.s**2 if params.mode is VisibleMode.CONTINUOUS else np.ones(params.n_visible)
    dw = scale[:, None] * (
        seq.T @ hhat / T - np.einsum("nti,ntj->ij", v_model, p_model) / n_model
    )
    p_bar = p_model.mean(axis=0)
    du = (hhat - p_bar).T @ prev / T
    db = seq.mean(axis=0) - v_model.reshape(-1, params.n_visible).mean(axis=0)
    dc = hhat.mean(axis=0) - p_bar.mean(axis=0)
    return Gradients(dw, du, db, dc)


def predict(params, prefix, horizon, rng, mode=None, sample_hidden=True):
    """Model-based rollout: encode ``prefix`` (..., T, V) and generate ``horizon`` frames.

    Each new hidden state is drawn from ``cond_hidden`` given the last frame
    and the previous hidden mean; the emitted frame is the conditional mean of
    the visibles, which is fed back as the next input.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    prefix = _check_last(prefix, params.n_visible, "visible")
    if prefix.ndim < 2 or prefix.shape[-2] < 1:
        raise ValueError("prefix must contain at least one frame")
    hhat = hidden_means(params, prefix)[..., -1, :]
    v = prefix[..., -1, :]
    out = np.empty(prefix.shape[:-2] + (horizon, params.n_visible))
    for k in range(horizon):
        p = cond_hidden(params, v, hhat)
        h = bernoulli(p, rng) if sample_hidden else p
        v = cond_visible(params, h, mode).mean
        out[..., k, :] = v
        hhat = hidden_mean_step(params, v, hhat)
    return out


def predict_dataset(params, sequences, T, T_end, rng, **kwargs):
    """Copy of ``sequences`` (N, L, V) with frames ``T..T_end-1`` replaced by model predictions."""
    sequences = np.asarray(sequences, dtype=np.float64)
    pred = sequences.copy()
    pred[:, T:T_end] = predict(params, sequences[:, :T], T_end - T, rng, **kwargs)
    return pred


def evaluate(params, sequences, T, T_end, rng, **kwargs):
    from .evaluation import prediction_loss

    pred = predict_dataset(params, sequences, T, T_end, rng, **kwargs)
    return prediction_loss(sequences, pred, T, T_end)


def train(params, data, cfg, progress=None):
    """Per-sequence gradient ascent with CD-K.

    Returns ``(params, curve)`` where ``curve[e]`` is the prediction loss
    after ``e`` epochs (``curve[0]`` is the untrained loss). With
    ``cfg.holdout`` the last 10% of sequences are scored and not trained on.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 3 or data.shape[0] == 0:
        raise ValueError("data must be a nonempty (N, L, V) array")
    _check_last(data, params.n_visible, "visible")
    if cfg.total_len > data.shape[1]:
        raise ValueError(f"total_len {cfg.total_len} exceeds sequence length {data.shape[1]}")
    if cfg.holdout and data.shape[0] >= 10:
        split = data.shape[0] - data.shape[0] // 10
        train_set, eval_set = data[:split], data[split:]
    else:
        train_set, eval_set = data, data

    T, T_end = cfg.input_prefix_len, cfg.total_len

    def epoch_loss(p, epoch):
        return evaluate(p, eval_set, T, T_end, derive_rng(cfg.seed, epoch, 2**31)).mean_loss

    curve = [epoch_loss(params, 0)]
    if progress:
        progress(0, curve[0])
    arrays = {k: np.array(getattr(params, k)) for k in ("w", "u", "b", "c")}
    lr = cfg.learning_rate
    for epoch in range(1, cfg.epochs + 1):
        for n, seq in enumerate(train_set):
            rng = derive_rng(cfg.seed, epoch, n)
            g = cd_gradients(params, seq, cfg.cd_steps, rng, chains=cfg.chains)
            for name, grad in zip(("w", "u", "b", "c"), (g.dw, g.du, g.db, g.dc)):
                arrays[name] += lr * grad
                if not np.all(np.isfinite(arrays[name])):
                    raise DivergenceError(epoch, n, name)
            params = params.replace(**arrays)
        curve.append(epoch_loss(params, epoch))
        if progress:
            progress(epoch, curve[-1])
    return params, curve


# -- exact oracles ------------------------------------------------------------


def _log_hidden_weights(params, states, bias):
    """log of sum/integral over v of exp(-E_t(v, h)) for each hidden row, given hidden bias ``bias``."""
    m = params.b + states @ params.w.T
    if params.mode is VisibleMode.CONTINUOUS:
        vis = np.sum((m**2 - params.b**2) * (0.5 / params.s**2), axis=-1)
        vis = vis + np.sum(core_rbm.LOG_SQRT_2PI + np.log(params.s))
    else:
        vis = np.sum(np.logaddexp(0.0, m), axis=-1)
    return states @ bias + vis


def exact_transition_distribution(params, h_prev):
    """Exact P(h_t | h_{t-1}) over all 2**H states (row k has bit j = (k >> j) & 1)."""
    if params.n_hidden > MAX_TRANSITION_HIDDEN:
        raise EnumerationLimitError(params.n_hidden, MAX_TRANSITION_HIDDEN)
    h_prev = _check_last(h_prev, params.n_hidden, "previous hidden state")
    states = all_binary_states(params.n_hidden)
    logw = _log_hidden_weights(params, states, params.c + params.u @ h_prev)
    return np.exp(logw - logsumexp(logw))


def _require_continuous(params):
    if params.mode is not VisibleMode.CONTINUOUS:
        raise NotImplementedError("exact likelihood oracles are implemented for continuous visibles only")


def exact_conditional_loglik(params, seq, prev_means=None):
    """Mean over t of log P(v_t | hhat_{t-1}) by enumeration.

    ``prev_means`` (T, H) fixes the conditioning means; by default they are
    the data-driven means under ``params``.
    """
    _require_continuous(params)
    if params.n_hidden > MAX_TRANSITION_HIDDEN:
        raise EnumerationLimitError(params.n_hidden, MAX_TRANSITION_HIDDEN)
    seq = _check_last(seq, params.n_visible, "visible")
    if prev_means is None:
        prev_means = _previous_means(hidden_means(params, seq))
    states = all_binary_states(params.n_hidden)
    total = 0.0
    static = params.static()
    for v, prev in zip(seq, prev_means):
        bias = params.c + params.u @ prev
        neg_e = -core_rbm.energy(static, v, states) + states @ (params.u @ prev)
        total += logsumexp(neg_e) - logsumexp(_log_hidden_weights(params, states, bias))
    return total / seq.shape[0]


def exact_loglik_gradient(params, seq):
    """Exact gradient of :func:`exact_conditional_loglik` with the previous means held fixed."""
    _require_continuous(params)
    if params.n_hidden > MAX_TRANSITION_HIDDEN:
        raise EnumerationLimitError(params.n_hidden, MAX_TRANSITION_HIDDEN)
    seq = _check_last(seq, params.n_visible, "visible")
    T = seq.shape[0]
    hhat = hidden_means(params, seq)
    prev = _previous_means(hhat)
    states = all_binary_states(params.n_hidden)
    m = params.b + states @ params.w.T
    inv_var = 1.0 / params.s**2
    dw = np.zeros_like(params.w)
    du = np.zeros_like(params.u)
    db = np.zeros_like(params.b)
    dc = np.zeros_like(params.c)
    for t in range(T):
        logw = _log_hidden_weights(params, states, params.c + params.u @ prev[t])
        p = np.exp(logw - logsumexp(logw))
        e_h = p @ states
        e_v = p @ m
        e_vh = m.T @ (p[:, None] * states)
        dw += inv_var[:, None] * (np.outer(seq[t], hhat[t]) - e_vh)
        du += np.outer(hhat[t] - e_h, prev[t])
        db += inv_var * (seq[t] - e_v)
        dc += hhat[t] - e_h
    return Gradients(dw / T, du / T, db / T, dc / T)


# -- checkpoint ---------------------------------------------------------------
#
# "RTGB" | u8 version (=1) | u8 visible mode | u32 n_visible | u32 n_hidden | b | c | s | w | u
# Little-endian; vectors and matrices are f64, matrices row-major.

_RTGB_HEADER = struct.Struct("<4sBBII")
RTGB_VERSION = 1


def save_rtgb(params, path):
    with open(path, "wb") as f:
        f.write(_RTGB_HEADER.pack(b"RTGB", RTGB_VERSION, int(params.mode), params.n_visible, params.n_hidden))
        for a in (params.b, params.c, params.s, params.w, params.u):
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_rtgb(path):
    with open(path, "rb") as f:
        r = core_rbm._Reader(f.read())
    magic, version, mode, n_v, n_h = r.unpack(_RTGB_HEADER)
    if magic != b"RTGB":
        raise FormatError(f"bad magic {magic!r}, expected b'RTGB'", 0)
    if version != RTGB_VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if mode not in (0, 1):
        raise FormatError(f"unknown visible mode {mode}", 5)
    b = r.floats((n_v,))
    c = r.floats((n_h,))
    s = r.floats((n_v,))
    w = r.floats((n_v, n_h))
    u = r.floats((n_h, n_h))
    r.finish()
    return RtgbParams(w=w, u=u, b=b, c=c, s=s, mode=VisibleMode(mode))

"""Probabilistic state-transition rules between binary hidden units.

A rule ``p :: h(t+1,j) <- L_0 ^ ... ^ L_{m-1}`` says that when the hidden
state at time t matches the full conjunction of literals, unit ``j`` is on at
t+1 with probability ``p``. Probabilities are estimated from a trained model
by running Gibbs chains on the current frame with the previous hidden state
clamped:

    h(0) random -> v(0) ~ P(v | h(0)) -> h(1) ~ P(h | v(0), h_prev) -> v(1) -> ... -> h(k)

and counting how often each unit is on in ``h(k)`` across chains.

Hidden-state patterns are keyed by an integer with unit 0 as the least
significant bit.
"""
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._numeric import all_binary_states, bernoulli, derive_rng, pattern_bits, pattern_value, sigmoid
from .errors import DimensionError, RuleParseError
from .temporal import VisibleMode, cond_hidden, cond_visible, hidden_means, sample_visible

__all__ = [
    "Literal",
    "Rule",
    "RuleSet",
    "GibbsConfig",
    "TransitionEstimate",
    "approximate_transition",
    "enumerate_bodies",
    "data_bodies",
    "extract_rules",
    "apply_rules",
    "rule_predict",
    "format_rule",
    "serialize_rules",
    "parse_rules",
    "MAX_ENUM_BODIES_WIDTH",
]

MAX_ENUM_BODIES_WIDTH = 12
_BLOCK = 32


@dataclass(frozen=True)
class Literal:
    unit: int
    negated: bool = False

    def __str__(self):
        return ("~" if self.negated else "") + f"h(t,{self.unit})"


@dataclass(frozen=True)
class Rule:
    head: Literal
    body: tuple
    prob: float
    support: int = 1

    def __post_init__(self):
        if self.head.negated:
            raise ValueError("rule heads are positive literals")
        if sorted(lit.unit for lit in self.body) != list(range(len(self.body))):
            raise ValueError("rule body must contain exactly one literal per hidden unit")
        if not 0.0 <= self.prob <= 1.0:
            raise ValueError(f"rule probability {self.prob} outside [0, 1]")
        if self.support < 1:
            raise ValueError("support must be >= 1")
        object.__setattr__(self, "body", tuple(sorted(self.body, key=lambda lit: lit.unit)))

    @property
    def m(self):
        return len(self.body)

    @property
    def body_bits(self):
        return np.array([0.0 if lit.negated else 1.0 for lit in self.body])

    @property
    def body_pattern(self):
        return pattern_value(self.body_bits)

    @classmethod
    def from_pattern(cls, body, head, prob, support=1):
        body = np.asarray(body)
        lits = tuple(Literal(j, negated=not bool(x > 0.5)) for j, x in enumerate(body))
        return cls(Literal(int(head)), lits, float(prob), int(support))


class RuleSet:
    """Rules keyed by (body pattern, head unit) plus per-unit fallback probabilities."""

    def __init__(self, m, rules=(), fallback=None):
        self.m = int(m)
        table = {}
        for r in rules:
            if r.m != self.m:
                raise DimensionError("rule body width", self.m, r.m)
            key = (r.body_pattern, r.head.unit)
            if key in table:
                raise ValueError(f"duplicate rule for body {key[0]} and head {key[1]}")
            table[key] = r
        self.rules = dict(sorted(table.items()))
        fb = np.full(self.m, 0.5) if fallback is None else np.array(fallback, dtype=np.float64)
        if fb.shape != (self.m,) or np.any(fb < 0) or np.any(fb > 1):
            raise ValueError("fallback must hold m probabilities in [0, 1]")
        fb.setflags(write=False)
        self.fallback = fb
        self._by_head = {}
        for (pat, j) in self.rules:
            self._by_head.setdefault(j, []).append(pat)
        self._by_head = {j: np.array(sorted(p)) for j, p in self._by_head.items()}
        self._bits_by_head = {j: np.array([pattern_bits(p, self.m) for p in pats]) for j, pats in self._by_head.items()}

    def __len__(self):
        return len(self.rules)

    def __iter__(self):
        return iter(self.rules.values())

    def __eq__(self, other):
        return (
            isinstance(other, RuleSet)
            and self.m == other.m
            and self.rules == other.rules
            and np.array_equal(self.fallback, other.fallback)
        )

    def body_patterns(self):
        return sorted({pat for pat, _ in self.rules})

    def rounded(self):
        """Copy with every probability rounded to 0 or 1 (0.5 rounds to 1)."""
        rules = [Rule(r.head, r.body, float(r.prob >= 0.5), r.support) for r in self]
        return RuleSet(self.m, rules, (self.fallback >= 0.5).astype(float))

    def head_probabilities(self, h):
        """Probability that each unit is on next, for current binary state ``h``.

        Missing (body, head) pairs use the stored body nearest in Hamming
        distance (lowest pattern value on ties), then the fallback marginal.
        """
        h = np.asarray(h, dtype=np.float64)
        if h.shape != (self.m,):
            raise DimensionError("hidden state width", self.m, h.shape)
        pat = pattern_value(h)
        out = np.empty(self.m)
        for j in range(self.m):
            r = self.rules.get((pat, j))
            if r is not None:
                out[j] = r.prob
            elif j in self._by_head:
                dist = np.abs(self._bits_by_head[j] - h).sum(axis=1)
                nearest = self._by_head[j][np.argmin(dist)]  # argmin takes the first, i.e. lowest pattern
                out[j] = self.rules[(int(nearest), j)].prob
            else:
                out[j] = self.fallback[j]
        return out


@dataclass(frozen=True)
class GibbsConfig:
    k: int = 100
    chains: int = 20000
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.chains < 1:
            raise ValueError("k and chains must be >= 1")


class TransitionEstimate(NamedTuple):
    unit_probs: np.ndarray
    table: dict

    def dense(self, m):
        out = np.zeros(2**m)
        for pat, p in self.table.items():
            out[pat] = p
        return out


def _final_states(params, h_prev, k, chains, rng):
    """Run the clamped chains for a block of previous states (B, m); returns h(k) as (B, chains, m).

    For Gaussian visibles the hidden update depends on v only through
    ``W^T v / s^2``, which given h is Gaussian with mean ``W^T (b + W h) / s^2``
    and covariance ``W^T S^-2 W``; that m-dimensional projection is drawn
    directly, which is the same chain over h as drawing v in full.
    """
    B, m = h_prev.shape
    prev = np.broadcast_to(h_prev[:, None, :], (B, chains, m))
    h = bernoulli(np.full(prev.shape, 0.5), rng)
    if params.mode is VisibleMode.CONTINUOUS:
        ws = params.w / params.s[:, None] ** 2
        gram = params.w.T @ ws
        evals, evecs = np.linalg.eigh(gram)
        root = evecs * np.sqrt(np.clip(evals, 0.0, None))
        bias = params.b @ ws + params.c + prev @ params.u.T
        for _ in range(k):
            drive = h @ gram + rng.standard_normal(h.shape) @ root.T
            h = bernoulli(sigmoid(drive + bias), rng)
        return h
    for _ in range(k):
        v = sample_visible(params, h, rng)
        h = bernoulli(cond_hidden(params, v, prev), rng)
    return h


def approximate_transition(params, h_prev, cfg, rng=None):
    """Gibbs estimate of P(h_t | h_{t-1} = h_prev): per-unit on-frequencies and the empirical joint."""
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if h_prev.shape != (params.n_hidden,):
        raise DimensionError("previous hidden state", params.n_hidden, h_prev.shape)
    rng = derive_rng(cfg.seed, pattern_value(h_prev)) if rng is None else rng
    h = _final_states(params, h_prev[None], cfg.k, cfg.chains, rng)[0]
    weights = 1 << np.arange(params.n_hidden)
    counts = Counter((h @ weights).astype(np.int64).tolist())
    table = {int(p): c / cfg.chains for p, c in sorted(counts.items())}
    return TransitionEstimate(h.mean(axis=0), table)


def enumerate_bodies(m):
    if m > MAX_ENUM_BODIES_WIDTH:
        raise ValueError(f"refusing to enumerate 2^{m} bodies (limit m <= {MAX_ENUM_BODIES_WIDTH})")
    return all_binary_states(m)


def data_bodies(params, sequences):
    """Distinct hidden states visited by the data, binarizing hidden means at 0.5."""
    hh = hidden_means(params, np.asarray(sequences, dtype=np.float64))
    bits = (hh.reshape(-1, params.n_hidden) > 0.5).astype(np.float64)
    return np.unique(bits, axis=0)


def extract_rules(params, bodies, cfg, threads=1):
    """One rule per (distinct body, head unit), probability = Gibbs on-frequency of the head."""
    m = params.n_hidden
    pats = sorted({pattern_value(_check_body(b, m)) for b in bodies})
    if not pats:
        raise ValueError("no rule bodies given")
    blocks = [pats[i:i + _BLOCK] for i in range(0, len(pats), _BLOCK)]

    def run(i):
        prevs = np.array([pattern_bits(p, m) for p in blocks[i]])
        return _final_states(params, prevs, cfg.k, cfg.chains, derive_rng(cfg.seed, i)).mean(axis=1)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            freqs = list(ex.map(run, range(len(blocks))))
    else:
        freqs = [run(i) for i in range(len(blocks))]
    freqs = np.concatenate(freqs)
    rules = [
        Rule.from_pattern(pattern_bits(p, m), j, freqs[n, j], cfg.chains)
        for n, p in enumerate(pats)
        for j in range(m)
    ]
    return RuleSet(m, rules, freqs.mean(axis=0))


def _check_body(b, m):
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (m,):
        raise DimensionError("rule body width", m, b.shape)
    if not np.all((b == 0) | (b == 1)):
        raise ValueError("rule bodies must be binary")
    return b


def apply_rules(rs, h_t, rng):
    """Draw the next hidden state unit by unit from the matching rules."""
    return bernoulli(rs.head_probabilities(h_t), rng)


def rule_predict(params, rs, prefix, horizon, rng):
    """Encode ``prefix`` (T, V), binarize the last hidden mean, then roll forward with rules.

    Each hidden state is decoded to the conditional visible mean. A batch of
    prefixes (N, T, V) is handled sequence by sequence.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if rs.m != params.n_hidden:
        raise DimensionError("rule set width", params.n_hidden, rs.m)
    prefix = np.asarray(prefix, dtype=np.float64)
    if prefix.ndim == 3:
        return np.stack([rule_predict(params, rs, p, horizon, rng) for p in prefix])
    if prefix.ndim != 2 or prefix.shape[0] < 1:
        raise ValueError("prefix must be a nonempty (T, V) array")
    h = (hidden_means(params, prefix)[-1] > 0.5).astype(np.float64)
    out = np.empty((horizon, params.n_visible))
    for k in range(horizon):
        h = apply_rules(rs, h, rng)
        out[k] = cond_visible(params, h).mean
    return out


# -- text format --------------------------------------------------------------

_HEADER = re.compile(r"^#rtgb-rules v1 m=(\d+)$")
_RULE = re.compile(r"^([0-9.eE+-]+) :: h\(t\+1,(\d+)\) <- (.*?)(?:\s+% support=(\d+))?$")
_LIT = re.compile(r"^(~?)h\(t,(\d+)\)$")


def format_rule(rule):
    body = " ^ ".join(str(lit) for lit in rule.body)
    return f"{rule.prob:.6f} :: h(t+1,{rule.head.unit}) <- {body}"


def serialize_rules(rs):
    lines = [f"#rtgb-rules v1 m={rs.m}"]
    lines += [f"{format_rule(r)} % support={r.support}" for r in rs]
    lines.append("#fallback " + " ".join(f"{p:.6f}" for p in rs.fallback))
    return "\n".join(lines) + "\n"


def parse_rules(text):
    lines = text.splitlines()
    if not lines or not _HEADER.match(lines[0].strip()):
        raise RuleParseError("missing '#rtgb-rules v1 m=<m>' header", 1)
    m = int(_HEADER.match(lines[0].strip()).group(1))
    rules = {}
    fallback = None
    for n, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#fallback"):
            try:
                fallback = [float(x) for x in line.split()[1:]]
            except ValueError:
                raise RuleParseError("malformed fallback values", n) from None
            if len(fallback) != m:
                raise RuleParseError(f"fallback has {len(fallback)} values, expected m={m}", n)
            continue
        if line.startswith("#"):
            continue
        mt = _RULE.match(line)
        if not mt:
            raise RuleParseError(f"malformed rule: {line!r}", n)
        prob_s, head_s, body_s, support_s = mt.groups()
        try:
            prob = float(prob_s)
        except ValueError:
            raise RuleParseError(f"bad probability {prob_s!r}", n) from None
        lits = []
        for tok in body_s.split(" ^ "):
            lm = _LIT.match(tok.strip())
            if not lm:
                raise RuleParseError(f"malformed literal {tok!r}", n)
            lits.append(Literal(int(lm.group(2)), lm.group(1) == "~"))
        head = int(head_s)
        if len(lits) != m or head >= m:
            raise RuleParseError(f"rule width does not match m={m}", n)
        try:
            rule = Rule(Literal(head), tuple(lits), prob, int(support_s) if support_s else 1)
        except ValueError as e:
            raise RuleParseError(str(e), n) from None
        key = (rule.body_pattern, head)
        if key in rules:
            raise RuleParseError(f"duplicate rule for body pattern {key[0]}, head {head}", n)
        rules[key] = rule
    return RuleSet(m, rules.values(), fallback)

"""Exact finite-horizon quantities by exhaustive enumeration.

Every path ``(x_{1-m..t}, s_{-m..t}, y_{1-u..t})`` is enumerated with its exact
probability.  The initial context is drawn like the simulator's: uniform
admissible input window, stationary state path, then the outputs
``y_{1-u..0}`` from the channel.  Beliefs needed by belief-driven sources are
obtained by grouping path probabilities, never through the forward filter.

Two enumerators exist: one keeps full paths (for identities that condition on
the whole history) and one merges paths that agree on the output history and
on the last ``m`` inputs and ``m + 1`` states (for the truncated-window rate).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .belief import alpha_init
from .channel import ChannelSpec, InputConstraint
from .contexts import ContextSpace
from .errors import DelayMismatch, EnumerationTooLarge
from .montecarlo import _receiver_tables, receiver_space

ENUM_BUDGET = 8_000_000        # paths; about 2 GB of working arrays at the limit


# --- helpers --------------------------------------------------------------------------

def _pack(cols: np.ndarray, radix: int) -> np.ndarray:
    """Integer key per row of a small-alphabet matrix (most recent column least significant)."""
    cols = np.asarray(cols)
    if cols.ndim == 1:
        cols = cols[:, None]
    if cols.shape[1] == 0:
        return np.zeros(cols.shape[0], dtype=np.int64)
    if cols.shape[1] * math.log2(max(radix, 2)) < 62:
        key = np.zeros(cols.shape[0], dtype=np.int64)
        for j in range(cols.shape[1]):
            key = key * radix + cols[:, j]
        return key
    return np.unique(cols, axis=0, return_inverse=True)[1].ravel().astype(np.int64)


def _combine(*keys: np.ndarray) -> np.ndarray:
    """Dense joint key of several integer keys."""
    out = np.zeros(keys[0].shape[0], dtype=np.int64)
    for k in keys:
        _, inv = np.unique(k, return_inverse=True)
        out = np.unique(out * (inv.max() + 1) + inv, return_inverse=True)[1].ravel()
    return out


def _group_entropy(key: np.ndarray, prob: np.ndarray) -> float:
    _, inv = np.unique(key, return_inverse=True)
    mass = np.bincount(inv.ravel(), weights=prob)
    mass = mass[mass > 0]
    return float(-(mass * np.log2(mass)).sum())


def cond_mutual_info_paths(a_key, c_key, y, prob) -> float:
    """I(A; Y | C) in bits from weighted samples with integer labels."""
    ac = _combine(c_key, a_key)
    cy = _combine(c_key, y)
    acy = _combine(ac, y)
    return max(_group_entropy(ac, prob) + _group_entropy(cy, prob)
               - _group_entropy(acy, prob) - _group_entropy(c_key, prob), 0.0)


# --- general history-dependent sources ---------------------------------------------

@dataclass(frozen=True, eq=False)
class HistorySource:
    """A source in the class with ``u``-delayed feedback and state information whose
    input law is an arbitrary (pseudo-random) function of the whole visible history
    ``(x^{t-1}, s^{t-u-1}, y^{t-u-1})``."""

    num_inputs: int
    u: int
    m: int
    constraint: InputConstraint
    seed: int
    table_size: int = 4096
    table: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        object.__setattr__(self, "table", rng.dirichlet(np.ones(self.num_inputs), size=self.table_size))

    def laws(self, x_hist: np.ndarray, s_vis: np.ndarray, y_vis: np.ndarray) -> np.ndarray:
        h = np.full(x_hist.shape[0], 1469598103934665603, dtype=np.uint64)
        prime = np.uint64(1099511628211)
        for block, tag in ((x_hist, 1), (s_vis, 2), (y_vis, 3)):
            for j in range(block.shape[1]):
                h = (h ^ (block[:, j].astype(np.uint64) * np.uint64(8) + np.uint64(tag))) * prime
            h = (h ^ np.uint64(block.shape[1] + 97)) * prime
        law = self.table[(h % np.uint64(self.table_size)).astype(np.int64)].copy()
        c = self.constraint.memory
        if c:
            last = x_hist[:, -c:]
            ok = self.constraint.mask[tuple(last[:, j] for j in range(c))]
            law = law * ok
        return law / law.sum(axis=1, keepdims=True)


# --- full-path enumeration ------------------------------------------------------------

@dataclass(eq=False)
class Paths:
    """Enumerated paths after ``t`` steps; column of time tau: x -> tau+m-1, s -> tau+m, y -> tau+u-1."""

    m: int
    u: int
    t: int
    prob: np.ndarray
    x: np.ndarray
    s: np.ndarray
    y: np.ndarray

    def xcols(self, lo: int, hi: int) -> np.ndarray:
        return self.x[:, lo + self.m - 1:hi + self.m]

    def scols(self, lo: int, hi: int) -> np.ndarray:
        return self.s[:, lo + self.m:hi + self.m + 1]

    def ycols(self, lo: int, hi: int) -> np.ndarray:
        return self.y[:, lo + self.u - 1:hi + self.u]


def _initial_paths(channel: ChannelSpec, rs: ContextSpace, u: int) -> Paths:
    prior = alpha_init(channel, rs)
    idx = np.flatnonzero(prior > 0)
    x = rs.x_windows[idx].astype(np.int8)
    s = rs.s_windows[idx].astype(np.int8)
    prob = prior[idx]
    m = rs.m
    y = np.zeros((len(idx), 0), dtype=np.int8)
    W = channel.output_kernel
    Y = channel.num_outputs
    for tau in range(1 - u, 1):
        n = len(prob)
        lik = W[x[:, tau - 1 + m], s[:, tau - 1 + m]]
        prob = (prob[:, None] * lik).ravel()
        x, s, y = (np.repeat(a, Y, axis=0) for a in (x, s, y))
        y = np.column_stack([y, np.tile(np.arange(Y, dtype=np.int8), n)])
        keep = prob > 0
        prob, x, s, y = prob[keep], x[keep], s[keep], y[keep]
    return Paths(m, u, 0, prob, x, s, y)


def _source_laws(channel: ChannelSpec, source, paths: Paths) -> np.ndarray:
    """Input law at time ``t = paths.t + 1`` for every path."""
    t = paths.t + 1
    if isinstance(source, HistorySource):
        u = source.u
        return source.laws(paths.xcols(1 - paths.m, t - 1), paths.scols(-paths.m, t - u - 1),
                           paths.ycols(1 - paths.u, t - u - 1))
    space = source.space
    m, u = space.m, space.u
    # context_{t-1} = (x_{t-m..t-1}, s_{t-1-m..t-1-u})
    xcode = _pack(paths.xcols(t - m, t - 1), space.num_inputs) if m else np.zeros(len(paths.prob), np.int64)
    scode = _pack(paths.scols(t - 1 - m, t - 1 - u), space.num_states)
    ctx = xcode * space.num_states ** space.w + scode
    # alpha_{t-1} = Pr(context_{t-1} | y_{1-u..t-u-1}) by grouping path mass
    ykey = _pack(paths.ycols(1 - u, t - u - 1), channel.num_outputs)
    groups, inv = np.unique(ykey, return_inverse=True)
    inv = inv.ravel()
    alpha = np.zeros((len(groups), space.size))
    np.add.at(alpha, (inv, ctx), paths.prob)
    alpha /= alpha.sum(axis=1, keepdims=True)
    rows = np.stack([source.row(a) for a in alpha])
    return rows[inv, ctx]


def _extend(channel: ChannelSpec, paths: Paths, laws: np.ndarray) -> Paths:
    P, W = channel.state_transition, channel.output_kernel
    X, S, Y = channel.num_inputs, channel.num_states, channel.num_outputs
    sp = paths.s[:, -1].astype(np.int64)
    # weight[n, x, y, s]
    w = (paths.prob[:, None, None, None] * laws[:, :, None, None]
         * W[:, sp, :].transpose(1, 0, 2)[:, :, :, None] * P[sp][:, None, None, :])
    n = len(paths.prob)
    flat = w.reshape(n, -1)
    rows, combo = np.nonzero(flat > 0)
    xn, yn, sn = np.unravel_index(combo, (X, Y, S))
    return Paths(paths.m, paths.u, paths.t + 1, flat[rows, combo],
                 np.column_stack([paths.x[rows], xn.astype(np.int8)]),
                 np.column_stack([paths.s[rows], sn.astype(np.int8)]),
                 np.column_stack([paths.y[rows], yn.astype(np.int8)]))


def _check_budget(count: float, budget: int) -> None:
    if count > budget:
        raise EnumerationTooLarge(f"enumeration needs about {count:.3g} terms > budget {budget}")


def enumerate_paths(channel: ChannelSpec, source, T: int, budget: int = ENUM_BUDGET):
    """Yield the enumerated paths after each of the steps ``1..T``."""
    m = source.m if isinstance(source, HistorySource) else source.space.m
    u = source.u if isinstance(source, HistorySource) else source.space.u
    rs = ContextSpace(channel.num_inputs, channel.num_states, m, 0, channel.constraint)
    X, S, Y = channel.num_inputs, channel.num_states, channel.num_outputs
    _check_budget(rs.size * Y ** u * float(X * Y * S) ** T, budget)
    paths = _initial_paths(channel, rs, u)
    for _ in range(T):
        paths = _extend(channel, paths, _source_laws(channel, source, paths))
        yield paths


def _window_key(paths: Paths, v: int, X: int, S: int) -> np.ndarray:
    t = paths.t
    return _pack(np.column_stack([paths.xcols(t - v, t), paths.scols(t - v - 1, t - v - 1)]), max(X, S))


def directed_info_terms(channel: ChannelSpec, source, v: int, N: int,
                        budget: int = ENUM_BUDGET) -> tuple[np.ndarray, np.ndarray]:
    """Per-step terms ``I(X_{t-v..t}, S_{t-v-1}; Y_t | Y^{t-1})`` and the full-history
    ``I(X_{1-m..t}, S_{-m..t-v-1}; Y_t | Y^{t-1})`` for ``t = 1..N``."""
    X, S, Y = channel.num_inputs, channel.num_states, channel.num_outputs
    window, full = np.zeros(N), np.zeros(N)
    for paths in enumerate_paths(channel, source, N, budget):
        t = paths.t
        c_key = _pack(paths.ycols(1 - paths.u, t - 1), Y)
        yt = paths.y[:, -1].astype(np.int64)
        window[t - 1] = cond_mutual_info_paths(_window_key(paths, v, X, S), c_key, yt, paths.prob)
        f_key = _combine(_pack(paths.xcols(1 - paths.m, t), X), _pack(paths.scols(-paths.m, t - v - 1), S))
        full[t - 1] = cond_mutual_info_paths(f_key, c_key, yt, paths.prob)
    return window, full


# --- merged enumeration for the truncated-window rate ------------------------------------

def exact_directed_info(channel: ChannelSpec, source, u: int, v: int, N: int, full: bool = False,
                        budget: int = ENUM_BUDGET) -> float:
    """Exact ``sum_{t=1}^N I(X_{t-v..t}, S_{t-v-1}; Y_t | Y^{t-1})`` in bits.

    With ``full=True`` the full-history form is summed instead (needs full-path enumeration).
    """
    space_u = source.u if isinstance(source, HistorySource) else source.space.u
    m = source.m if isinstance(source, HistorySource) else source.space.m
    if space_u != u or not u <= v <= m:
        raise DelayMismatch(f"source (u={space_u}, m={m}) cannot be evaluated with u={u}, v={v}")
    if full or isinstance(source, HistorySource):
        window, hist = directed_info_terms(channel, source, v, N, budget)
        return float((hist if full else window).sum())
    return float(_merged_terms(channel, source, v, N, budget).sum())


def _merged_terms(channel: ChannelSpec, source, v: int, N: int, budget: int) -> np.ndarray:
    space = source.space
    u, m = space.u, space.m
    P, W = channel.state_transition, channel.output_kernel
    X, S, Y = channel.num_inputs, channel.num_states, channel.num_outputs
    rs = receiver_space(space)
    prior, proj, slast, succ_r, akey, xw, sw = _receiver_tables(channel, space, v)
    _check_budget(float(Y) ** (N + u) * rs.size * X * Y * S, budget)
    # initial states: receiver context and outputs y_{1-u..0}
    rc = np.flatnonzero(prior > 0)
    prob = prior[rc]
    ykey = np.zeros(len(rc), dtype=np.int64)
    for tau in range(1 - u, 1):
        lik = W[xw[rc, tau - 1 + m], sw[rc, tau - 1 + m]]          # (n, Y)
        prob = (prob[:, None] * lik).ravel()
        rc = np.repeat(rc, Y)
        ykey = (np.repeat(ykey, Y) * Y + np.tile(np.arange(Y), len(ykey)))
        keep = prob > 0
        prob, rc, ykey = prob[keep], rc[keep], ykey[keep]
    terms = np.zeros(N)
    for t in range(1, N + 1):
        # alpha_{t-1} from mass grouped by y_{1-u..t-u-1}
        hist = ykey // Y ** u
        groups, inv = np.unique(hist, return_inverse=True)
        inv = inv.ravel()
        alpha = np.zeros((len(groups), space.size))
        np.add.at(alpha, (inv, proj[rc]), prob)
        alpha /= alpha.sum(axis=1, keepdims=True)
        rows = np.stack([source.row(a) for a in alpha])
        law = rows[inv, proj[rc]]                                   # (n, X)
        sp = slast[rc]
        w = (prob[:, None, None, None] * law[:, :, None, None]
             * W[:, sp, :].transpose(1, 0, 2)[:, :, :, None] * P[sp][:, None, None, :])
        n = len(prob)
        flat = w.reshape(n, -1)
        r, combo = np.nonzero(flat > 0)
        xn, yn, sn = np.unravel_index(combo, (X, Y, S))
        pn = flat[r, combo]
        a_key = akey[rc[r]] * X + xn
        terms[t - 1] = cond_mutual_info_paths(a_key, ykey[r], yn, pn)
        new_rc = succ_r[rc[r], xn, sn]
        new_y = ykey[r] * Y + yn
        key = new_y * rs.size + new_rc
        uniq, inv2 = np.unique(key, return_inverse=True)
        prob = np.bincount(inv2.ravel(), weights=pn)
        ykey, rc = uniq // rs.size, uniq % rs.size
    return terms


# --- identity checks ---------------------------------------------------------------

def factorization_deviation(channel: ChannelSpec, source: HistorySource, T: int,
                           budget: int = ENUM_BUDGET) -> float:
    """Max over ``t`` and positive-probability events of
    ``|Pr(y_t, s_t | x^{t+u}, s^{t-1}, y^{t-1}) - Pr(y_t, s_t | x_t, s_{t-1})|``."""
    u = source.u
    X, S, Y = channel.num_inputs, channel.num_states, channel.num_outputs
    P, W = channel.state_transition, channel.output_kernel
    last = None
    for paths in enumerate_paths(channel, source, T + u, budget):
        last = paths
    worst = 0.0
    paths = last
    for t in range(1, T + 1):
        cond = _combine(_pack(paths.xcols(1 - paths.m, t + u), X), _pack(paths.scols(-paths.m, t - 1), S),
                        _pack(paths.ycols(1 - paths.u, t - 1), Y))
        yt = paths.ycols(t, t)[:, 0].astype(np.int64)
        st = paths.scols(t, t)[:, 0].astype(np.int64)
        joint = _combine(cond, yt * S + st)
        pc = np.bincount(cond, weights=paths.prob)
        pj = np.bincount(joint, weights=paths.prob)
        emp = pj[joint] / pc[cond]
        xt = paths.xcols(t, t)[:, 0].astype(np.int64)
        sp = paths.scols(t - 1, t - 1)[:, 0].astype(np.int64)
        law = W[xt, sp, yt] * P[sp, st]
        worst = max(worst, float(np.abs(emp - law).max()))
    return worst


def brute_force_beliefs(channel: ChannelSpec, source, T: int, budget: int = ENUM_BUDGET) -> list[dict]:
    """For ``t = 1..T``: map from output history ``y_{1-u..t-u}`` to ``Pr(context_t | history)``."""
    space = source.space
    m, u = space.m, space.u
    out = []
    for paths in enumerate_paths(channel, source, T, budget):
        t = paths.t
        xcode = _pack(paths.xcols(t - m + 1, t), space.num_inputs) if m else np.zeros(len(paths.prob), np.int64)
        scode = _pack(paths.scols(t - m, t - u), space.num_states)
        ctx = xcode * space.num_states ** space.w + scode
        hist = paths.ycols(1 - u, t - u)
        groups, first, inv = np.unique(_pack(hist, channel.num_outputs), return_index=True, return_inverse=True)
        alpha = np.zeros((len(groups), space.size))
        np.add.at(alpha, (inv.ravel(), ctx), paths.prob)
        alpha /= alpha.sum(axis=1, keepdims=True)
        out.append({tuple(int(a) for a in hist[i]): alpha[g] for g, i in enumerate(first)})
    return out

"""Monte Carlo estimation of directed-information rates.

One trajectory is simulated with the transmitter's delayed belief maintained by
the forward filter.  Alongside, a receiver-side filter ``gamma_t`` tracks
``Pr(x_{t-m+1..t}, s_{t-m..t} | y^t)`` so that both terms of

    log2 Pr(y_t | x_{t-v..t}, s_{t-v-1}, y^{t-1}) - log2 Pr(y_t | y^{t-1})

are exact for the simulated source.  Outputs before time 1 (``y_{1-u..0}``) are
drawn from the channel and included in the conditioning.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from numba import njit

from .belief import alpha_init, filter_tables
from .channel import ChannelSpec
from .contexts import ContextSpace
from .dp import _quantize_rank, _simplex_rows, _steps
from .errors import DelayMismatch, ImpossibleObservation, PolicySpaceTooLarge
from .sources import MarkovSource, input_markov_source

N_BATCHES = 100
TERM_BOUND = 50.0
WINDOW, PLAIN = 0, 1


@dataclass(frozen=True)
class RateEstimate:
    mean: float
    std_error: float
    sample_count: int
    burn_in: int
    seed: int

    def __str__(self) -> str:
        return f"{self.mean:.6f} +/- {self.std_error:.6f} bits/use (N={self.sample_count})"


@dataclass(frozen=True, eq=False)
class Trajectory:
    x: np.ndarray           # x_1..x_N
    s: np.ndarray           # s_0..s_N
    y: np.ndarray           # y_1..y_N
    alpha: np.ndarray       # alpha_0..alpha_N (source belief); empty unless recorded
    terms: np.ndarray       # per-step information terms


# --- kernel ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _draw(p, u):
    acc = 0.0
    n = p.size
    for i in range(n):
        acc += p[i]
        if u < acc:
            return i
    # u landed in the rounding gap above the cumulative sum; take the last positive entry
    for i in range(n - 1, -1, -1):
        if p[i] > 0.0:
            return i
    return n - 1


@njit(cache=True, nogil=True)
def _source_rows(kind, alpha, rows_tab, K, adm, ntab, smw, smb, allowed, out, k, res, used):
    Ms, X = out.shape
    if kind == 1:
        for l in range(Ms):
            mx = -np.inf
            for x in range(X):
                if allowed[l, x]:
                    z = smb[l, x]
                    for j in range(Ms):
                        z += smw[l, x, j] * alpha[j]
                    out[l, x] = z
                    if z > mx:
                        mx = z
            tot = 0.0
            for x in range(X):
                if allowed[l, x]:
                    out[l, x] = np.exp(out[l, x] - mx)
                    tot += out[l, x]
                else:
                    out[l, x] = 0.0
            for x in range(X):
                out[l, x] /= tot
    else:
        g = 0
        if K > 0:
            g = _quantize_rank(alpha, 0, 1, 1.0, K, adm, ntab, k, res, used)
        out[:, :] = rows_tab[g]


@njit(cache=True, nogil=True)
def _simulate(P, W, stat, u, v, m, mode, unif, T,
              succ_s, kern_s, alpha0,
              kind, rows_tab, K, adm, ntab, smw, smb, allowed,
              prior_r, proj_r, slast_r, succ_r, akey_r, xw_r, sw_r,
              record, xs, ss, ys, apath, terms):
    """Simulate ``T`` steps; returns 0 on success, 1 on an impossible output, 2 on an unbounded term."""
    S = P.shape[0]
    X = W.shape[0]
    Y = W.shape[2]
    Ms = alpha0.size
    Mr = prior_r.size
    off = m + 1
    s_hist = np.zeros(T + off + 1, dtype=np.int64)
    y_hist = np.zeros(T + off + 1, dtype=np.int64)
    pos = 0
    # context before time 1 and the outputs y_{1-u..0}
    rc = _draw(prior_r, unif[pos])
    pos += 1
    for j in range(m + 1):
        s_hist[off - m + j] = sw_r[rc, j]            # s_{-m..0}
    gamma = prior_r.copy()
    for tau in range(1 - u, 1):
        xt = xw_r[rc, tau - 1 + m]
        sp = sw_r[rc, tau - 1 + m]
        yt = _draw(W[xt, sp], unif[pos])
        pos += 1
        y_hist[off + tau] = yt
        for l in range(Mr):
            gamma[l] *= W[xw_r[l, tau - 1 + m], sw_r[l, tau - 1 + m], yt]
    tot = gamma.sum()
    if tot < 1e-300:
        return 1
    gamma /= tot
    cs = proj_r[rc]
    alpha = alpha0.copy()
    beta = stat.copy()
    rows = np.zeros((Ms, X))
    k = np.zeros(Ms, dtype=np.int64)
    res = np.zeros(adm.size)
    used = np.zeros(adm.size, dtype=np.bool_)
    new_gamma = np.zeros(Mr)
    new_alpha = np.zeros(Ms)
    if record:
        apath[0] = alpha
        ss[0] = s_hist[off]
    for t in range(1, T + 1):
        _source_rows(kind, alpha, rows_tab, K, adm, ntab, smw, smb, allowed, rows, k, res, used)
        x = _draw(rows[cs], unif[pos])
        s_prev = s_hist[off + t - 1]
        y = _draw(W[x, s_prev], unif[pos + 1])
        s = _draw(P[s_prev], unif[pos + 2])
        pos += 3
        s_hist[off + t] = s
        y_hist[off + t] = y
        # information term
        den = 0.0
        num = 0.0
        num_tot = 0.0
        key = akey_r[rc]
        for l in range(Mr):
            g = gamma[l]
            if g == 0.0:
                continue
            pl = proj_r[l]
            sl = slast_r[l]
            for xx in range(X):
                w = g * rows[pl, xx]
                if w == 0.0:
                    continue
                den += w * W[xx, sl, y]
                if mode == 0 and xx == x and akey_r[l] == key:
                    num += w * W[xx, sl, y]
                    num_tot += w
        if mode == 1:
            num = 0.0
            for sb in range(S):
                num += beta[sb] * W[x, sb, y]
            num_tot = 1.0
        if den < 1e-300 or num <= 0.0:
            return 1
        term = math.log2(num / num_tot) - math.log2(den)
        if not (-TERM_BOUND <= term <= math.log2(Y) + TERM_BOUND):
            return 2
        terms[t - 1] = term
        # receiver filter
        new_gamma[:] = 0.0
        for l in range(Mr):
            g = gamma[l]
            if g == 0.0:
                continue
            pl = proj_r[l]
            sl = slast_r[l]
            for xx in range(X):
                w = g * rows[pl, xx] * W[xx, sl, y]
                if w == 0.0:
                    continue
                for sn in range(S):
                    if P[sl, sn] > 0.0:
                        new_gamma[succ_r[l, xx, sn]] += w * P[sl, sn]
        tot = new_gamma.sum()
        gamma[:] = new_gamma / tot
        if mode == 1:
            nb = np.zeros(S)
            for sb in range(S):
                wb = beta[sb] * W[x, sb, y]
                for sn in range(S):
                    nb[sn] += wb * P[sb, sn]
            beta = nb / nb.sum()
        # transmitter context and delayed belief
        cs_old = cs
        cs = succ_s[cs_old, x, s_hist[off + t - u]]
        rc = succ_r[rc, x, s]
        yd = y_hist[off + t - u]
        new_alpha[:] = 0.0
        for i in range(Ms):
            a = alpha[i]
            if a == 0.0:
                continue
            for xx in range(X):
                w = a * rows[i, xx]
                if w == 0.0:
                    continue
                for sn in range(S):
                    kv = kern_s[i, xx, sn, yd]
                    if kv > 0.0:
                        new_alpha[succ_s[i, xx, sn]] += w * kv
        tot = new_alpha.sum()
        if tot < 1e-300:
            return 1
        alpha[:] = new_alpha / tot
        if record:
            xs[t - 1] = x
            ys[t - 1] = y
            ss[t] = s
            apath[t] = alpha
    return 0



# --- python side ----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class _Prepared:
    args_head: tuple
    args_tail: tuple
    u: int
    m: int


def receiver_space(source_space: ContextSpace) -> ContextSpace:
    """Context space ``(m, u=0)`` matching a source space: the receiver filter's domain."""
    sp = source_space
    return ContextSpace(sp.num_inputs, sp.num_states, sp.m, 0, sp.constraint)


def _receiver_tables(channel: ChannelSpec, src: ContextSpace, v: int):
    rs = receiver_space(src)
    m, w_src = src.m, src.w
    # receiver state window s_{t-1-m..t-1}; the source keeps the oldest w_src of them
    sw = rs.s_windows
    xw = rs.x_windows
    s_radix = src.num_states ** w_src
    xcode = np.arange(rs.size) // rs.num_states ** rs.w
    scode = np.zeros(rs.size, dtype=np.int64)
    for j in range(w_src):
        scode = scode * src.num_states + sw[:, j]
    proj = xcode * s_radix + scode
    slast = sw[:, -1].copy()
    # identify (x_{t-v..t-1}, s_{t-v-1}) by a single integer
    akey = np.zeros(rs.size, dtype=np.int64)
    for j in range(m - v, m):
        akey = akey * rs.num_inputs + xw[:, j]
    akey = akey * rs.num_states + sw[:, m - v]
    prior = alpha_init(channel, rs)
    return (prior, proj.astype(np.int64), slast.astype(np.int64), rs.successor, akey,
            xw.astype(np.int64), sw.astype(np.int64))


@dataclass(frozen=True, eq=False)
class ReceiverBelief:
    """``gamma(l) = Pr(receiver context l | y^t)`` on the ``(m, u=0)`` space of a source.

    Plain numpy version of the filter run inside the simulation kernel.  The
    receiver context holds ``x_{t-m+1..t}`` and ``s_{t-m..t}``.
    """

    channel: ChannelSpec
    source_space: ContextSpace
    gamma: np.ndarray

    @classmethod
    def initial(cls, channel: ChannelSpec, source_space: ContextSpace, y_pre=()) -> ReceiverBelief:
        """Prior at time 0 conditioned on the outputs ``y_{1-u..0}``."""
        prior, _, _, _, _, xw, sw = _receiver_tables(channel, source_space, 0)
        m = source_space.m
        gamma = prior.copy()
        for j, y in enumerate(y_pre):
            tau = 1 - len(y_pre) + j
            gamma = gamma * channel.output_kernel[xw[:, tau - 1 + m], sw[:, tau - 1 + m], y]
        return cls(channel, source_space, _normalized(gamma))

    def _weights(self, rows: np.ndarray) -> np.ndarray:
        """``Pr(l, x_t, y_t | y^{t-1})`` as an ``(Mr, X, Y)`` array; ``rows`` is the source's (Ms, X) law."""
        _, proj, slast, *_ = _receiver_tables(self.channel, self.source_space, 0)
        W = self.channel.output_kernel
        return self.gamma[:, None, None] * rows[proj][:, :, None] * W[:, slast, :].transpose(1, 0, 2)

    def predictive(self, rows: np.ndarray) -> np.ndarray:
        """``Pr(y_t | y^{t-1})``."""
        return self._weights(rows).sum(axis=(0, 1))

    def window_predictive(self, rows: np.ndarray, v: int, x: int, key: int) -> np.ndarray:
        """``Pr(y_t | x_{t-v..t}, s_{t-v-1}, y^{t-1})`` for the window identified by ``key``."""
        akey = _receiver_tables(self.channel, self.source_space, v)[4]
        wts = self._weights(rows)[akey == key, x, :].sum(axis=0)
        return wts / wts.sum()

    def update(self, rows: np.ndarray, y: int) -> ReceiverBelief:
        succ = receiver_space(self.source_space).successor
        P = self.channel.state_transition
        _, _, slast, *_ = _receiver_tables(self.channel, self.source_space, 0)
        wts = self._weights(rows)[:, :, y]
        new = np.zeros_like(self.gamma)
        for sn in range(P.shape[0]):
            np.add.at(new, succ[:, :, sn], wts * P[slast, sn][:, None])
        return ReceiverBelief(self.channel, self.source_space, _normalized(new))


def _normalized(vec: np.ndarray) -> np.ndarray:
    tot = vec.sum()
    if tot < 1e-300:
        raise ImpossibleObservation("observed output has zero probability")
    return vec / tot


def _prepare(channel: ChannelSpec, source, u: int, v: int, mode: int) -> _Prepared:
    space = source.space
    if space.u != u:
        raise DelayMismatch(f"source was built for feedback delay {space.u}, not u={u}")
    if not u <= v <= space.m:
        raise DelayMismatch(f"need u <= v <= m, got u={u}, v={v}, m={space.m}")
    tab = filter_tables(channel, space)
    kind, rows_tab, smw, smb, K = source.kernel_tables()
    if K > 0:
        grid = source.grid
        adm, ntab = grid.adm_index, grid.ntab
    else:
        adm, ntab = np.flatnonzero(space.admissible).astype(np.int64), np.zeros((1, 1), dtype=np.int64)
    head = (channel.state_transition, channel.output_kernel, channel.stationary, u, v, space.m, mode)
    tail = (space.successor, tab.kernel, alpha_init(channel, space),
            kind, np.ascontiguousarray(rows_tab), K, adm, ntab,
            np.ascontiguousarray(smw), np.ascontiguousarray(smb), space.allowed_inputs.copy(),
            *_receiver_tables(channel, space, v))
    return _Prepared(head, tail, u, space.m)


def _run(prep: _Prepared, T: int, rng: np.random.Generator, record: bool):
    unif = rng.random(1 + prep.u + 3 * T)
    Ms = prep.args_tail[2].size
    if record:
        xs, ss, ys = np.zeros(T, np.int64), np.zeros(T + 1, np.int64), np.zeros(T, np.int64)
        apath = np.zeros((T + 1, Ms))
    else:
        xs = ss = ys = np.zeros(1, np.int64)
        apath = np.zeros((1, Ms))
    terms = np.zeros(T)
    status = _simulate(*prep.args_head, unif, T, *prep.args_tail, record, xs, ss, ys, apath, terms)
    if status == 1:
        raise AssertionError("simulation produced a zero-probability event")
    if status == 2:
        raise AssertionError("information term outside its sanity band")
    return xs, ss, ys, apath, terms


def simulate(channel: ChannelSpec, source, N: int, seed: int, v: int | None = None) -> Trajectory:
    """Simulate ``N`` channel uses; the belief path has ``N + 1`` entries."""
    if N < 1:
        raise ValueError("N must be positive")
    u = source.space.u
    prep = _prepare(channel, source, u, u if v is None else v, WINDOW)
    xs, ss, ys, apath, terms = _run(prep, N, np.random.default_rng(seed), True)
    return Trajectory(xs, ss, ys, apath, terms)


def batch_means(samples: np.ndarray, n_batches: int = N_BATCHES) -> tuple[float, float]:
    """Mean and batch-means standard error."""
    samples = np.asarray(samples, dtype=float)
    mean = float(samples.mean())
    n_batches = min(n_batches, samples.size)
    if n_batches < 2:
        return mean, float("inf")
    size = samples.size // n_batches
    means = samples[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return mean, float(means.std(ddof=1) / math.sqrt(n_batches))


def directed_info_rate(channel: ChannelSpec, source, u: int, v: int, N: int = 1_000_000,
                       burn_in: int = 1_000, seed: int = 0) -> RateEstimate:
    prep = _prepare(channel, source, u, v, WINDOW)
    *_, terms = _run(prep, burn_in + N, np.random.default_rng(seed), False)
    mean, se = batch_means(terms[burn_in:])
    return RateEstimate(mean, se, N, burn_in, seed)


def finite_horizon_rate(channel: ChannelSpec, source, u: int, v: int, N: int, trials: int,
                        seed: int = 0) -> RateEstimate:
    """Average of ``(1/N) * sum_t term_t`` over independent length-``N`` runs."""
    prep = _prepare(channel, source, u, v, WINDOW)
    rng = np.random.default_rng(seed)
    totals = np.array([_run(prep, N, rng, False)[-1].sum() / N for _ in range(trials)])
    return RateEstimate(float(totals.mean()), float(totals.std(ddof=1) / math.sqrt(trials)), N, 0, seed)


def mutual_info_rate(channel: ChannelSpec, source: MarkovSource, N: int = 1_000_000,
                     burn_in: int = 1_000, seed: int = 0) -> RateEstimate:
    """Estimate of ``lim I(X^N; Y^N) / N`` for a source without feedback or state information."""
    if source.space.u != 0:
        raise DelayMismatch("plain mutual information needs a source space with u = 0")
    prep = _prepare(channel, source, 0, 0, PLAIN)
    *_, terms = _run(prep, burn_in + N, np.random.default_rng(seed), False)
    mean, se = batch_means(terms[burn_in:])
    return RateEstimate(mean, se, N, burn_in, seed)


def _markov_laws(channel: ChannelSpec, order: int, step: float) -> list[np.ndarray]:
    """Candidate input laws per input window (lowest index first); windows that
    violate the constraint get a single placeholder law."""
    L = _steps(step, "param_grid_step")
    con = channel.constraint
    X = channel.num_inputs
    per_window = []
    for code in range(X ** order):
        xs = tuple(int(a) for a in np.unravel_index(code, (X,) * order)) if order else ()
        if con.window_ok(xs):
            allowed = np.array([con.allowed(xs, x) for x in range(X)])
            per_window.append(_simplex_rows(allowed, L))
        else:
            per_window.append(np.eye(X)[:1])
    return per_window


def markov_lower_bound(channel: ChannelSpec, order: int, param_grid_step: float, N: int = 1_000_000,
                       seed: int = 0, burn_in: int = 1_000, search_N: int | None = None,
                       budget: int = 100_000) -> tuple[RateEstimate, np.ndarray]:
    """Best stationary input-Markov source of the given order on a parameter grid.

    Candidates are compared on common random numbers with ``search_N`` steps; the
    winner is re-evaluated with ``N`` steps and a fresh seed.  Returns the estimate
    and the winning ``(|X|^order, |X|)`` law table.
    """
    if order < channel.constraint.memory:
        raise ValueError(f"order {order} below the constraint memory {channel.constraint.memory}")
    per_window = _markov_laws(channel, order, param_grid_step)
    sizes = [len(r) for r in per_window]
    total = math.prod(sizes)
    if total > budget:
        raise PolicySpaceTooLarge(f"{total} Markov sources on the grid > budget {budget}")
    search_N = search_N or max(10_000, N // 10)
    best, best_laws = -np.inf, None
    for c in range(total):
        digits = np.unravel_index(c, sizes)
        laws = np.array([per_window[j][d] for j, d in enumerate(digits)])
        est = mutual_info_rate(channel, input_markov_source(channel, order, laws), search_N, burn_in, seed)
        if est.mean > best:
            best, best_laws = est.mean, laws
    final = mutual_info_rate(channel, input_markov_source(channel, order, best_laws), N, burn_in, seed + 1)
    return final, best_laws


def timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, int(round(1000 * (time.perf_counter() - t0)))

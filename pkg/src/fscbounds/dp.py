"""Quantized value iteration over the belief simplex.

The belief ``alpha`` lives on a uniform grid with step ``delta``; candidate policies
are products of per-context input laws on an ``eta`` grid.  Each backup is

    J_k(a) = max_row [ Phi(a, row) + sum_y Pr(y | a, row) J_{k-1}(q(F(a, row, y))) ]

with ``q`` the simplex quantizer and ``F`` the filter update.  Ties go to the lowest
candidate index everywhere.

Grid points are stored as integer counts (units of ``delta``) in lexicographic
order, first coordinate most significant, so a point's position is its rank among
compositions and lookups need no search.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from numba import njit

from .belief import ZERO_MASS, alpha_update, disturbance_dist, filter_tables
from .channel import ChannelSpec
from .contexts import ORDERING_VERSION, ContextSpace, context_space
from .errors import DelayMismatch, DigestMismatch, GridTooLarge, PolicySpaceTooLarge
from .info import reward_maps, stage_reward

log = logging.getLogger(__name__)

GRID_BUDGET = 10_000_000
POLICY_BUDGET = 10_000_000
HULL_TOL = 1e-9
FORMAT_VERSION = 1


def _steps(step: float, what: str) -> int:
    k = int(round(1.0 / step))
    if k < 1 or abs(k * step - 1.0) > 1e-9:
        raise ValueError(f"1/{what} must be an integer, got {what}={step!r}")
    return k


# --- quantizer ----------------------------------------------------------------------

def quantize_counts(alpha, K: int, admissible=None) -> np.ndarray:
    """Nearest grid point in integer units ``1/K``; works on one vector or a batch.

    Coordinates are rounded to the nearest integer (halves to even), then the
    sum is repaired by moving the coordinates with the largest rounding error one
    unit each, ties to the lowest index.
    """
    a = np.atleast_2d(np.asarray(alpha, dtype=float))
    n, M = a.shape
    scaled = a * K
    k = np.rint(scaled).astype(np.int64)
    mask = np.ones(M, dtype=bool) if admissible is None else np.asarray(admissible, dtype=bool)
    k[:, ~mask] = 0
    deficit = K - k.sum(axis=1)
    for sign in (1, -1):
        rows = np.flatnonzero(sign * deficit > 0)
        if rows.size == 0:
            continue
        res = sign * (scaled[rows] - k[rows])
        res[:, ~mask] = -np.inf
        order = np.argsort(-res, axis=1, kind="stable")
        rank = np.empty_like(order)
        np.put_along_axis(rank, order, np.arange(M)[None, :].repeat(rows.size, axis=0), axis=1)
        k[rows] += sign * (rank < (sign * deficit[rows])[:, None])
    return k[0] if np.ndim(alpha) == 1 else k


def quantize(alpha, delta: float, admissible=None) -> np.ndarray:
    K = _steps(delta, "delta")
    return quantize_counts(alpha, K, admissible) / K


# --- grid ---------------------------------------------------------------------------

def composition_count(total: int, parts: int) -> int:
    if parts == 0:
        return 1 if total == 0 else 0
    return math.comb(total + parts - 1, parts - 1)


@lru_cache(maxsize=32)
def _compositions(total: int, parts: int) -> np.ndarray:
    """All compositions of ``total`` into ``parts`` nonnegative parts, lexicographic."""
    if parts == 1:
        return np.array([[total]], dtype=np.int32)
    blocks = []
    for first in range(total + 1):
        rest = _compositions(total - first, parts - 1)
        blocks.append(np.column_stack([np.full(len(rest), first, dtype=np.int32), rest]))
    out = np.vstack(blocks)
    out.setflags(write=False)
    return out


def _count_table(K: int, n: int) -> np.ndarray:
    tab = np.zeros((K + 1, n + 1), dtype=np.int64)
    for r in range(K + 1):
        for p in range(n + 1):
            tab[r, p] = composition_count(r, p)
    return tab


@njit(cache=True, nogil=True)
def _rank(k, adm, ntab, K):
    n = adm.size
    rank = 0
    rem = K
    for i in range(n - 1):
        ki = k[adm[i]]
        rank += ntab[rem, n - i] - ntab[rem - ki, n - i]
        rem -= ki
    return rank


@dataclass(frozen=True, eq=False)
class SimplexGrid:
    """Grid points ``counts / K`` with zero mass off the admissible coordinates."""

    num_coords: int
    delta: float
    K: int
    admissible: np.ndarray
    counts: np.ndarray                   # (G, M) int32, lexicographic
    adm_index: np.ndarray = field(repr=False)
    ntab: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return self.counts.shape[0]

    @property
    def points(self) -> np.ndarray:
        return self.counts / self.K

    def index_of(self, counts) -> int:
        counts = np.asarray(counts, dtype=np.int64)
        if counts.sum() != self.K or np.any(counts < 0) or np.any(counts[~self.admissible]):
            raise ValueError("not a grid point")
        return int(_rank(counts, self.adm_index, self.ntab, self.K))

    def lookup(self, alpha) -> int:
        """Grid index of the quantized belief."""
        return self.index_of(quantize_counts(alpha, self.K, self.admissible))


def enumerate_grid(num_coords: int, delta: float, admissible=None, budget: int = GRID_BUDGET) -> SimplexGrid:
    """All compositions of ``1/delta`` over the admissible coordinates."""
    K = _steps(delta, "delta")
    adm = np.ones(num_coords, dtype=bool) if admissible is None else np.asarray(admissible, dtype=bool).copy()
    n_adm = int(adm.sum())
    if n_adm == 0:
        raise ValueError("no admissible coordinates")
    count = composition_count(K, n_adm)
    if count > budget:
        raise GridTooLarge(f"grid with M_adm={n_adm}, delta={delta} has {count} points > budget {budget}")
    comps = _compositions(K, n_adm)
    counts = np.zeros((count, num_coords), dtype=np.int32)
    counts[:, adm] = comps
    adm_index = np.flatnonzero(adm).astype(np.int64)
    for a in (adm, counts, adm_index):
        a.setflags(write=False)
    return SimplexGrid(num_coords, float(delta), K, adm, counts, adm_index, _count_table(K, n_adm))


def grid_for_space(space: ContextSpace, delta: float, budget: int = GRID_BUDGET) -> SimplexGrid:
    return enumerate_grid(space.size, delta, space.admissible, budget)


# --- policy candidates --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PolicyCandidates:
    """Product set of per-context input laws; candidate ``c`` is a mixed-radix number
    over the free contexts, first free context most significant."""

    space: ContextSpace
    eta: float
    context_rows: tuple                 # per context, (R_l, X) array of input laws
    free: np.ndarray                    # indices of contexts with more than one row
    radices: np.ndarray

    def __len__(self) -> int:
        return int(np.prod(self.radices, dtype=np.int64)) if self.free.size else 1

    def digits(self, index: int) -> np.ndarray:
        out = np.zeros(self.free.size, dtype=np.int64)
        for j in range(self.free.size - 1, -1, -1):
            index, out[j] = divmod(int(index), int(self.radices[j]))
        return out

    def index_from_digits(self, digits) -> int:
        idx = 0
        for d, r in zip(digits, self.radices):
            idx = idx * int(r) + int(d)
        return idx

    def row(self, index: int) -> np.ndarray:
        if not 0 <= index < len(self):
            raise IndexError(f"candidate {index} out of range")
        out = np.array([rows[0] for rows in self.context_rows])
        for ctx, d in zip(self.free, self.digits(index)):
            out[ctx] = self.context_rows[ctx][d]
        return out

    def __iter__(self):
        for c in range(len(self)):
            yield self.row(c)


def _simplex_rows(allowed: np.ndarray, L: int) -> np.ndarray:
    """Input laws on the ``1/L`` grid over the allowed inputs; row 0 puts all mass on
    the first allowed input and the last allowed input's mass increases slowest-first."""
    idx = np.flatnonzero(allowed)
    comps = _compositions(L, idx.size)[:, ::-1]     # reversed: row 0 = (L, 0, ..., 0)
    rows = np.zeros((len(comps), allowed.size))
    rows[:, idx] = comps / L
    return rows


def enumerate_policies(space: ContextSpace, eta: float, budget: int = POLICY_BUDGET) -> PolicyCandidates:
    L = _steps(eta, "eta")
    allowed = space.allowed_inputs
    rows, free = [], []
    for ctx in range(space.size):
        if space.admissible[ctx]:
            r = _simplex_rows(allowed[ctx], L)
        else:
            first = int(np.flatnonzero(allowed[ctx])[0]) if allowed[ctx].any() else 0
            r = np.zeros((1, space.num_inputs))
            r[0, first] = 1.0
        r.setflags(write=False)
        rows.append(r)
        if len(r) > 1:
            free.append(ctx)
    radices = np.array([len(rows[c]) for c in free], dtype=np.int64)
    total = math.prod(int(r) for r in radices)
    if total > budget:
        raise PolicySpaceTooLarge(f"{total} joint policy candidates > budget {budget}")
    return PolicyCandidates(space, float(eta), tuple(rows), np.array(free, dtype=np.int64), radices)


# --- reference backup ----------------------------------------------------------------

def _successor_index(channel, space, grid, alpha, row, y) -> int:
    return grid.lookup(alpha_update(channel, space, alpha, row, y))


def bellman_backup(channel: ChannelSpec, space: ContextSpace, grid: SimplexGrid, J_prev, grid_point: int,
                   candidates: PolicyCandidates, u: int, v: int) -> tuple[float, np.ndarray, int]:
    """One backup at one grid point by exhaustive search; returns (value, row, candidate index)."""
    alpha = grid.points[grid_point]
    J_prev = np.asarray(J_prev)
    best, best_c = -np.inf, -1
    for c, row in enumerate(candidates):
        val = stage_reward(channel, space, alpha, row, u, v)
        py = disturbance_dist(channel, space, alpha, row)
        for y, p in enumerate(py):
            if p >= ZERO_MASS:
                val += p * J_prev[_successor_index(channel, space, grid, alpha, row, y)]
        if val > best:
            best, best_c = val, c
    return float(best), candidates.row(best_c), best_c


# --- fast backups ----------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _entropy(vec, lo, hi):
    h = 0.0
    for i in range(lo, hi):
        p = vec[i]
        if p > 0.0:
            h -= p * np.log2(p)
    return h


@njit(cache=True, nogil=True)
def _grouped_entropy(vec, lo, hi, group):
    h = 0.0
    for g0 in range(lo, hi, group):
        s = 0.0
        for i in range(g0, g0 + group):
            s += vec[i]
        if s > 0.0:
            h -= s * np.log2(s)
    return h


@njit(cache=True, nogil=True)
def _quantize_rank(T, y, Y, p, K, adm, ntab, k, res, used):
    n = adm.size
    total = 0
    for i in range(n):
        a = T[adm[i] * Y + y] / p * K
        ki = np.rint(a)
        k[adm[i]] = np.int64(ki)
        res[i] = a - ki
        total += k[adm[i]]
    deficit = K - total
    sign = 1
    if deficit < 0:
        sign = -1
        deficit = -deficit
    for i in range(n):
        used[i] = False
    for _ in range(deficit):
        best = -1
        bv = -np.inf
        for i in range(n):
            r = sign * res[i]
            if not used[i] and r > bv:
                bv = r
                best = i
        used[best] = True
        k[adm[best]] += sign
    return _rank(k, adm, ntab, K)


@njit(cache=True, nogil=True)
def _evaluate(feat, M, Y, n_yw, h_lin, K, adm, ntab, phi, p_out, succ, c, k, res, used):
    my = M * Y
    h_full = _entropy(feat, my, my + n_yw)
    h_prev = _grouped_entropy(feat, my, my + n_yw, Y)
    if h_lin:
        hc = feat[my + n_yw]
    else:
        lo = my + n_yw
        hc = _entropy(feat, lo, feat.size) - _grouped_entropy(feat, lo, feat.size, Y)
    val = h_full - h_prev - hc
    phi[c] = val if val > 0.0 else 0.0
    for y in range(Y):
        p = 0.0
        for l in range(M):
            p += feat[l * Y + y]
        if p < 1e-300:
            p_out[c, y] = 0.0
            succ[c, y] = -1
        else:
            p_out[c, y] = p
            succ[c, y] = _quantize_rank(feat, y, Y, p, K, adm, ntab, k, res, used)


@njit(cache=True, nogil=True)
def _sweep(alpha, rf, offsets, radices, active, const, M, Y, n_yw, h_lin, K, adm, ntab, phi, p_out, succ):
    """Evaluate every candidate over the active free contexts (mixed radix, last fastest)."""
    F = active.size
    D = const.size
    digits = np.zeros(F, dtype=np.int64)
    part = np.empty((F + 1, D))
    part[0] = const
    for j in range(F):
        l = active[j]
        part[j + 1] = part[j] + alpha[l] * rf[offsets[l]]
    k = np.zeros(M, dtype=np.int64)
    res = np.zeros(adm.size)
    used = np.zeros(adm.size, dtype=np.bool_)
    c = 0
    while True:
        _evaluate(part[F], M, Y, n_yw, h_lin, K, adm, ntab, phi, p_out, succ, c, k, res, used)
        c += 1
        j = F - 1
        while j >= 0:
            digits[j] += 1
            if digits[j] < radices[active[j]]:
                break
            digits[j] = 0
            j -= 1
        if j < 0:
            break
        for i in range(j, F):
            l = active[i]
            part[i + 1] = part[i] + alpha[l] * rf[offsets[l] + digits[i]]


@njit(cache=True, nogil=True)
def _hull_keep(order, key, x, y, tol):
    """Flag points that can maximise ``y + s*x`` (within tol) for some slope ``s``
    inside each key group; ``order`` sorts by key, then x ascending, then y descending."""
    n = order.size
    keep = np.zeros(n, dtype=np.bool_)
    rep = np.empty(n, dtype=np.int64)        # representative (first point at the same x)
    stack = np.empty(n, dtype=np.int64)
    start = 0
    while start < n:
        end = start
        while end < n and key[order[end]] == key[order[start]]:
            end += 1
        top = 0
        for t in range(start, end):
            i = order[t]
            if t > start and x[i] == x[order[t - 1]]:
                r = rep[order[t - 1]]
                rep[i] = r
                if y[i] >= y[r] - tol:
                    keep[i] = True
                continue
            rep[i] = i
            while top >= 2:
                a = stack[top - 2]
                b = stack[top - 1]
                interp = y[a] + (y[i] - y[a]) * (x[b] - x[a]) / (x[i] - x[a])
                if y[b] < interp - tol:
                    keep[b] = False
                    top -= 1
                else:
                    break
            stack[top] = i
            top += 1
            keep[i] = True
        start = end
    # drop tie-mates whose representative was removed
    for t in range(n):
        i = order[t]
        if keep[i] and not keep[rep[i]]:
            keep[i] = False
    return keep


@dataclass(frozen=True, eq=False)
class _Plan:
    """Pruned candidate transitions, concatenated over grid points."""

    seg_start: np.ndarray
    phi: np.ndarray
    p: np.ndarray
    succ: np.ndarray          # grid index (int32), or G for zero-probability outputs
    cand: np.ndarray          # full candidate index (int32)
    evaluated: int

    def seg_id(self) -> np.ndarray:
        sizes = np.diff(np.append(self.seg_start, len(self.phi)))
        return np.repeat(np.arange(len(self.seg_start)), sizes)


def _features(channel, space, v):
    tab = filter_tables(channel, space)
    maps = reward_maps(channel, space, v)
    MX = space.size * space.num_inputs
    h = maps.cond_entropy[:, None] if maps.cond_entropy is not None else maps.reduced
    F = np.hstack([tab.operator.reshape(MX, -1), maps.y_window, h])
    return F, maps.y_window.shape[1], maps.cond_entropy is not None


def _point_plan(g, grid, cands, rf, offsets, radices_all, free_mask, F_dim, M, Y, n_yw, h_lin, prune):
    alpha = grid.points[g]
    active = np.flatnonzero(free_mask & (alpha > 0))
    const = np.zeros(F_dim)
    for l in np.flatnonzero(~free_mask | (alpha == 0)):
        if alpha[l] > 0:
            const += alpha[l] * rf[offsets[l]]
    n = int(np.prod(radices_all[active])) if active.size else 1
    phi = np.empty(n)
    p = np.empty((n, Y))
    succ = np.empty((n, Y), dtype=np.int64)
    _sweep(alpha, rf, offsets, radices_all, active, const, M, Y, n_yw, h_lin, grid.K,
           grid.adm_index, grid.ntab, phi, p, succ)
    keep = np.arange(n)
    if prune and Y == 2 and n > 2:
        G = len(grid)
        key = (succ[:, 0] + 1) * (G + 1) + (succ[:, 1] + 1)
        order = np.lexsort((np.arange(n), -phi, p[:, 0], key))
        keep = np.flatnonzero(_hull_keep(order, key, p[:, 0], phi, HULL_TOL))
    # map reduced candidate numbers back to full candidate indices
    local = keep.copy()
    full = np.zeros(keep.size, dtype=np.int64)
    free_pos = {int(c): j for j, c in enumerate(cands.free)}
    weights = np.ones(cands.free.size, dtype=np.int64)
    for j in range(cands.free.size - 2, -1, -1):
        weights[j] = weights[j + 1] * cands.radices[j + 1]
    for l in active[::-1]:
        r = radices_all[l]
        local, d = np.divmod(local, r)
        full += d * weights[free_pos[int(l)]]
    return phi[keep], p[keep], succ[keep], full, n


def _build_plan(channel, space, grid, cands, v, threads: int, prune: bool = True) -> _Plan:
    F, n_yw, h_lin = _features(channel, space, v)
    X, M, Y = space.num_inputs, space.size, channel.num_outputs
    rf_blocks, offsets = [], np.zeros(M, dtype=np.int64)
    pos = 0
    for l in range(M):
        blk = cands.context_rows[l] @ F[l * X:(l + 1) * X]
        rf_blocks.append(blk)
        offsets[l] = pos
        pos += len(blk)
    rf = np.ascontiguousarray(np.vstack(rf_blocks))
    radices_all = np.array([len(r) for r in cands.context_rows], dtype=np.int64)
    free_mask = radices_all > 1

    def work(g):
        return _point_plan(g, grid, cands, rf, offsets, radices_all, free_mask, F.shape[1], M, Y, n_yw,
                           h_lin, prune)

    G = len(grid)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, range(G)))
    else:
        parts = [work(g) for g in range(G)]
    # budgets keep grid and candidate indices below 2**31; parts are released while
    # copying so the peak stays near one plan
    sizes = np.array([len(pt[0]) for pt in parts], dtype=np.int64)
    seg_start = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    total = int(sizes.sum())
    phi, p = np.empty(total), np.empty((total, Y))
    succ, cand = np.empty((total, Y), dtype=np.int32), np.empty(total, dtype=np.int32)
    evaluated = 0
    for g in range(G):
        ph, pp, sc, cd, n = parts[g]
        parts[g] = None
        a, b = seg_start[g], seg_start[g] + sizes[g]
        phi[a:b], p[a:b], cand[a:b] = ph, pp, cd
        succ[a:b] = np.where(sc < 0, G, sc)
        evaluated += n
    return _Plan(seg_start=seg_start, phi=phi, p=p, succ=succ, cand=cand, evaluated=evaluated)


@njit(cache=True, nogil=True)
def _candidate_values(phi, p, succ, Jext, out):
    Y = p.shape[1]
    for c in range(phi.size):
        acc = 0.0
        for y in range(Y):
            acc += p[c, y] * Jext[succ[c, y]]
        out[c] = phi[c] + acc


@njit(cache=True, nogil=True)
def _segment_max(seg_start, phi, p, succ, Jext, out):
    Y = p.shape[1]
    G = seg_start.size
    for g in range(G):
        hi = seg_start[g + 1] if g + 1 < G else phi.size
        best = -np.inf
        for c in range(seg_start[g], hi):
            acc = 0.0
            for y in range(Y):
                acc += p[c, y] * Jext[succ[c, y]]
            val = phi[c] + acc
            if val > best:
                best = val
        out[g] = best


def _backup(plan: _Plan, J: np.ndarray) -> np.ndarray:
    """Value of every kept candidate under ``J``."""
    vals = np.empty(len(plan.phi))
    _candidate_values(plan.phi, plan.p, plan.succ, np.append(J, 0.0), vals)
    return vals


def _backup_max(plan: _Plan, J: np.ndarray) -> np.ndarray:
    """One Bellman backup: the best candidate value per grid point."""
    out = np.empty(len(plan.seg_start))
    _segment_max(plan.seg_start, plan.phi, plan.p, plan.succ, np.append(J, 0.0), out)
    return out


def _segment_argmax(plan: _Plan, vals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    best = np.maximum.reduceat(vals, plan.seg_start)
    seg_id = plan.seg_id()
    hits = np.flatnonzero(vals == best[seg_id])
    seg = seg_id[hits]
    first = hits[np.r_[True, seg[1:] != seg[:-1]]]
    return best, plan.cand[first].astype(np.int64)


# --- results --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RewardToGo:
    J: np.ndarray           # J_n on the grid
    J_prev: np.ndarray      # J_{n-1}
    k: int
    spans: tuple            # span of J_k - J_{k-1} for k = 1..n


@dataclass(frozen=True, eq=False)
class PolicyTable:
    """Input law per (grid point, context); a source whose rows depend on the quantized belief."""

    channel_digest: str
    u: int
    v: int
    m: int
    delta: float
    eta: float
    n_iter: int
    num_inputs: int
    num_states: int
    counts: np.ndarray       # (G, M) grid coordinates in units of delta
    rows: np.ndarray         # (G, M, X)
    sigma: float = float("nan")
    span: float = float("nan")
    constraint: str = "none"

    @property
    def num_contexts(self) -> int:
        return self.counts.shape[1]

    @property
    def K(self) -> int:
        return _steps(self.delta, "delta")

    def grid(self, space: ContextSpace) -> SimplexGrid:
        return grid_for_space(space, self.delta, budget=max(GRID_BUDGET, len(self.counts)))

    def check(self, channel: ChannelSpec, u: int | None = None, v: int | None = None) -> None:
        if channel.digest != self.channel_digest:
            raise DigestMismatch(f"policy was optimized for channel {self.channel_digest}, got {channel.digest}")
        if (u is not None and u != self.u) or (v is not None and v != self.v):
            raise DelayMismatch(f"policy is for (u, v) = ({self.u}, {self.v}), requested ({u}, {v})")

    def save(self, path) -> None:
        Path(path).write_text(dumps_policy(self), encoding="utf-8")

    @classmethod
    def load(cls, path) -> PolicyTable:
        return loads_policy(Path(path).read_text(encoding="utf-8"))


def dumps_policy(table: PolicyTable) -> str:
    G, M, X = table.rows.shape
    head = [
        "# fscbounds policy table",
        f"format_version = {FORMAT_VERSION}",
        f"ordering_version = {ORDERING_VERSION}",
        f"channel_digest = {table.channel_digest}",
        f"constraint = {table.constraint}",
        f"u = {table.u}", f"v = {table.v}", f"m = {table.m}",
        f"delta = {table.delta!r}", f"eta = {table.eta!r}", f"n_iter = {table.n_iter}",
        f"num_contexts = {M}", f"num_inputs = {X}", f"num_states = {table.num_states}",
        f"grid_points = {G}",
        f"sigma = {table.sigma!r}", f"span = {table.span!r}",
        "records",
    ]
    lines = []
    for g in range(G):
        coords = " ".join(str(int(c)) for c in table.counts[g])
        probs = " ".join(repr(float(p)) for p in table.rows[g].ravel())
        lines.append(f"{coords} | {probs}")
    return "\n".join(head + lines) + "\n"


def loads_policy(text: str) -> PolicyTable:
    lines = text.splitlines()
    meta = {}
    i = 0
    while i < len(lines) and lines[i].strip() != "records":
        line = lines[i].strip()
        i += 1
        if not line or line.startswith("#"):
            continue
        key, _, val = line.partition("=")
        meta[key.strip()] = val.strip()
    if int(meta.get("format_version", -1)) != FORMAT_VERSION:
        raise ValueError(f"unsupported policy format {meta.get('format_version')!r}")
    if int(meta.get("ordering_version", -1)) != ORDERING_VERSION:
        raise ValueError(f"policy uses context ordering {meta.get('ordering_version')!r}")
    M, X, G = int(meta["num_contexts"]), int(meta["num_inputs"]), int(meta["grid_points"])
    counts = np.zeros((G, M), dtype=np.int32)
    rows = np.zeros((G, M, X))
    for g, line in enumerate(lines[i + 1:i + 1 + G]):
        left, _, right = line.partition("|")
        counts[g] = [int(c) for c in left.split()]
        rows[g] = np.array([float(p) for p in right.split()]).reshape(M, X)
    if len(lines) - i - 1 < G:
        raise ValueError("policy file is truncated")
    return PolicyTable(meta["channel_digest"], int(meta["u"]), int(meta["v"]), int(meta["m"]),
                       float(meta["delta"]), float(meta["eta"]), int(meta["n_iter"]), X,
                       int(meta["num_states"]), counts, rows, float(meta["sigma"]), float(meta["span"]),
                       meta.get("constraint", "none"))


@dataclass(frozen=True, eq=False)
class DPResult:
    policy: PolicyTable
    reward_to_go: RewardToGo
    sigma: float
    span: float
    grid: SimplexGrid
    candidates: PolicyCandidates
    evaluated: int
    kept: int

    def __iter__(self):
        return iter((self.policy, self.reward_to_go, self.sigma))


def value_iteration(channel: ChannelSpec, u: int, v: int, m: int | None, delta: float, eta: float, n: int,
                    *, threads: int = 1, grid_budget: int = GRID_BUDGET,
                    policy_budget: int = POLICY_BUDGET, prune: bool = True) -> DPResult:
    """Run ``n`` quantized backups from ``J_0 = 0`` and extract the greedy policy for ``J_n``.

    ``sigma`` is the midpoint of ``[min, max]`` of ``J_n - J_{n-1}``; ``span`` is its width.
    """
    if m is None:
        m = max(v, channel.constraint.memory)
    if not 0 <= u <= v <= m:
        raise DelayMismatch(f"need 0 <= u <= v <= m, got ({u}, {v}, {m})")
    if n < 1:
        raise ValueError("need at least one iteration")
    space = context_space(channel, m, u)
    grid = grid_for_space(space, delta, grid_budget)
    cands = enumerate_policies(space, eta, policy_budget)
    plan = _build_plan(channel, space, grid, cands, v, threads, prune)
    log.info("plan: %d grid points, %d candidate evaluations, %d kept", len(grid), plan.evaluated, len(plan.phi))
    J = np.zeros(len(grid))
    J_prev = J
    spans = []
    for _ in range(n):
        J_prev, J = J, _backup_max(plan, J)
        diff = J - J_prev
        spans.append(float(diff.max() - diff.min()))
    diff = J - J_prev
    hi, lo = float(diff.max()), float(diff.min())
    sigma, span = 0.5 * (hi + lo), hi - lo
    _, best = _segment_argmax(plan, _backup(plan, J))
    rows = np.stack([cands.row(int(c)) for c in best])
    table = PolicyTable(channel.digest, u, v, m, float(delta), float(eta), n, space.num_inputs,
                        space.num_states, grid.counts.copy(), rows, sigma, span, channel.constraint.name)
    rtg = RewardToGo(J, J_prev, n, tuple(spans))
    return DPResult(table, rtg, sigma, span, grid, cands, plan.evaluated, len(plan.phi))

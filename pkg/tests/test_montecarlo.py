from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fscbounds.belief import alpha_init, alpha_update
from fscbounds.channel import bsc, gilbert_elliott, new_fsc, rll_1_inf, unconstrained
from fscbounds.contexts import context_space
from fscbounds.dp import value_iteration
from fscbounds.errors import DelayMismatch
from fscbounds.montecarlo import (
    ReceiverBelief,
    _receiver_tables,
    batch_means,
    directed_info_rate,
    finite_horizon_rate,
    markov_lower_bound,
    mutual_info_rate,
    simulate,
)
from fscbounds.oracle import exact_directed_info
from fscbounds.sources import (
    MarkovSource,
    input_markov_source,
    iud_source,
    random_markov_source,
    random_softmax_source,
    table_source,
)

from oracles import LOG2_PHI, bsc_capacity, random_stochastic

PHI = (1 + math.sqrt(5)) / 2
NOISELESS_RLL = gilbert_elliott(0.3, 0.3, 0.0, 0.0, rll_1_inf())


def golden_source(u=0):
    return input_markov_source(NOISELESS_RLL, 1, [[1 - 1 / PHI**2, 1 / PHI**2], [1.0, 0.0]], u)


def random_channel(rng, constraint=None):
    return new_fsc(random_stochastic(rng, (2, 2)), random_stochastic(rng, (2, 2, 2)), constraint or unconstrained(2))


# --- simulate ------------------------------------------------------------------------------

def test_rll_source_never_emits_11():
    traj = simulate(NOISELESS_RLL, golden_source(), 1_000_000, seed=5)
    x = traj.x
    assert not np.any((x[1:] == 1) & (x[:-1] == 1))


def test_deterministic_channel_and_source():
    ch = new_fsc([[1.0]], np.array([[[1.0, 0.0]], [[0.0, 1.0]]]))
    sp = context_space(ch, 1, 0)
    src = MarkovSource(sp, np.array([[0.0, 1.0], [1.0, 0.0]]))   # alternate
    traj = simulate(ch, src, 1000, seed=0)
    assert np.array_equal(traj.y, traj.x)
    assert np.all(traj.x[1:] != traj.x[:-1])


def test_state_frequencies_match_stationary():
    ch = new_fsc([[0.9, 0.1], [0.3, 0.7]], np.full((2, 2, 2), 0.5))
    n = 500_000
    traj = simulate(ch, iud_source(ch, 1), n, seed=11)
    f = np.mean(traj.s[1:] == 0)
    se = math.sqrt(0.75 * 0.25 / n * 1.6 / 0.4)
    assert abs(f - 0.75) < 3 * se


def test_alpha_path_matches_python_filter():
    rng = np.random.default_rng(2)
    ch = random_channel(rng, rll_1_inf())
    sp = context_space(ch, 1, 1)
    src = random_softmax_source(sp, rng)
    traj = simulate(ch, src, 300, seed=4)
    # alpha_t conditions on y_{1-u..t-u}; y_0 is not recorded, so start from alpha_1
    alpha = traj.alpha[1]
    for t in range(2, 301):
        alpha = alpha_update(ch, sp, alpha, src.row(alpha), traj.y[t - 2])
        assert np.abs(alpha - traj.alpha[t]).max() < 1e-12


# --- kernel terms vs a plain-python replay ------------------------------------------------

def _draw(p, u):
    c = np.cumsum(p)
    hits = np.flatnonzero(u < c)
    return int(hits[0]) if hits.size else int(np.flatnonzero(p > 0)[-1])


def replay_terms(ch, src, N, seed, v):
    """Recompute the simulator's information terms with ReceiverBelief and alpha_update."""
    sp = src.space
    u, m = sp.u, sp.m
    P, W = ch.state_transition, ch.output_kernel
    prior, proj, _, succ_r, akey, xw, sw = _receiver_tables(ch, sp, v)
    unif = np.random.default_rng(seed).random(1 + u + 3 * N)
    rc = _draw(prior, unif[0])
    s = {tau: int(sw[rc, tau + m]) for tau in range(-m, 1)}
    x = {tau: int(xw[rc, tau - 1 + m]) for tau in range(1 - m, 1)}
    y = {}
    for k, tau in enumerate(range(1 - u, 1)):
        y[tau] = _draw(W[x[tau], s[tau - 1]], unif[1 + k])
    gamma = ReceiverBelief.initial(ch, sp, [y[tau] for tau in range(1 - u, 1)])
    cs = int(proj[rc])
    alpha = alpha_init(ch, sp)
    pos = 1 + u
    terms = []
    for t in range(1, N + 1):
        rows = src.row(alpha)
        x[t] = _draw(rows[cs], unif[pos])
        y[t] = _draw(W[x[t], s[t - 1]], unif[pos + 1])
        s[t] = _draw(P[s[t - 1]], unif[pos + 2])
        pos += 3
        den = gamma.predictive(rows)[y[t]]
        num = gamma.window_predictive(rows, v, x[t], int(akey[rc]))[y[t]]
        terms.append(math.log2(num) - math.log2(den))
        gamma = gamma.update(rows, y[t])
        cs = int(sp.successor[cs, x[t], s[t - u]])
        rc = int(succ_r[rc, x[t], s[t]])
        alpha = alpha_update(ch, sp, alpha, rows, y[t - u])
    return np.array(terms), np.array([x[t] for t in range(1, N + 1)])


@pytest.mark.parametrize("u,v,m,kind", [(0, 0, 1, "markov"), (0, 1, 1, "softmax"), (1, 1, 1, "softmax"),
                                        (1, 2, 2, "markov"), (2, 2, 2, "softmax"), (1, 1, 1, "table")])
def test_kernel_terms_match_replay(u, v, m, kind):
    rng = np.random.default_rng(10 * u + v + m)
    ch = random_channel(rng, rll_1_inf())
    if kind == "table":
        src = table_source(ch, value_iteration(ch, u, v, m, 0.25, 0.25, 5).policy)
    else:
        sp = context_space(ch, m, u)
        src = random_markov_source(sp, rng) if kind == "markov" else random_softmax_source(sp, rng)
    N = 150
    traj = simulate(ch, src, N, seed=9, v=v)
    ref, xs = replay_terms(ch, src, N, 9, v)
    assert np.array_equal(xs, traj.x)
    assert np.abs(ref - traj.terms).max() < 1e-10


def test_receiver_belief_is_a_distribution():
    rng = np.random.default_rng(0)
    ch = random_channel(rng)
    sp = context_space(ch, 1, 1)
    src = random_markov_source(sp, rng)
    g = ReceiverBelief.initial(ch, sp, [1])
    for y in (0, 1, 1, 0):
        assert abs(g.gamma.sum() - 1) < 1e-10 and abs(g.predictive(src.rows).sum() - 1) < 1e-12
        g = g.update(src.rows, y)


# --- rates ------------------------------------------------------------------------------------

def test_bsc_iud_rate():
    ch = bsc(0.1)
    est = directed_info_rate(ch, iud_source(ch, 0), 0, 0, 200_000, 1000, 1)
    assert abs(est.mean - bsc_capacity(0.1)) < 3 * est.std_error


def test_output_independent_channel_rate_zero():
    ch = new_fsc([[0.5, 0.5], [0.5, 0.5]], np.full((2, 2, 2), 0.5))
    est = directed_info_rate(ch, iud_source(ch, 1, 1), 1, 1, 50_000, 100, 0)
    assert abs(est.mean) <= 3 * est.std_error + 1e-12


@pytest.mark.parametrize("u,v", [(0, 0), (0, 1), (1, 1)])
def test_golden_source_on_noiseless_rll(u, v):
    est = directed_info_rate(NOISELESS_RLL, golden_source(u), u, v, 300_000, 1000, 2)
    assert abs(est.mean - LOG2_PHI) < 3 * est.std_error
    assert 0 <= est.std_error < 0.002


def test_seed_determinism_and_bounds():
    rng = np.random.default_rng(3)
    ch = random_channel(rng)
    src = random_softmax_source(context_space(ch, 1, 0), rng)
    a = directed_info_rate(ch, src, 0, 1, 20_000, 100, 42)
    b = directed_info_rate(ch, src, 0, 1, 20_000, 100, 42)
    assert a == b
    assert a.std_error >= 0
    assert -10 * a.std_error <= a.mean <= 1 + 10 * a.std_error
    terms = simulate(ch, src, 20_000, 42, v=1).terms
    assert np.all(np.isfinite(terms)) and terms.min() >= -50 and terms.max() <= 51


def test_rate_delay_validation():
    ch = bsc(0.1)
    with pytest.raises(DelayMismatch):
        directed_info_rate(ch, iud_source(ch, 1, 1), 0, 1, 100, 0, 0)
    with pytest.raises(DelayMismatch):
        directed_info_rate(ch, iud_source(ch, 1, 0), 0, 2, 100, 0, 0)


def test_batch_means():
    x = np.arange(1000, dtype=float)
    mean, se = batch_means(x, 10)
    assert mean == 499.5
    assert se == pytest.approx(np.std(np.arange(10) * 100 + 49.5, ddof=1) / math.sqrt(10))


# --- exact enumeration ---------------------------------------------------------------------

def test_exact_bsc_one_step():
    ch = bsc(0.1)
    assert exact_directed_info(ch, iud_source(ch, 0), 0, 0, 1) == pytest.approx(0.531004, abs=1e-6)
    assert exact_directed_info(ch, iud_source(ch, 0), 0, 0, 1) == pytest.approx(bsc_capacity(0.1), abs=1e-14)


def test_exact_constant_output_is_zero():
    W = np.zeros((2, 2, 2))
    W[:, :, 0] = 1.0
    ch = new_fsc([[0.6, 0.4], [0.2, 0.8]], W)
    src = random_markov_source(context_space(ch, 1, 1), np.random.default_rng(0))
    for N in (1, 3, 5):
        assert exact_directed_info(ch, src, 1, 1, N) == 0.0


@pytest.mark.parametrize("seed", range(3))
def test_exact_window_equals_full(seed):
    rng = np.random.default_rng(seed)
    ch = random_channel(rng)
    v = seed % 2
    src = random_softmax_source(context_space(ch, v, v), rng)
    a = exact_directed_info(ch, src, v, v, 6)
    b = exact_directed_info(ch, src, v, v, 6, full=True)
    assert abs(a - b) < 1e-12


@pytest.mark.parametrize("seed", range(3))
def test_finite_horizon_mc_matches_exact(seed):
    rng = np.random.default_rng(100 + seed)
    ch = random_channel(rng)
    u = seed % 2
    v = u + (seed // 2)
    src = random_softmax_source(context_space(ch, max(v, 1), u), rng)
    exact = exact_directed_info(ch, src, u, v, 8) / 8
    est = finite_horizon_rate(ch, src, u, v, 8, 2000, seed)
    assert abs(est.mean - exact) < 3.5 * est.std_error


# --- lower bounds ---------------------------------------------------------------------------

def test_markov_lower_bound_noiseless_rll():
    est, laws = markov_lower_bound(NOISELESS_RLL, 1, 0.01, 200_000, seed=1, search_N=20_000)
    assert abs(laws[0, 1] - 1 / PHI**2) < 0.03
    # the best grid law is within 0.03 of 1/phi^2, costing under 1e-3 bits of entropy
    assert abs(est.mean - LOG2_PHI) < 3 * est.std_error + 1e-3


def test_markov_lower_bound_bsc_order0():
    ch = bsc(0.1)
    est, laws = markov_lower_bound(ch, 0, 0.05, 200_000, seed=1, search_N=20_000)
    assert abs(est.mean - bsc_capacity(0.1)) < 3 * est.std_error
    assert abs(laws[0, 1] - 0.5) <= 0.1


def test_mutual_info_rate_needs_u0():
    ch = bsc(0.1)
    with pytest.raises(DelayMismatch):
        mutual_info_rate(ch, iud_source(ch, 1, 1), 100)

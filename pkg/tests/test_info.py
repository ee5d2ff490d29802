from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fscbounds.belief import alpha_init, disturbance_dist, uniform_row
from fscbounds.channel import bsc, gilbert_elliott, new_fsc, rll_1_inf, unconstrained
from fscbounds.contexts import context_space
from fscbounds.errors import DelayMismatch
from fscbounds.info import (
    batch_reward,
    cond_mutual_info,
    stage_reward,
    tail_output_prob,
    truncated_term_prob,
    window_joint,
    window_state_posterior,
)
from fscbounds.montecarlo import directed_info_rate, simulate
from fscbounds.oracle import directed_info_terms
from fscbounds.sources import random_markov_source, random_softmax_source

from oracles import bsc_capacity, brute_window_joint, cond_mi_from_dict, path_sum, random_stochastic


def random_channel(seed, S=2, X=2, Y=2, constraint=None):
    rng = np.random.default_rng(seed)
    return rng, new_fsc(random_stochastic(rng, (S, S)), random_stochastic(rng, (X, S, Y)),
                        constraint or unconstrained(X))


def random_belief(rng, sp):
    a = rng.random(sp.size) * sp.admissible
    return a / a.sum()


# --- tail_output_prob ---------------------------------------------------------------

def test_tail_empty_window():
    assert tail_output_prob(gilbert_elliott(0.3, 0.3, 0.1, 0.2), (), 0, ()) == 1.0


def test_tail_noiseless():
    ch = gilbert_elliott(0.3, 0.3, 0.0, 0.0)
    assert tail_output_prob(ch, (1,), 0, (1,)) == 1.0
    assert tail_output_prob(ch, (1,), 1, (0,)) == 0.0


def test_tail_u2_brute_force():
    ch = gilbert_elliott(0.3, 0.4, 0.05, 0.35)
    for xs in itertools.product(range(2), repeat=2):
        for ys in itertools.product(range(2), repeat=2):
            for s0 in range(2):
                ref = path_sum(ch.state_transition, ch.output_kernel, s0, xs, ys)
                assert abs(tail_output_prob(ch, xs, s0, ys) - ref) < 1e-14


# --- window_state_posterior / truncated_term_prob -----------------------------------

def test_posterior_v0_unit_mass():
    ch = gilbert_elliott(0.3, 0.3, 0.1, 0.2)
    assert np.array_equal(window_state_posterior(ch, 0, 1, (), ()), [0.0, 1.0])


def test_posterior_state_revealing_channel():
    # y = s_prev regardless of x
    W = np.zeros((2, 2, 2))
    W[:, 0, 0] = W[:, 1, 1] = 1.0
    ch = new_fsc([[0.0, 1.0], [1.0, 0.0]], W)    # deterministic alternation
    post = window_state_posterior(ch, 2, 0, (0, 1), (0, 1))
    assert np.array_equal(post, [1.0, 0.0])


def test_posterior_v2_brute_force():
    ch = gilbert_elliott(0.3, 0.4, 0.05, 0.35)
    P, W = ch.state_transition, ch.output_kernel
    for xs in itertools.product(range(2), repeat=2):
        for ys in itertools.product(range(2), repeat=2):
            for s0 in range(2):
                ref = np.array([path_sum(P, W, s0, xs, ys, end_state=s) for s in range(2)])
                ref /= ref.sum()
                assert np.abs(window_state_posterior(ch, 2, s0, xs, ys) - ref).max() < 1e-14


def test_truncated_v0_is_kernel_row():
    ch = gilbert_elliott(0.3, 0.3, 0.1, 0.2)
    assert np.array_equal(truncated_term_prob(ch, 0, 1, (0,), ()), ch.output_kernel[0, 1])


@given(st.integers(0, 2**32 - 1), st.integers(0, 3))
def test_truncated_sums_to_one(seed, v):
    rng, ch = random_channel(seed)
    xs = tuple(rng.integers(0, 2, v + 1))
    ys = tuple(rng.integers(0, 2, v))
    assert abs(truncated_term_prob(ch, v, int(rng.integers(2)), xs, ys).sum() - 1.0) < 1e-12


@pytest.mark.parametrize("seed", range(4))
def test_truncated_equals_full_history_terms(seed):
    rng, ch = random_channel(seed)
    v = seed % 2
    sp = context_space(ch, v, v)
    window, full = directed_info_terms(ch, random_softmax_source(sp, rng), v, 6)
    assert np.abs(window - full).max() < 1e-12


# --- window_joint / stage_reward ----------------------------------------------------

def test_window_joint_total_mass_random():
    for seed in range(200):
        rng, ch = random_channel(seed, constraint=rll_1_inf() if seed % 3 == 0 else None)
        m = 1 + seed % 2
        u = int(rng.integers(0, m + 1))
        v = int(rng.integers(u, m + 1))
        sp = context_space(ch, m, u)
        wj = window_joint(ch, sp, random_belief(rng, sp), random_markov_source(sp, rng).rows, u, v)
        assert abs(wj.table.sum() - 1.0) < 1e-10


def test_window_joint_single_state_collapse():
    ch = bsc(0.2)
    sp = context_space(ch, 0, 0)
    row = np.array([[0.3, 0.7]])
    t = window_joint(ch, sp, [1.0], row, 0, 0).table      # axes x_t, s_{t-1}, s_t, y_t
    expect = row[0][:, None] * ch.output_kernel[:, 0, :]
    assert np.allclose(t[:, 0, 0, :], expect, atol=1e-15)


@given(st.integers(0, 2**32 - 1), st.data())
def test_window_joint_marginal_is_disturbance(seed, data):
    rng, ch = random_channel(seed)
    m = data.draw(st.integers(1, 2))
    u = data.draw(st.integers(0, m))
    v = data.draw(st.integers(u, m))
    sp = context_space(ch, m, u)
    alpha, row = random_belief(rng, sp), random_markov_source(sp, rng).rows
    t = window_joint(ch, sp, alpha, row, u, v).table
    keep = v + 3                                      # axis of y_{t-u}
    marg = t.sum(axis=tuple(a for a in range(t.ndim) if a != keep))
    assert np.abs(marg - disturbance_dist(ch, sp, alpha, row)).max() < 1e-12


@given(st.integers(0, 2**32 - 1), st.data())
def test_stage_reward_matches_brute_force(seed, data):
    rng, ch = random_channel(seed, constraint=rll_1_inf() if seed % 2 else None)
    m = data.draw(st.integers(1, 2))
    u = data.draw(st.integers(0, m))
    v = data.draw(st.integers(u, m))
    sp = context_space(ch, m, u)
    alpha, row = random_belief(rng, sp), random_markov_source(sp, rng).rows
    ref = cond_mi_from_dict(brute_window_joint(ch.state_transition, ch.output_kernel, m, u, v, alpha, row))
    assert abs(stage_reward(ch, sp, alpha, row, u, v) - ref) < 1e-12
    z = (alpha[:, None] * row).ravel()[None]
    assert abs(batch_reward(ch, sp, v, z)[0] - ref) < 1e-12


def test_stage_reward_closed_forms():
    for eps, expect in ((0.0, 1.0), (0.1, bsc_capacity(0.1))):
        ch = bsc(eps)
        sp = context_space(ch, 0, 0)
        assert stage_reward(ch, sp, [1.0], uniform_row(sp), 0, 0) == pytest.approx(expect, abs=1e-12)
    assert bsc_capacity(0.1) == pytest.approx(0.531004, abs=5e-7)


def test_stage_reward_output_independent_is_zero():
    ch = new_fsc([[0.5, 0.5], [0.5, 0.5]], np.full((2, 2, 2), 0.5))
    sp = context_space(ch, 1, 1)
    assert stage_reward(ch, sp, alpha_init(ch, sp), uniform_row(sp), 1, 1) == 0.0


@given(st.integers(0, 2**32 - 1), st.integers(2, 3), st.data())
def test_stage_reward_bounds(seed, Y, data):
    rng, ch = random_channel(seed, Y=Y)
    m = data.draw(st.integers(0, 2))
    u = data.draw(st.integers(0, m))
    v = data.draw(st.integers(u, m))
    sp = context_space(ch, m, u)
    phi = stage_reward(ch, sp, random_belief(rng, sp), random_markov_source(sp, rng).rows, u, v)
    assert 0.0 <= phi <= np.log2(Y) + 1e-12


def test_stage_reward_delay_checks():
    ch = gilbert_elliott(0.3, 0.3, 0.1, 0.2)
    sp = context_space(ch, 1, 1)
    a, r = alpha_init(ch, sp), uniform_row(sp)
    with pytest.raises(DelayMismatch):
        stage_reward(ch, sp, a, r, 0, 1)
    with pytest.raises(DelayMismatch):
        stage_reward(ch, sp, a, r, 1, 2)


def test_cond_mutual_info_basic():
    joint = np.zeros((2, 1, 2))
    joint[0, 0, 0] = joint[1, 0, 1] = 0.5
    assert cond_mutual_info(joint) == pytest.approx(1.0)
    assert cond_mutual_info(np.full((2, 2, 2), 0.125)) == 0.0


@pytest.mark.parametrize("seed", range(3))
def test_averaged_stage_reward_matches_monte_carlo(seed):
    rng, ch = random_channel(100 + seed)
    u = seed % 2
    sp = context_space(ch, 1, u)
    src = random_markov_source(sp, rng)
    N = 200_000
    traj = simulate(ch, src, N, seed=seed)
    z = (traj.alpha[:-1, :, None] * src.rows[None]).reshape(N, -1)
    phi = batch_reward(ch, sp, u, z)[1000:]
    from fscbounds.montecarlo import batch_means

    m_phi, se_phi = batch_means(phi)
    est = directed_info_rate(ch, src, u, u, N, 1000, seed + 50)
    assert abs(m_phi - est.mean) < 4 * np.hypot(se_phi, est.std_error)

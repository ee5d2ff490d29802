from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fscbounds.belief import alpha_update, disturbance_dist
from fscbounds.channel import bsc, gilbert_elliott, new_fsc, rll_1_inf
from fscbounds.contexts import context_space, encode
from fscbounds.dp import (
    PolicyTable,
    _build_plan,
    _backup,
    _backup_max,
    _segment_argmax,
    bellman_backup,
    composition_count,
    dumps_policy,
    enumerate_grid,
    enumerate_policies,
    grid_for_space,
    loads_policy,
    quantize,
    quantize_counts,
    value_iteration,
)
from fscbounds.errors import DelayMismatch, DigestMismatch, GridTooLarge, PolicySpaceTooLarge
from fscbounds.info import stage_reward

from oracles import LOG2_PHI, bsc_capacity, noiseless_rll_toy_sigma

GE_RLL = gilbert_elliott(0.3, 0.3, 0.001, 0.5, rll_1_inf())


# --- quantizer ------------------------------------------------------------------------

def test_quantize_example():
    q = quantize([0.12, 0.25, 0.375, 0.255], 0.1)
    assert np.allclose(q, [0.1, 0.2, 0.4, 0.3], atol=1e-15)


def test_quantize_tie_break():
    assert np.allclose(quantize([0.5, 0.5], 0.2), [0.6, 0.4], atol=1e-15)


def test_quantize_respects_admissible():
    k = quantize_counts([0.3, 0.0, 0.7], 4, admissible=[True, False, True])
    assert k[1] == 0 and k.sum() == 4


@given(st.integers(1, 6), st.sampled_from([1, 2, 4, 5, 10, 20]), st.integers(0, 2**32 - 1))
def test_quantize_idempotent_and_on_grid(M, K, seed):
    rng = np.random.default_rng(seed)
    alpha = rng.dirichlet(np.ones(M))
    k = quantize_counts(alpha, K)
    assert k.sum() == K and np.all(k >= 0)
    assert np.array_equal(quantize_counts(k / K, K), k)
    # nearest in the max norm up to one unit
    assert np.abs(k / K - alpha).max() <= 1.0 / K + 1e-12


@given(st.integers(1, 5), st.sampled_from([2, 5, 10]), st.integers(0, 2**32 - 1))
def test_quantize_batch_matches_single(M, K, seed):
    rng = np.random.default_rng(seed)
    a = rng.dirichlet(np.ones(M), size=7)
    batch = quantize_counts(a, K)
    for i in range(7):
        assert np.array_equal(batch[i], quantize_counts(a[i], K))


# --- grid -----------------------------------------------------------------------------

def test_grid_two_coords():
    g = enumerate_grid(2, 0.5)
    assert sorted(map(tuple, g.points.tolist())) == [(0.0, 1.0), (0.5, 0.5), (1.0, 0.0)]


@pytest.mark.parametrize("M,delta,count", [(4, 0.1, 286), (4, 0.05, 1771)])
def test_grid_counts(M, delta, count):
    assert count == math.comb(int(round(1 / delta)) + M - 1, M - 1)
    assert len(enumerate_grid(M, delta)) == count


@given(st.integers(1, 5), st.sampled_from([0.5, 0.25, 0.2, 0.1]), st.data())
def test_grid_index_round_trip(M, delta, data):
    adm = np.array(data.draw(st.lists(st.booleans(), min_size=M, max_size=M)))
    if not adm.any():
        adm[0] = True
    g = enumerate_grid(M, delta, adm)
    assert len(g) == composition_count(g.K, int(adm.sum()))
    for i in range(len(g)):
        assert g.index_of(g.counts[i]) == i
    assert np.all(g.counts[:, ~adm] == 0)


def test_grid_budget():
    with pytest.raises(GridTooLarge):
        enumerate_grid(8, 0.05, budget=1000)


def test_grid_non_integer_delta():
    with pytest.raises(ValueError):
        enumerate_grid(3, 0.3)


# --- policy candidates --------------------------------------------------------------------

def test_policies_single_free_context():
    ch = bsc(0.1)
    cands = enumerate_policies(context_space(ch, 0, 0), 0.5)
    assert len(cands) == 3
    assert [r[0, 1] for r in cands] == [0.0, 0.5, 1.0]


def test_policies_rll_forced_row_and_count():
    sp = context_space(GE_RLL, 1, 1)
    cands = enumerate_policies(sp, 0.1)
    assert len(cands) == 121
    for s in (0, 1):
        forced = cands.context_rows[encode(sp, [1], [s])]
        assert forced.shape[0] == 1 and np.array_equal(forced[0], [1.0, 0.0])


def test_policies_digits_round_trip():
    cands = enumerate_policies(context_space(GE_RLL, 1, 1), 0.25)
    for c in range(len(cands)):
        assert cands.index_from_digits(cands.digits(c)) == c


def test_policy_budget():
    with pytest.raises(PolicySpaceTooLarge):
        enumerate_policies(context_space(GE_RLL, 1, 1), 0.01, budget=100)


# --- bellman backup -----------------------------------------------------------------------

def test_backup_myopic_step():
    sp = context_space(GE_RLL, 1, 1)
    grid = grid_for_space(sp, 0.25)
    cands = enumerate_policies(sp, 0.25)
    for g in (0, 7, len(grid) - 1):
        value, row, c = bellman_backup(GE_RLL, sp, grid, np.zeros(len(grid)), g, cands, 1, 1)
        phis = [stage_reward(GE_RLL, sp, grid.points[g], r, 1, 1) for r in cands]
        assert value == pytest.approx(max(phis), abs=1e-15)
        assert c == int(np.argmax(phis))


def test_backup_degenerate_channel_ties():
    ch = new_fsc([[0.5, 0.5], [0.5, 0.5]], np.full((2, 2, 2), 0.5))
    sp = context_space(ch, 1, 1)
    grid = grid_for_space(sp, 0.5)
    cands = enumerate_policies(sp, 0.5)
    J = np.random.default_rng(0).random(len(grid))
    value, row, c = bellman_backup(ch, sp, grid, J, 3, cands, 1, 1)
    assert c == 0 and np.array_equal(row, cands.row(0))
    alpha = grid.points[3]
    py = disturbance_dist(ch, sp, alpha, row)
    expect = sum(py[y] * J[grid.lookup(alpha_update(ch, sp, alpha, row, y))] for y in range(2))
    assert value == pytest.approx(expect, abs=1e-14)


def test_backup_bsc_symmetric_input():
    ch = bsc(0.1)
    sp = context_space(ch, 0, 0)
    grid = grid_for_space(sp, 1.0)
    _, row, _ = bellman_backup(ch, sp, grid, np.zeros(1), 0, enumerate_policies(sp, 0.01), 0, 0)
    assert abs(row[0, 1] - 0.5) <= 0.01


@pytest.mark.parametrize("u,v,m", [(1, 1, 1), (0, 1, 1), (0, 0, 1)])
def test_fast_backup_matches_reference(u, v, m):
    sp = context_space(GE_RLL, m, u)
    grid = grid_for_space(sp, 0.5 if sp.size > 4 else 0.25)
    cands = enumerate_policies(sp, 0.5)
    J = np.random.default_rng(1).random(len(grid))
    for prune in (True, False):
        plan = _build_plan(GE_RLL, sp, grid, cands, v, 1, prune)
        vals = _backup(plan, J)
        best, best_c = _segment_argmax(plan, vals)
        assert np.array_equal(_backup_max(plan, J), best)
        for g in range(len(grid)):
            ref, _, ref_c = bellman_backup(GE_RLL, sp, grid, J, g, cands, u, v)
            assert abs(best[g] - ref) < 1e-12
            # the chosen candidate attains the same value under the reference backup
            row = cands.row(int(best_c[g]))
            alpha = grid.points[g]
            val = stage_reward(GE_RLL, sp, alpha, row, u, v)
            py = disturbance_dist(GE_RLL, sp, alpha, row)
            val += sum(py[y] * J[grid.lookup(alpha_update(GE_RLL, sp, alpha, row, y))]
                       for y in range(2) if py[y] > 1e-300)
            assert abs(val - ref) < 1e-12


# --- value iteration ------------------------------------------------------------------------

def test_value_iteration_bsc():
    res = value_iteration(bsc(0.1), 0, 0, 0, 0.5, 0.01, 30)
    assert abs(res.sigma - bsc_capacity(0.1)) < 0.005
    assert abs(res.sigma - 0.5310) < 0.005


@pytest.mark.xfail(strict=True, reason="quantization bias: the quantized DP over-estimates log2(phi) "
                                       "by about 0.02 at delta=0.05 (see the decisions ledger)")
def test_value_iteration_noiseless_rll_sigma():
    ch = gilbert_elliott(0.3, 0.3, 0.0, 0.0, rll_1_inf())
    res = value_iteration(ch, 1, 1, 1, 0.05, 0.02, 50)
    assert abs(res.sigma - 0.6942) < 0.01


def test_quantized_toy_mdp_shows_same_bias():
    # a one-dimensional quantized MDP of the same channel shares the upward bias,
    # shrinking as the grid is refined
    s10, s20 = noiseless_rll_toy_sigma(10), noiseless_rll_toy_sigma(20)
    assert s10 > s20 > LOG2_PHI
    assert s10 - LOG2_PHI > 0.01


def test_noiseless_rll_policy_rate_is_capacity():
    # the optimized policy itself is fine: its Monte Carlo rate sits at log2(phi)
    from fscbounds.montecarlo import directed_info_rate
    from fscbounds.sources import table_source

    ch = gilbert_elliott(0.3, 0.3, 0.0, 0.0, rll_1_inf())
    res = value_iteration(ch, 1, 1, 1, 0.05, 0.02, 50)
    assert LOG2_PHI < res.sigma < LOG2_PHI + 0.03
    est = directed_info_rate(ch, table_source(ch, res.policy), 1, 1, 200_000, 1000, 3)
    assert abs(est.mean - LOG2_PHI) < 0.01


def test_value_iteration_invariants():
    ch = gilbert_elliott(0.3, 0.3, 0.001, 0.3, rll_1_inf())
    u = v = m = 1
    delta, eta = 0.1, 0.1
    prev = None
    for n in (1, 2, 3, 6):
        res = value_iteration(ch, u, v, m, delta, eta, n)
        J = res.reward_to_go.J
        assert np.all(J >= res.reward_to_go.J_prev - 1e-12)            # J_k non-decreasing in k
        if prev is not None:
            assert np.all(J >= prev - 1e-12)
        prev = J
    spans = res.reward_to_go.spans
    assert spans[-1] <= spans[0] + 1e-12
    # stationarity: backing J_n up with the extracted rows gives J_n + sigma within the span
    sp = context_space(ch, m, u)
    grid = res.grid
    for g in range(len(grid)):
        alpha, row = grid.points[g], res.policy.rows[g]
        val = stage_reward(ch, sp, alpha, row, u, v)
        py = disturbance_dist(ch, sp, alpha, row)
        val += sum(py[y] * J[grid.lookup(alpha_update(ch, sp, alpha, row, y))]
                   for y in range(2) if py[y] > 1e-300)
        assert abs(val - J[g] - res.sigma) <= res.span / 2 + 1e-9


def test_value_iteration_thread_determinism():
    ch = gilbert_elliott(0.3, 0.3, 0.001, 0.3, rll_1_inf())
    a = value_iteration(ch, 0, 1, 1, 0.25, 0.25, 10, threads=1)
    for t in (4, 8):
        b = value_iteration(ch, 0, 1, 1, 0.25, 0.25, 10, threads=t)
        assert np.array_equal(a.reward_to_go.J, b.reward_to_go.J)
        assert np.array_equal(a.policy.rows, b.policy.rows)
        assert a.sigma == b.sigma


def test_value_iteration_prune_does_not_change_result():
    ch = gilbert_elliott(0.3, 0.3, 0.001, 0.3, rll_1_inf())
    a = value_iteration(ch, 1, 1, 1, 0.1, 0.1, 10)
    b = value_iteration(ch, 1, 1, 1, 0.1, 0.1, 10, prune=False)
    assert np.abs(a.reward_to_go.J - b.reward_to_go.J).max() < 1e-12
    assert b.kept >= a.kept


def test_value_iteration_delay_validation():
    with pytest.raises(DelayMismatch):
        value_iteration(GE_RLL, 2, 1, 2, 0.5, 0.5, 1)


def test_value_iteration_budgets():
    with pytest.raises(GridTooLarge):
        value_iteration(GE_RLL, 0, 1, 1, 0.05, 0.05, 1, grid_budget=10_000)
    with pytest.raises(PolicySpaceTooLarge):
        value_iteration(GE_RLL, 0, 1, 1, 0.5, 0.05, 1, policy_budget=1000)


# --- policy table persistence -----------------------------------------------------------

def test_policy_round_trip(tmp_path):
    res = value_iteration(GE_RLL, 1, 1, 1, 0.25, 0.25, 5)
    path = tmp_path / "p.policy"
    res.policy.save(path)
    back = PolicyTable.load(path)
    assert back.channel_digest == GE_RLL.digest
    assert (back.u, back.v, back.m, back.delta, back.eta, back.n_iter) == (1, 1, 1, 0.25, 0.25, 5)
    assert np.array_equal(back.counts, res.policy.counts)
    assert np.array_equal(back.rows, res.policy.rows)
    assert back.sigma == res.policy.sigma and back.span == res.policy.span
    assert dumps_policy(back) == dumps_policy(res.policy)


def test_policy_record_count_1771():
    sp = context_space(GE_RLL, 1, 1)
    assert len(grid_for_space(sp, 0.05)) == 1771


def test_policy_check():
    res = value_iteration(GE_RLL, 1, 1, 1, 0.5, 0.5, 2)
    res.policy.check(GE_RLL, 1, 1)
    with pytest.raises(DigestMismatch):
        res.policy.check(gilbert_elliott(0.3, 0.3, 0.001, 0.4, rll_1_inf()))
    with pytest.raises(DelayMismatch):
        res.policy.check(GE_RLL, 0, 1)


def test_loads_policy_rejects_garbage():
    with pytest.raises(ValueError):
        loads_policy("format_version = 99\nrecords\n")

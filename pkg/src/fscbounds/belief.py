"""Forward (BCJR) recursion for the delayed a-posteriori context belief.

``alpha_{t-1}(l) = Pr(context_{t-1} = l | y_{..t-u-1})``.  One update appends the
new input ``x_t`` drawn from the policy row and the state ``s_{t-u}`` revealed
through the delayed output ``y_{t-u}``.

A policy row is an ``(M, |X|)`` array: row ``l`` is the input law used when the
transmitter's current context is ``l``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .channel import ChannelSpec
from .contexts import ContextSpace
from .errors import ImpossibleObservation

SIMPLEX_TOL = 1e-10
ZERO_MASS = 1e-300


@dataclass(frozen=True, eq=False)
class FilterTables:
    """Channel/context tables shared by the filter, the DP and the simulator."""

    x_delay: np.ndarray    # (M, X) input x_{t-u} given predecessor context and new input
    s_last: np.ndarray     # (M,) state s_{t-u-1} of the predecessor context
    kernel: np.ndarray     # (M, X, S, Y) Pr(y_{t-u}, s_{t-u} | ...) per (pred, x_new, s_new, y)
    operator: np.ndarray   # (M, X, M, Y) kernel scattered onto successor contexts


@lru_cache(maxsize=64)
def filter_tables(channel: ChannelSpec, space: ContextSpace) -> FilterTables:
    M, X, S = space.size, space.num_inputs, space.num_states
    P, W = channel.state_transition, channel.output_kernel
    Y = channel.num_outputs
    if space.u == 0:
        x_delay = np.tile(np.arange(X), (M, 1))
    else:
        x_delay = np.repeat(space.x_windows[:, space.m - space.u][:, None], X, axis=1)
    s_last = space.s_windows[:, -1]
    # kernel[i, x, s, y] = W[x_delay, s_last, y] * P[s_last, s]
    kernel = W[x_delay, s_last[:, None], :][:, :, None, :] * P[s_last][:, None, :, None]
    op = np.zeros((M, X, M, Y))
    succ = space.successor
    for i in range(M):
        for x in range(X):
            for s in range(S):
                op[i, x, succ[i, x, s]] += kernel[i, x, s]
    for a in (x_delay, s_last, kernel, op):
        a.setflags(write=False)
    return FilterTables(x_delay, s_last, kernel, op)


def alpha_init(channel: ChannelSpec, space: ContextSpace) -> np.ndarray:
    """Uniform over admissible input windows times the stationary state-window law."""
    P, pi = channel.state_transition, channel.stationary
    ss = space.s_windows
    law = pi[ss[:, 0]].copy()
    for k in range(1, space.w):
        law *= P[ss[:, k - 1], ss[:, k]]
    law = law * space.admissible
    return law / law.sum()


def validate_policy_row(space: ContextSpace, row: np.ndarray, tol: float = 1e-12) -> None:
    row = np.asarray(row)
    if row.shape != (space.size, space.num_inputs):
        raise ValueError(f"policy row must have shape {(space.size, space.num_inputs)}, got {row.shape}")
    adm = space.admissible
    if np.any(row < 0):
        raise ValueError("policy row has negative entries")
    if np.any(np.abs(row[adm].sum(axis=1) - 1.0) > tol):
        raise ValueError("policy row distributions must sum to 1")
    if np.any(row[adm] * ~space.allowed_inputs[adm] != 0):
        raise ValueError("policy row puts mass on a forbidden input")


def uniform_row(space: ContextSpace) -> np.ndarray:
    """Independent uniform inputs over whatever the constraint allows."""
    allowed = space.allowed_inputs.astype(float)
    return allowed / allowed.sum(axis=1, keepdims=True)


def transition_weights(channel: ChannelSpec, space: ContextSpace, alpha, policy_row) -> np.ndarray:
    """Joint table ``T[l', y_{t-u}]`` of the next context and the delayed output."""
    tab = filter_tables(channel, space)
    z = np.asarray(alpha)[:, None] * np.asarray(policy_row)
    return np.einsum("ix,ixjy->jy", z, tab.operator)


def disturbance_dist(channel: ChannelSpec, space: ContextSpace, alpha, policy_row) -> np.ndarray:
    """Law of the delayed output ``y_{t-u}`` given the belief and the policy row."""
    return transition_weights(channel, space, alpha, policy_row).sum(axis=0)


def alpha_update(channel: ChannelSpec, space: ContextSpace, alpha, policy_row, y_observed: int) -> np.ndarray:
    if not 0 <= y_observed < channel.num_outputs:
        raise ValueError(f"output {y_observed} out of range")
    col = transition_weights(channel, space, alpha, policy_row)[:, y_observed]
    total = col.sum()
    if total < ZERO_MASS:
        raise ImpossibleObservation(f"y={y_observed} has probability {total!r} under the current belief")
    return col / total

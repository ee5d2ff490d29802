"""Stage reward and window-conditional output probabilities.

Everything here is in bits.  The central object is the window joint

    Pr(x_{t-v..t}, s_{t-v-1}, s_{t-u}, y_{t-u..t} | y_{..t-u-1})

assembled from the belief ``alpha_{t-1}``, the policy row, the one-step channel law
at the delay boundary and the channel-only tail ``Pr(y_{t-u+1..t} | x, s_{t-u})``.
The stage reward is ``I(X_{t-v..t}, S_{t-v-1}; Y_t | Y_{t-u..t-1})`` under it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .channel import ChannelSpec
from .contexts import ContextSpace
from .errors import DelayMismatch, ImpossibleObservation

ZERO_MASS = 1e-300


def tail_output_prob(channel: ChannelSpec, x_window, s_boundary: int, y_window) -> float:
    """Pr(y_window | x_window, state at the window start) by a forward pass over the states."""
    if len(x_window) != len(y_window):
        raise ValueError("x_window and y_window must have equal length")
    P, W = channel.state_transition, channel.output_kernel
    vec = np.zeros(channel.num_states)
    vec[s_boundary] = 1.0
    for x, y in zip(x_window, y_window):
        vec = (vec * W[x, :, y]) @ P
    return float(vec.sum())


def window_state_posterior(channel: ChannelSpec, v: int, s_oldest: int, x_window, y_window) -> np.ndarray:
    """Pr(s_{t-1} | s_{t-v-1}, x_{t-v..t-1}, y_{t-v..t-1}) using only the channel law.

    Exact when the window inputs carry no information about the window states,
    which holds for sources with equal feedback and state-information delay.
    """
    if len(x_window) != v or len(y_window) != v:
        raise ValueError(f"windows must have length v={v}")
    P, W = channel.state_transition, channel.output_kernel
    vec = np.zeros(channel.num_states)
    vec[s_oldest] = 1.0
    for x, y in zip(x_window, y_window):
        vec = (vec * W[x, :, y]) @ P
        total = vec.sum()
        if total < ZERO_MASS:
            raise ImpossibleObservation("window outputs have zero likelihood")
        vec = vec / total
    return vec


def truncated_term_prob(channel: ChannelSpec, v: int, s_oldest: int, x_window_incl_t, y_window) -> np.ndarray:
    """Pr(y_t | x_{t-v..t}, s_{t-v-1}, y_{t-v..t-1}) as a distribution over y_t."""
    x_window_incl_t = tuple(x_window_incl_t)
    post = window_state_posterior(channel, v, s_oldest, x_window_incl_t[:-1], y_window)
    return post @ channel.output_kernel[x_window_incl_t[-1]]


def cond_mutual_info(joint: np.ndarray) -> float:
    """I(A; Y | C) in bits for a nonnegative table indexed ``[a, c, y]``.

    The table need not be normalized; 0 log 0 = 0.
    """
    joint = np.asarray(joint, dtype=float)
    total = joint.sum()
    if total <= 0:
        return 0.0
    p = joint / total
    p_ac = p.sum(axis=2, keepdims=True)
    p_cy = p.sum(axis=0, keepdims=True)
    p_c = p.sum(axis=(0, 2), keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = p * p_c / (p_ac * p_cy)
        terms = np.where(p > 0, p * np.log2(np.where(p > 0, ratio, 1.0)), 0.0)
    return float(max(terms.sum(), 0.0))


@dataclass(frozen=True)
class WindowJoint:
    """Joint table with axes ``x_{t-v}, ..., x_t, s_{t-v-1}, s_{t-u}, y_{t-u}, ..., y_t``."""

    table: np.ndarray
    u: int
    v: int

    def reduced(self) -> np.ndarray:
        """Reshape to ``[a, c, y_t]`` with a = (x-window, s_{t-v-1}), c = y_{t-u..t-1}."""
        t = self.table.sum(axis=self.v + 2)
        n_a = int(np.prod(t.shape[: self.v + 2]))
        n_y = t.shape[-1]
        return t.reshape(n_a, n_y ** self.u, n_y)


def _check_delays(space: ContextSpace, u: int, v: int) -> None:
    if u != space.u:
        raise DelayMismatch(f"context space was built for u={space.u}, not u={u}")
    if not u <= v <= space.m:
        raise DelayMismatch(f"need u <= v <= m, got u={u}, v={v}, m={space.m}")


@lru_cache(maxsize=64)
def window_map(channel: ChannelSpec, space: ContextSpace, v: int) -> np.ndarray:
    """Linear map from ``z[l, x] = alpha(l) * row[l, x]`` to the flattened window joint.

    Shape ``(M * |X|, size of WindowJoint.table)``.
    """
    u, m = space.u, space.m
    X, S, Y = space.num_inputs, space.num_states, channel.num_outputs
    P, W = channel.state_transition, channel.output_kernel
    shape = (X,) * (v + 1) + (S, S) + (Y,) * (u + 1)
    # channel-only tail Pr(y_{t-u+1..t} | x_{t-u+1..t}, s_{t-u})
    tail = np.zeros((X,) * u + (S,) + (Y,) * u)
    for xt in itertools.product(range(X), repeat=u):
        for yt in itertools.product(range(Y), repeat=u):
            for sb in range(S):
                tail[xt + (sb,) + yt] = tail_output_prob(channel, xt, sb, yt)
    G = np.zeros((space.size, X) + shape)
    xw, sw = space.x_windows, space.s_windows
    for i in range(space.size):
        for x in range(X):
            xs = tuple(xw[i]) + (x,)
            a_x = xs[m - v:]
            s_old = sw[i, m - v]
            s_prev, x_d = sw[i, -1], xs[m - u]
            x_tail = xs[m - u + 1:]
            for s_new in range(S):
                for y0 in range(Y):
                    w = W[x_d, s_prev, y0] * P[s_prev, s_new]
                    if w == 0.0:
                        continue
                    G[(i, x) + a_x + (s_old, s_new, y0)] += w * tail[x_tail + (s_new,)]
    G = G.reshape(space.size * X, -1)
    G.setflags(write=False)
    return G


def window_joint(channel: ChannelSpec, space: ContextSpace, alpha, policy_row, u: int, v: int) -> WindowJoint:
    _check_delays(space, u, v)
    X, S, Y = space.num_inputs, space.num_states, channel.num_outputs
    z = (np.asarray(alpha)[:, None] * np.asarray(policy_row)).ravel()
    shape = (X,) * (v + 1) + (S, S) + (Y,) * (u + 1)
    return WindowJoint((z @ window_map(channel, space, v)).reshape(shape), u, v)


def stage_reward(channel: ChannelSpec, space: ContextSpace, alpha, policy_row, u: int, v: int) -> float:
    """I(X_{t-v..t}, S_{t-v-1}; Y_t | Y_{t-u..t-1}) given the belief, in bits."""
    return cond_mutual_info(window_joint(channel, space, alpha, policy_row, u, v).reduced())


# --- batched evaluation for the optimizer -------------------------------------------

def _entropy_rows(p: np.ndarray) -> np.ndarray:
    """Entropy in bits along the last axis (rows need not be normalized to 1)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return -np.where(p > 0, p * np.log2(np.where(p > 0, p, 1.0)), 0.0).sum(axis=-1)


@dataclass(frozen=True, eq=False)
class RewardMaps:
    """Linear maps from ``z = alpha * row`` (flattened) to what the stage reward needs.

    ``y_window`` gives Pr(y_{t-u..t}); the conditional entropy term is linear in z
    when ``u == v`` (``cond_entropy``) and otherwise computed from ``reduced``.
    """

    n_y: int
    u: int
    y_window: np.ndarray                 # (MX, Y^(u+1))
    cond_entropy: np.ndarray | None      # (MX,) when u == v
    reduced: np.ndarray | None           # (MX, A*C*Y) when u < v
    n_a: int

    def reward(self, zmaps_y: np.ndarray, zmaps_h: np.ndarray) -> np.ndarray:
        """Stage reward from batched projections (see ``batch_reward``)."""
        Y = self.n_y
        py = np.clip(zmaps_y, 0.0, None)
        h_full = _entropy_rows(py)
        h_prev = _entropy_rows(py.reshape(py.shape[:-1] + (-1, Y)).sum(axis=-1))
        if self.cond_entropy is not None:
            h_cond = zmaps_h
        else:
            r = np.clip(zmaps_h, 0.0, None).reshape(zmaps_h.shape[:-1] + (-1, Y))
            # H(Y_t | A, C) = H(A, C, Y_t) - H(A, C)
            h_cond = _entropy_rows(r.reshape(r.shape[:-2] + (-1,))) - _entropy_rows(r.sum(axis=-1))
        return np.maximum(h_full - h_prev - h_cond, 0.0)


@lru_cache(maxsize=64)
def reward_maps(channel: ChannelSpec, space: ContextSpace, v: int) -> RewardMaps:
    u = space.u
    X, S, Y = space.num_inputs, space.num_states, channel.num_outputs
    G = window_map(channel, space, v)
    MX = G.shape[0]
    shape = (MX,) + (X,) * (v + 1) + (S, S) + (Y,) * (u + 1)
    Gt = G.reshape(shape).sum(axis=v + 3)            # drop s_{t-u}
    n_a = X ** (v + 1) * S
    red = Gt.reshape(MX, n_a, Y ** u, Y)
    y_window = red.sum(axis=1).reshape(MX, -1)
    if u == v:
        # per row the conditional law of y_t given (a, c) is channel-only, so
        # H(Y_t | A, C) is a linear functional of z
        h = np.zeros(MX)
        for k in range(MX):
            mass = red[k].sum(axis=-1)
            cond = np.divide(red[k], mass[..., None], out=np.zeros_like(red[k]), where=mass[..., None] > 0)
            h[k] = float((mass * _entropy_rows(cond)).sum())
        cond_entropy, reduced = h, None
    else:
        cond_entropy, reduced = None, red.reshape(MX, -1)
    for a in (y_window, cond_entropy, reduced):
        if a is not None:
            a.setflags(write=False)
    return RewardMaps(Y, u, y_window, cond_entropy, reduced, n_a)


def batch_reward(channel: ChannelSpec, space: ContextSpace, v: int, z: np.ndarray) -> np.ndarray:
    """Stage rewards for a batch of flattened ``z = alpha * row`` vectors, shape ``(n, M*|X|)``."""
    maps = reward_maps(channel, space, v)
    zy = z @ maps.y_window
    zh = z @ (maps.cond_entropy if maps.cond_entropy is not None else maps.reduced)
    return maps.reward(zy, zh)

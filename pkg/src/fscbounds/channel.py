"""Non-controllable finite-state channels.

A channel is described by a state-transition matrix ``P[s_prev, s]``, an output
kernel ``W[x, s_prev, y]`` and a deterministic input constraint.  One channel use
draws ``(y_t, s_t)`` with probability ``W[x_t, s_{t-1}, y_t] * P[s_{t-1}, s_t]``;
the state chain never looks at the inputs.
"""

from __future__ import annotations

import configparser
import hashlib
import itertools
from dataclasses import dataclass, field
from io import StringIO
from pathlib import Path

import numpy as np

from .errors import (
    DeadEndConstraint,
    IndexOutOfRange,
    NonStochasticRow,
    ParameterOutOfRange,
    Reducible,
)

ROW_TOL = 1e-12
GOOD, BAD = 0, 1


@dataclass(frozen=True, eq=False)
class InputConstraint:
    """Hard constraint on input sequences with memory ``memory``.

    ``mask[h_1, ..., h_c, x]`` is True when input ``x`` may follow the window
    ``(h_1, ..., h_c)`` (oldest first).
    """

    name: str
    memory: int
    mask: np.ndarray

    @property
    def num_inputs(self) -> int:
        return self.mask.shape[-1]

    def allowed(self, window, x: int) -> bool:
        if self.memory == 0:
            return bool(self.mask[x])
        window = tuple(int(a) for a in window)
        if len(window) < self.memory:
            raise ValueError(f"constraint {self.name!r} needs a window of length {self.memory}")
        return bool(self.mask[window[len(window) - self.memory:] + (int(x),)])

    def window_ok(self, xs) -> bool:
        """True if every symbol of ``xs`` that has a full history obeys the constraint."""
        c = self.memory
        return all(self.allowed(xs[i - c:i], xs[i]) for i in range(c, len(xs)))


def unconstrained(num_inputs: int = 2) -> InputConstraint:
    mask = np.ones(num_inputs, dtype=bool)
    mask.setflags(write=False)
    return InputConstraint("none", 0, mask)


def rll_1_inf() -> InputConstraint:
    """Binary RLL(1, inf): no two consecutive ones."""
    mask = np.ones((2, 2), dtype=bool)
    mask[1, 1] = False
    mask.setflags(write=False)
    return InputConstraint("rll_1_inf", 1, mask)


CONSTRAINTS = {
    "none": unconstrained,
    "rll_1_inf": lambda num_inputs=2: rll_1_inf(),
}


def constraint_by_name(name: str, num_inputs: int = 2) -> InputConstraint:
    try:
        factory = CONSTRAINTS[name]
    except KeyError:
        raise ValueError(f"unknown constraint {name!r}; known: {sorted(CONSTRAINTS)}") from None
    c = factory(num_inputs)
    if c.num_inputs != num_inputs:
        raise ValueError(f"constraint {name!r} is defined for {c.num_inputs} inputs, not {num_inputs}")
    return c


@dataclass(frozen=True, eq=False)
class ChannelSpec:
    state_transition: np.ndarray
    output_kernel: np.ndarray
    constraint: InputConstraint
    stationary: np.ndarray = field(repr=False)

    @property
    def num_states(self) -> int:
        return self.state_transition.shape[0]

    @property
    def num_inputs(self) -> int:
        return self.output_kernel.shape[0]

    @property
    def num_outputs(self) -> int:
        return self.output_kernel.shape[2]

    @property
    def digest(self) -> str:
        return channel_digest(self)


def _check_stochastic(arr: np.ndarray, what: str) -> None:
    if np.any(arr < 0) or np.any(arr > 1):
        raise NonStochasticRow(f"{what} has entries outside [0, 1]")
    sums = arr.sum(axis=-1)
    bad = np.argwhere(np.abs(sums - 1.0) > ROW_TOL)
    if bad.size:
        idx = tuple(int(i) for i in bad[0])
        raise NonStochasticRow(f"{what} row {idx} sums to {sums[idx]!r}")


def _strongly_connected(P: np.ndarray) -> bool:
    n = P.shape[0]
    adj = P > 0

    def reach(a):
        seen = np.zeros(n, dtype=bool)
        seen[0] = True
        stack = [0]
        while stack:
            i = stack.pop()
            for j in np.flatnonzero(a[i] & ~seen):
                seen[j] = True
                stack.append(j)
        return seen.all()

    return reach(adj) and reach(adj.T)


def _power_iteration(P: np.ndarray, tol: float = 1e-13, max_iter: int = 1_000_000) -> np.ndarray:
    n = P.shape[0]
    # the lazy chain has the same stationary law and is aperiodic
    lazy = 0.5 * (P + np.eye(n))
    pi = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = pi @ lazy
        nxt /= nxt.sum()
        if np.max(np.abs(nxt @ P - nxt)) < tol:
            return nxt
        pi = nxt
    # slow mixing: fall back to a direct solve of pi (P - I) = 0, sum(pi) = 1
    A = np.vstack([P.T - np.eye(n), np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi = np.linalg.lstsq(A, b, rcond=None)[0]
    return np.clip(pi, 0.0, None) / np.clip(pi, 0.0, None).sum()


def new_fsc(state_transition, output_kernel, input_constraint: InputConstraint | None = None) -> ChannelSpec:
    """Validate and build a channel.

    Raises NonStochasticRow, Reducible or DeadEndConstraint when the
    corresponding invariant fails.
    """
    P = np.array(state_transition, dtype=np.float64)
    W = np.array(output_kernel, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
        raise ValueError(f"state_transition must be square, got shape {P.shape}")
    if W.ndim != 3 or W.shape[1] != P.shape[0]:
        raise ValueError(f"output_kernel must have shape (|X|, |S|, |Y|) with |S|={P.shape[0]}, got {W.shape}")
    if input_constraint is None:
        input_constraint = unconstrained(W.shape[0])
    if input_constraint.num_inputs != W.shape[0]:
        raise ValueError("constraint alphabet does not match the number of inputs")
    _check_stochastic(P, "state_transition")
    _check_stochastic(W, "output_kernel")
    if not _strongly_connected(P):
        raise Reducible("state chain has more than one communicating class")
    c = input_constraint.memory
    for hist in itertools.product(range(W.shape[0]), repeat=c):
        if input_constraint.window_ok(hist) and not any(
            input_constraint.allowed(hist, x) for x in range(W.shape[0])
        ):
            raise DeadEndConstraint(f"history {hist} admits no input under {input_constraint.name!r}")
    pi = _power_iteration(P)
    for a in (P, W, pi):
        a.setflags(write=False)
    return ChannelSpec(P, W, input_constraint, pi)


def gilbert_elliott(p_b_given_g: float, p_g_given_b: float, eps_g: float, eps_b: float,
                    constraint: InputConstraint | None = None) -> ChannelSpec:
    """Two-state Gilbert-Elliott channel, states ordered [g, b], each a BSC."""
    for name, val in (("p_b_given_g", p_b_given_g), ("p_g_given_b", p_g_given_b),
                      ("eps_g", eps_g), ("eps_b", eps_b)):
        if not 0.0 <= val <= 1.0:
            raise ParameterOutOfRange(f"{name}={val} not in [0, 1]")
    P = [[1.0 - p_b_given_g, p_b_given_g], [p_g_given_b, 1.0 - p_g_given_b]]
    W = np.empty((2, 2, 2))
    for s, eps in ((GOOD, eps_g), (BAD, eps_b)):
        for x in range(2):
            W[x, s, x] = 1.0 - eps
            W[x, s, 1 - x] = eps
    return new_fsc(P, W, constraint)


def bsc(eps: float) -> ChannelSpec:
    """Memoryless binary symmetric channel as a 1-state FSC."""
    if not 0.0 <= eps <= 1.0:
        raise ParameterOutOfRange(f"eps={eps} not in [0, 1]")
    W = np.array([[[1 - eps, eps]], [[eps, 1 - eps]]])
    return new_fsc([[1.0]], W)


def joint_kernel(channel: ChannelSpec, x: int, s_prev: int) -> np.ndarray:
    """Pr(y, s | x, s_prev) as an array indexed ``[y, s]``."""
    if not (0 <= x < channel.num_inputs and 0 <= s_prev < channel.num_states):
        raise IndexOutOfRange(f"(x={x}, s_prev={s_prev}) out of range")
    return np.outer(channel.output_kernel[x, s_prev], channel.state_transition[s_prev])


def _draw(p: np.ndarray, u: float) -> int:
    # inverse-cdf draw; the clip guards against cumsum ending a hair below 1
    return int(min(np.searchsorted(np.cumsum(p), u, side="right"), len(p) - 1))


def step(channel: ChannelSpec, s_prev: int, x: int, rng: np.random.Generator) -> tuple[int, int]:
    """Sample one channel use, returning ``(y, s)``."""
    if not (0 <= x < channel.num_inputs and 0 <= s_prev < channel.num_states):
        raise IndexOutOfRange(f"(x={x}, s_prev={s_prev}) out of range")
    u1, u2 = rng.random(2)
    y = _draw(channel.output_kernel[x, s_prev], u1)
    s = _draw(channel.state_transition[s_prev], u2)
    return y, s


def stationary_state_dist(channel: ChannelSpec) -> np.ndarray:
    return channel.stationary.copy()


# --- text serialization -------------------------------------------------------------

def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(values).ravel())


def canonical_text(channel: ChannelSpec) -> str:
    return (
        f"{channel.num_states} {channel.num_inputs} {channel.num_outputs}\n"
        f"{_fmt(channel.state_transition)}\n{_fmt(channel.output_kernel)}\n"
        f"{channel.constraint.name}\n"
    )


def channel_digest(channel: ChannelSpec) -> str:
    return hashlib.sha256(canonical_text(channel).encode("utf-8")).hexdigest()[:16]


def dumps_channel(channel: ChannelSpec) -> str:
    cp = configparser.ConfigParser()
    cp["channel"] = {
        "num_states": str(channel.num_states),
        "num_inputs": str(channel.num_inputs),
        "num_outputs": str(channel.num_outputs),
        "state_transition": _fmt(channel.state_transition),
        "output_kernel": _fmt(channel.output_kernel),
        "constraint": channel.constraint.name,
    }
    buf = StringIO()
    cp.write(buf)
    return buf.getvalue()


def parse_channel_section(section) -> ChannelSpec:
    """Build a channel from a mapping with the fields written by ``dumps_channel``."""
    try:
        ns, nx, ny = (int(section[k]) for k in ("num_states", "num_inputs", "num_outputs"))
        P = np.array([float(v) for v in section["state_transition"].split()]).reshape(ns, ns)
        W = np.array([float(v) for v in section["output_kernel"].split()]).reshape(nx, ns, ny)
    except KeyError as exc:
        raise ValueError(f"channel definition is missing field {exc.args[0]!r}") from None
    constraint = constraint_by_name(section.get("constraint", "none").strip(), nx)
    return new_fsc(P, W, constraint)


def loads_channel(text: str) -> ChannelSpec:
    cp = configparser.ConfigParser()
    cp.read_string(text)
    return parse_channel_section(cp["channel"])


def load_channel(path) -> ChannelSpec:
    return loads_channel(Path(path).read_text(encoding="utf-8"))

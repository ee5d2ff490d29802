"""Flat indexing of (input window, state window) contexts.

A context at time ``t`` is the input window ``x_{t-m+1..t}`` (length ``m``) together
with the state window ``s_{t-m..t-u}`` (length ``w = m - u + 1``).  Windows are
listed oldest first.  The flat index is input-window-major; inside each window
the most recent symbol is the least significant digit, so with ``|X| = |S| = 2``,
``m = u = 1`` the contexts are ordered ``(0,g) (0,b) (1,g) (1,b)``.

This ordering is frozen: policy files store one distribution per context in
this order (``ORDERING_VERSION``).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .channel import ChannelSpec, InputConstraint, unconstrained
from .errors import IndexOutOfRange, LetterOutOfRange, WindowLengthMismatch

ORDERING_VERSION = 1


@dataclass(frozen=True, eq=False)
class ContextSpace:
    num_inputs: int
    num_states: int
    m: int
    u: int
    constraint: InputConstraint

    def __post_init__(self):
        if self.m < 0 or self.u < 0 or self.u > self.m:
            raise ValueError(f"need 0 <= u <= m, got u={self.u}, m={self.m}")
        if self.constraint.num_inputs != self.num_inputs:
            raise ValueError("constraint alphabet does not match num_inputs")

    @property
    def w(self) -> int:
        return self.m - self.u + 1

    @property
    def size(self) -> int:
        return self.num_inputs ** self.m * self.num_states ** self.w

    @property
    def num_x_windows(self) -> int:
        return self.num_inputs ** self.m

    @cached_property
    def x_windows(self) -> np.ndarray:
        """``(M, m)`` array of the input window of every context."""
        return np.array([decode(self, i)[0] for i in range(self.size)], dtype=np.int64).reshape(self.size, self.m)

    @cached_property
    def s_windows(self) -> np.ndarray:
        return np.array([decode(self, i)[1] for i in range(self.size)], dtype=np.int64).reshape(self.size, self.w)

    @cached_property
    def admissible(self) -> np.ndarray:
        ok = np.array([self.constraint.window_ok(xs) for xs in self.x_windows])
        ok.setflags(write=False)
        return ok

    @cached_property
    def allowed_inputs(self) -> np.ndarray:
        """``(M, |X|)`` mask of inputs that may follow each context's input window."""
        c = self.constraint.memory
        if c > self.m:
            raise ValueError(f"input window m={self.m} shorter than constraint memory {c}")
        out = np.zeros((self.size, self.num_inputs), dtype=bool)
        for i, xs in enumerate(self.x_windows):
            for x in range(self.num_inputs):
                out[i, x] = self.constraint.allowed(xs, x)
        out.setflags(write=False)
        return out

    @cached_property
    def successor(self) -> np.ndarray:
        """``succ[i, x, s]``: context reached from ``i`` by appending input ``x`` and state ``s``."""
        out = np.empty((self.size, self.num_inputs, self.num_states), dtype=np.int64)
        for i in range(self.size):
            for x in range(self.num_inputs):
                for s in range(self.num_states):
                    out[i, x, s] = shift(self, i, x, s)
        return out


def context_space(channel: ChannelSpec, m: int, u: int) -> ContextSpace:
    return ContextSpace(channel.num_inputs, channel.num_states, m, u, channel.constraint)


def plain_space(num_inputs: int, num_states: int, m: int, u: int) -> ContextSpace:
    return ContextSpace(num_inputs, num_states, m, u, unconstrained(num_inputs))


def _pack(symbols, radix: int) -> int:
    code = 0
    for a in symbols:
        code = code * radix + int(a)
    return code


def _unpack(code: int, radix: int, length: int) -> tuple[int, ...]:
    out = []
    for _ in range(length):
        code, r = divmod(code, radix)
        out.append(r)
    return tuple(reversed(out))


def encode(space: ContextSpace, x_window, s_window) -> int:
    x_window, s_window = tuple(x_window), tuple(s_window)
    if len(x_window) != space.m or len(s_window) != space.w:
        raise WindowLengthMismatch(
            f"expected windows of length ({space.m}, {space.w}), got ({len(x_window)}, {len(s_window)})")
    if any(not 0 <= a < space.num_inputs for a in x_window):
        raise LetterOutOfRange(f"input window {x_window} out of range")
    if any(not 0 <= a < space.num_states for a in s_window):
        raise LetterOutOfRange(f"state window {s_window} out of range")
    return _pack(x_window, space.num_inputs) * space.num_states ** space.w + _pack(s_window, space.num_states)


def decode(space: ContextSpace, index: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    if not 0 <= index < space.size:
        raise IndexOutOfRange(f"context index {index} not in [0, {space.size})")
    xcode, scode = divmod(int(index), space.num_states ** space.w)
    return _unpack(xcode, space.num_inputs, space.m), _unpack(scode, space.num_states, space.w)


def shift(space: ContextSpace, index: int, new_x: int, new_s: int | None = None) -> int:
    """Advance the windows by one step; ``new_s=None`` keeps the state window."""
    if not 0 <= new_x < space.num_inputs:
        raise LetterOutOfRange(f"input {new_x} out of range")
    if new_s is not None and not 0 <= new_s < space.num_states:
        raise LetterOutOfRange(f"state {new_s} out of range")
    xs, ss = decode(space, index)
    if space.m:
        xs = xs[1:] + (new_x,)
    if new_s is not None:
        ss = ss[1:] + (new_s,)
    return encode(space, xs, ss)

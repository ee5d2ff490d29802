"""Input sources: context-dependent input laws, optionally driven by the belief.

A source is attached to a context space ``(m, u)``.  At time ``t`` it sees the
context ``(x_{t-m..t-1}, s_{t-1-m..t-1-u})`` and the belief ``alpha_{t-1}``
and returns one input law per context, an ``(M, |X|)`` array.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .belief import uniform_row, validate_policy_row
from .channel import ChannelSpec
from .contexts import ContextSpace, context_space
from .dp import PolicyTable, quantize_counts

TABLE, SOFTMAX = 0, 1


@dataclass(frozen=True, eq=False)
class MarkovSource:
    """Belief-independent source: a fixed row per context."""

    space: ContextSpace
    rows: np.ndarray

    def __post_init__(self):
        validate_policy_row(self.space, self.rows)

    def row(self, alpha=None) -> np.ndarray:
        return self.rows

    def kernel_tables(self):
        return TABLE, self.rows[None].astype(float), np.zeros((1, 1, 1)), np.zeros((1, 1)), 0


@dataclass(frozen=True, eq=False)
class SoftmaxSource:
    """Row ``l`` is the softmax of ``weights[l] @ alpha + bias[l]`` over the allowed inputs."""

    space: ContextSpace
    weights: np.ndarray     # (M, X, M)
    bias: np.ndarray        # (M, X)

    def row(self, alpha) -> np.ndarray:
        return softmax_rows(self.weights, self.bias, self.space.allowed_inputs, np.asarray(alpha, dtype=float))

    def kernel_tables(self):
        return SOFTMAX, np.zeros((1, 1, 1)), self.weights.astype(float), self.bias.astype(float), 0


def softmax_rows(weights, bias, allowed, alpha) -> np.ndarray:
    logits = weights @ alpha + bias
    logits = np.where(allowed, logits, -np.inf)
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class TableSource:
    """An optimized policy table: the belief is quantized and its row looked up."""

    space: ContextSpace
    table: PolicyTable

    def __post_init__(self):
        if self.table.num_contexts != self.space.size or self.table.u != self.space.u:
            raise ValueError("policy table does not match the context space")

    @cached_property
    def grid(self):
        return self.table.grid(self.space)

    def row(self, alpha) -> np.ndarray:
        k = quantize_counts(alpha, self.grid.K, self.grid.admissible)
        return self.table.rows[self.grid.index_of(k)]

    def kernel_tables(self):
        return TABLE, self.table.rows.astype(float), np.zeros((1, 1, 1)), np.zeros((1, 1)), self.table.K


def iud_source(channel: ChannelSpec, m: int | None = None, u: int = 0) -> MarkovSource:
    """Independent inputs, uniform over whatever the constraint allows."""
    if m is None:
        m = channel.constraint.memory
    space = context_space(channel, m, u)
    return MarkovSource(space, uniform_row(space))


def table_source(channel: ChannelSpec, table: PolicyTable) -> TableSource:
    table.check(channel)
    return TableSource(context_space(channel, table.m, table.u), table)


def input_markov_source(channel: ChannelSpec, order: int, laws: np.ndarray, u: int = 0) -> MarkovSource:
    """Source depending on the last ``order`` inputs only; ``laws`` is ``(|X|^order, |X|)``."""
    space = context_space(channel, order, u)
    laws = np.asarray(laws, dtype=float)
    xcode = np.arange(space.size) // space.num_states ** space.w
    return MarkovSource(space, laws[xcode])


def random_markov_source(space: ContextSpace, rng: np.random.Generator, concentration: float = 1.0) -> MarkovSource:
    rows = rng.dirichlet(np.full(space.num_inputs, concentration), size=space.size)
    rows = rows * space.allowed_inputs
    rows /= rows.sum(axis=1, keepdims=True)
    return MarkovSource(space, rows)


def random_softmax_source(space: ContextSpace, rng: np.random.Generator, scale: float = 2.0) -> SoftmaxSource:
    M, X = space.size, space.num_inputs
    return SoftmaxSource(space, rng.normal(0.0, scale, size=(M, X, M)), rng.normal(0.0, 1.0, size=(M, X)))


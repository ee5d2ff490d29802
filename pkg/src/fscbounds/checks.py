"""Enumeration-based identity checks on random small instances.

Each check returns the largest deviation it saw; ``run_identity_suite`` bundles
them into a report.  Used by the ``oracle-check`` command and the test suite.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .belief import alpha_init, alpha_update
from .channel import ChannelSpec, new_fsc, unconstrained
from .contexts import context_space
from .info import tail_output_prob, truncated_term_prob, window_state_posterior
from .oracle import HistorySource, brute_force_beliefs, directed_info_terms, factorization_deviation
from .sources import random_markov_source, random_softmax_source


def random_channel(rng: np.random.Generator, num_states: int = 2, num_inputs: int = 2,
                   num_outputs: int = 2, constraint=None) -> ChannelSpec:
    """Random channel with a strictly positive state chain (hence irreducible)."""
    P = rng.dirichlet(np.ones(num_states), size=num_states)
    P = 0.9 * P + 0.1 / num_states
    W = rng.dirichlet(np.ones(num_outputs), size=(num_inputs, num_states))
    return new_fsc(P, W, constraint or unconstrained(num_inputs))


def window_identity_deviation(seed: int, N: int = 6) -> float:
    """Full-history vs truncated-window directed-information terms, equal delays."""
    rng = np.random.default_rng(seed)
    ch = random_channel(rng)
    v = int(rng.integers(0, 2))
    space = context_space(ch, v, v)
    src = random_softmax_source(space, rng) if seed % 2 else random_markov_source(space, rng)
    window, full = directed_info_terms(ch, src, v, N)
    return float(np.abs(window - full).max())


def factorization_check(seed: int, T: int = 6, u: int = 1) -> float:
    rng = np.random.default_rng(seed)
    ch = random_channel(rng)
    src = HistorySource(ch.num_inputs, u, u, ch.constraint, seed)
    return factorization_deviation(ch, src, T - u)


def filter_deviation(seed: int, T: int = 6, corrupt: bool = False) -> float:
    """Sequential filter updates vs brute-force posteriors over every output history.

    With ``corrupt`` the filter runs on a channel whose output kernel is perturbed,
    while the brute force keeps the true one.
    """
    rng = np.random.default_rng(seed)
    ch = random_channel(rng)
    filt = _perturbed(ch) if corrupt else ch
    u = int(rng.integers(0, 2))
    space = context_space(ch, 1, u)
    src = random_softmax_source(space, rng)
    brute = brute_force_beliefs(ch, src, T)
    worst = 0.0
    for t, table in enumerate(brute, start=1):
        for hist, target in table.items():
            alpha = alpha_init(filt, space)
            # hist = y_{1-u..t-u}; update k uses y_{k-u}
            for y in hist:
                alpha = alpha_update(filt, space, alpha, src.row(alpha), y)
            worst = max(worst, float(np.abs(alpha - target).max()))
    return worst


def _perturbed(ch: ChannelSpec) -> ChannelSpec:
    W = ch.output_kernel.copy()
    W[0, 0] = 0.5 * W[0, 0] + 0.5 / ch.num_outputs
    return new_fsc(ch.state_transition, W, ch.constraint)


def _brute_state_posterior(ch: ChannelSpec, s_oldest: int, xs, ys) -> np.ndarray:
    P, W = ch.state_transition, ch.output_kernel
    post = np.zeros(ch.num_states)
    for path in itertools.product(range(ch.num_states), repeat=len(xs)):
        p, prev = 1.0, s_oldest
        for x, y, s in zip(xs, ys, path):
            p *= W[x, prev, y] * P[prev, s]
            prev = s
        post[prev] += p
    return post / post.sum()


def window_deviation(seed: int, v: int = 2) -> float:
    """Window state posterior and tail output probability vs explicit state-path sums."""
    rng = np.random.default_rng(seed)
    ch = random_channel(rng)
    worst = 0.0
    for xs in itertools.product(range(ch.num_inputs), repeat=v):
        for ys in itertools.product(range(ch.num_outputs), repeat=v):
            for s0 in range(ch.num_states):
                post = window_state_posterior(ch, v, s0, xs, ys)
                worst = max(worst, float(np.abs(post - _brute_state_posterior(ch, s0, xs, ys)).max()))
                brute = 0.0
                for path in itertools.product(range(ch.num_states), repeat=v):
                    p, prev = 1.0, s0
                    for x, y, s in zip(xs, ys, path):
                        p *= ch.output_kernel[x, prev, y] * ch.state_transition[prev, s]
                        prev = s
                    brute += p
                worst = max(worst, abs(tail_output_prob(ch, xs, s0, ys) - brute))
                for x in range(ch.num_inputs):
                    q = truncated_term_prob(ch, v, s0, xs + (x,), ys)
                    worst = max(worst, abs(float(q.sum()) - 1.0))
    return worst


@dataclass(frozen=True)
class CheckResult:
    name: str
    instances: int
    max_deviation: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_deviation < self.tolerance)


def run_identity_suite(master_seed: int = 0, instances: int = 4, corrupt: bool = False) -> list[CheckResult]:
    """Run every identity on ``instances`` random instances derived from ``master_seed``.

    With ``corrupt=True`` the filter check runs on a corrupted kernel, a negative
    control that must fail.
    """
    seeds = [int(s) for s in np.random.SeedSequence(master_seed).generate_state(instances)]
    out = []
    for name, fn, tol in (("window_vs_full_history", window_identity_deviation, 1e-12),
                          ("conditional_law_factorization", factorization_check, 1e-12),
                          ("filter_vs_bruteforce", filter_deviation, 1e-10),
                          ("window_posterior_vs_paths", window_deviation, 1e-12)):
        if name == "filter_vs_bruteforce":
            dev = max(fn(s, corrupt=corrupt) for s in seeds)
        else:
            dev = max(fn(s) for s in seeds)
        out.append(CheckResult(name, instances, dev, tol))
    return out


def format_report(results: list[CheckResult]) -> str:
    lines = [f"{'identity':<30} {'instances':>9} {'max_abs_dev':>12} {'tol':>8}  result"]
    for r in results:
        lines.append(f"{r.name:<30} {r.instances:>9d} {r.max_deviation:>12.3e} {r.tolerance:>8.0e}  "
                     f"{'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)

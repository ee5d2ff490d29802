"""Experiment configuration: an INI file with one level of named sections.

Example::

    [channel]
    model = gilbert_elliott
    p_b_given_g = 0.3
    p_g_given_b = 0.3
    eps_g = 0.001
    eps_b = 0.3
    constraint = rll_1_inf

    [bounds]
    # u,v,m with an optional @delta override
    triples = 2,2,2@0.1 1,1,1 0,1,1@0.1 0,0,1@0.1

    [dp]
    delta = 0.05
    eta = 0.05
    n_iter = 50

    [mc]
    n = 1000000
    burn_in = 1000
    seeds = 7

Optional sections: ``[lower_bound]``, ``[sweep]``, ``[quantizer]``, ``[output]``.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, replace
from io import StringIO
from pathlib import Path

from .channel import ChannelSpec, bsc, constraint_by_name, gilbert_elliott, parse_channel_section
from .dp import GRID_BUDGET, POLICY_BUDGET
from .errors import ConfigError, FscError

MODEL_PARAMS = {
    "gilbert_elliott": ("p_b_given_g", "p_g_given_b", "eps_g", "eps_b"),
    "bsc": ("eps",),
}
INLINE_FIELDS = ("num_states", "num_inputs", "num_outputs", "state_transition", "output_kernel")


@dataclass(frozen=True)
class Bound:
    u: int
    v: int
    m: int
    delta: float | None = None      # overrides the dp block when set

    def label(self) -> str:
        return f"u{self.u}v{self.v}m{self.m}"


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    params: tuple = ()              # ((name, value), ...) for named models
    inline: tuple = ()              # ((field, text), ...) for model = inline
    constraint: str = "none"
    bounds: tuple = ()
    delta: float = 0.05
    eta: float = 0.05
    n_iter: int = 50
    budget_grid: int = GRID_BUDGET
    budget_policy: int = POLICY_BUDGET
    N: int = 1_000_000
    burn_in: int = 1000
    seeds: tuple = (0,)
    lb_enabled: bool = True
    lb_order: int = 1
    lb_step: float = 0.01
    sweep_parameter: str | None = None
    sweep_values: tuple = ()
    quantizer_deltas: tuple = ()
    quantizer_values: tuple = ()
    out_dir: str = "results"
    threads: int = 1
    source_text: str = field(default="", compare=False, repr=False)

    def param(self, name: str) -> float | None:
        return dict(self.params).get(name)

    def with_param(self, name: str, value: float) -> ExperimentConfig:
        return replace(self, params=tuple((k, value if k == name else v) for k, v in self.params))

    def bound_delta(self, b: Bound) -> float:
        return self.delta if b.delta is None else b.delta

    def channel(self) -> ChannelSpec:
        if self.model == "inline":
            return parse_channel_section(dict(self.inline, constraint=self.constraint))
        p = dict(self.params)
        if self.model == "bsc":
            return bsc(p["eps"])
        return gilbert_elliott(p["p_b_given_g"], p["p_g_given_b"], p["eps_g"], p["eps_b"],
                               constraint_by_name(self.constraint))


def _line_of(text: str, section: str, key: str | None) -> int | None:
    current = None
    for no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            current = stripped[1:-1].strip()
            if key is None and current == section:
                return no
        elif current == section and key is not None and re.match(rf"{re.escape(key)}\s*[=:]", stripped):
            return no
    return None


class _Reader:
    def __init__(self, cp: configparser.ConfigParser, text: str):
        self.cp, self.text = cp, text

    def fail(self, section: str, key: str | None, msg: str):
        where = f"{section}.{key}" if key else section
        line = _line_of(self.text, section, key)
        suffix = f" (line {line})" if line else ""
        raise ConfigError(f"{where}: {msg}{suffix}")

    def has(self, section: str, key: str | None = None) -> bool:
        if not self.cp.has_section(section):
            return False
        return key is None or self.cp.has_option(section, key)

    def raw(self, section: str, key: str, default=None) -> str:
        if not self.has(section, key):
            if default is None:
                self.fail(section, key, "missing required field")
            return default
        return self.cp.get(section, key).strip()

    def number(self, section: str, key: str, kind=float, default=None):
        text = self.raw(section, key, None if default is None else str(default))
        try:
            return kind(text)
        except ValueError:
            self.fail(section, key, f"expected {kind.__name__}, got {text!r}")

    def numbers(self, section: str, key: str, kind=float, default=None) -> tuple:
        text = self.raw(section, key, default)
        try:
            return tuple(kind(t) for t in text.replace(",", " ").split())
        except ValueError:
            self.fail(section, key, f"expected a list of {kind.__name__}, got {text!r}")


def _unit_steps(r: _Reader, section: str, key: str, value: float) -> None:
    if not 0.0 < value <= 1.0 or abs(1.0 / value - round(1.0 / value)) > 1e-9:
        r.fail(section, key, f"{value} is not 1/L for a positive integer L")


def _parse_bound(r: _Reader, token: str) -> Bound:
    head, _, over = token.partition("@")
    parts = head.split(",")
    try:
        if len(parts) != 3:
            raise ValueError
        u, v, m = (int(p) for p in parts)
        delta = float(over) if over else None
    except ValueError:
        r.fail("bounds", "triples", f"cannot parse {token!r}, expected u,v,m or u,v,m@delta")
    if min(u, v, m) < 0:
        r.fail("bounds", "triples", f"{token!r}: negative entry")
    if u > v:
        r.fail("bounds", "triples", f"{token!r}: u exceeds v")
    if v > m:
        r.fail("bounds", "triples", f"{token!r}: v exceeds m")
    if delta is not None:
        _unit_steps(r, "bounds", "triples", delta)
    return Bound(u, v, m, delta)


def loads_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    r = _Reader(cp, text)
    if not r.has("channel"):
        r.fail("channel", None, "missing section")

    model = r.raw("channel", "model")
    params: tuple = ()
    inline: tuple = ()
    if model == "inline":
        inline = tuple((k, r.raw("channel", k)) for k in INLINE_FIELDS)
    elif model in MODEL_PARAMS:
        params = tuple((k, r.number("channel", k)) for k in MODEL_PARAMS[model])
        for k, val in params:
            if not 0.0 <= val <= 1.0:
                r.fail("channel", k, f"{val} not in [0, 1]")
    else:
        r.fail("channel", "model", f"unknown model {model!r}; expected one of "
               f"{', '.join(sorted(MODEL_PARAMS))} or inline")
    constraint = r.raw("channel", "constraint", "none")
    try:
        constraint_by_name(constraint)
    except (KeyError, ValueError):
        r.fail("channel", "constraint", f"unknown constraint {constraint!r}")

    tokens = r.raw("bounds", "triples", "").split()
    bounds = tuple(_parse_bound(r, t) for t in tokens)
    memory = constraint_by_name(constraint).memory
    for b in bounds:
        if b.m < memory:
            r.fail("bounds", "triples", f"{b.u},{b.v},{b.m}: m is shorter than the memory {memory} "
                   f"of constraint {constraint}")

    delta = r.number("dp", "delta")
    eta = r.number("dp", "eta")
    _unit_steps(r, "dp", "delta", delta)
    _unit_steps(r, "dp", "eta", eta)
    n_iter = r.number("dp", "n_iter", int, 50)
    if n_iter < 1:
        r.fail("dp", "n_iter", "must be at least 1")
    budget_grid = r.number("dp", "budget_grid", int, GRID_BUDGET)
    budget_policy = r.number("dp", "budget_policy", int, POLICY_BUDGET)

    N = r.number("mc", "n", int, 1_000_000)
    burn_in = r.number("mc", "burn_in", int, 1000)
    seeds = r.numbers("mc", "seeds", int, "0")
    if N < 100 or burn_in < 0 or not seeds or min(seeds) < 0:
        r.fail("mc", None, "need n >= 100, burn_in >= 0 and at least one non-negative seed")

    lb_enabled = r.raw("lower_bound", "enabled", "yes").lower() in ("yes", "true", "1", "on")
    lb_order = r.number("lower_bound", "order", int, 1)
    lb_step = r.number("lower_bound", "step", float, 0.01)
    _unit_steps(r, "lower_bound", "step", lb_step)

    sweep_parameter = None
    sweep_values: tuple = ()
    if r.has("sweep"):
        sweep_parameter = r.raw("sweep", "parameter")
        if sweep_parameter not in dict(params):
            r.fail("sweep", "parameter", f"{sweep_parameter!r} is not a parameter of model {model!r}")
        sweep_values = r.numbers("sweep", "values")
        bad = [x for x in sweep_values if not 0.0 <= x <= 1.0]
        if bad or not sweep_values:
            r.fail("sweep", "values", f"values must be a non-empty list within [0, 1], got {bad or 'none'}")

    quantizer_deltas = r.numbers("quantizer", "deltas", float, "")
    quantizer_values = r.numbers("quantizer", "eps_b", float, "")
    for d in quantizer_deltas:
        _unit_steps(r, "quantizer", "deltas", d)
    if quantizer_values and model != "gilbert_elliott":
        r.fail("quantizer", "eps_b", "the quantizer study needs the gilbert_elliott model")
    if any(not 0.0 <= x <= 1.0 for x in quantizer_values):
        r.fail("quantizer", "eps_b", "values must lie in [0, 1]")

    out_dir = r.raw("output", "dir", "results")
    threads = r.number("output", "threads", int, 1)
    return ExperimentConfig(model, params, inline, constraint, bounds, delta, eta, n_iter,
                            budget_grid, budget_policy, N, burn_in, seeds, lb_enabled, lb_order,
                            lb_step, sweep_parameter, sweep_values, quantizer_deltas,
                            quantizer_values, out_dir, threads, text)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return loads_config(text)


def _nums(values) -> str:
    return " ".join(repr(x) for x in values)


def dumps_config(cfg: ExperimentConfig) -> str:
    cp = configparser.ConfigParser()
    ch = {"model": cfg.model}
    ch.update((k, repr(v)) for k, v in cfg.params)
    ch.update(cfg.inline)
    ch["constraint"] = cfg.constraint
    cp["channel"] = ch
    cp["bounds"] = {"triples": " ".join(
        f"{b.u},{b.v},{b.m}" + ("" if b.delta is None else f"@{b.delta!r}") for b in cfg.bounds)}
    cp["dp"] = {"delta": repr(cfg.delta), "eta": repr(cfg.eta), "n_iter": str(cfg.n_iter),
                "budget_grid": str(cfg.budget_grid), "budget_policy": str(cfg.budget_policy)}
    cp["mc"] = {"n": str(cfg.N), "burn_in": str(cfg.burn_in), "seeds": _nums(cfg.seeds)}
    cp["lower_bound"] = {"enabled": "yes" if cfg.lb_enabled else "no", "order": str(cfg.lb_order),
                         "step": repr(cfg.lb_step)}
    if cfg.sweep_parameter is not None:
        cp["sweep"] = {"parameter": cfg.sweep_parameter, "values": _nums(cfg.sweep_values)}
    if cfg.quantizer_deltas or cfg.quantizer_values:
        cp["quantizer"] = {"deltas": _nums(cfg.quantizer_deltas), "eps_b": _nums(cfg.quantizer_values)}
    cp["output"] = {"dir": cfg.out_dir, "threads": str(cfg.threads)}
    buf = StringIO()
    cp.write(buf)
    return buf.getvalue()


def check_channel(cfg: ExperimentConfig) -> ChannelSpec:
    """Build the channel, reporting model errors as config errors."""
    try:
        return cfg.channel()
    except ConfigError:
        raise
    except (FscError, ValueError) as exc:
        raise ConfigError(f"channel: {exc}") from None

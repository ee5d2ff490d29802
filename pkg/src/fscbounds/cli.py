"""Command-line driver: optimize, evaluate, sweep, quantizer-study, oracle-check, info.

Every command writes one CSV file into the output directory.  Independent work
items (sweep points, bounds) go to a thread pool; rows are collected and written
in input order, so the payload does not depend on the number of threads.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from .channel import ChannelSpec
from .checks import format_report, run_identity_suite
from .config import Bound, ExperimentConfig, check_channel, load_config
from .contexts import context_space
from .dp import PolicyTable, composition_count, value_iteration
from .errors import BudgetExceeded, ConfigError, DelayMismatch, DigestMismatch
from .montecarlo import directed_info_rate, markov_lower_bound, timed
from .sources import table_source

log = logging.getLogger("fscbounds")

CSV_COLUMNS = ("model", "eps_b", "u", "v", "m", "delta", "eta", "n_iter", "N_mc", "seed",
               "rate_bits", "std_err", "sigma_dp", "sigma_span", "wall_ms")
PAYLOAD_COLUMNS = CSV_COLUMNS[:-1]

EXIT_OK, EXIT_CONFIG, EXIT_BUDGET, EXIT_ORACLE = 0, 1, 2, 3


def _cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _row(cfg: ExperimentConfig, **kw) -> dict:
    base = {"model": cfg.model, "eps_b": cfg.param("eps_b")}
    base.update(kw)
    return {c: _cell(base.get(c)) for c in CSV_COLUMNS}


def write_csv(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _pool_map(fn, items, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def policy_path(out: Path, channel: ChannelSpec, bound: Bound, delta: float) -> Path:
    return out / "policies" / f"{channel.digest}_{bound.label()}_d{delta!r}.policy"


@dataclass
class _Optimized:
    bound: Bound
    table: PolicyTable
    wall_ms: int


def _optimize(cfg: ExperimentConfig, channel: ChannelSpec, bound: Bound, threads: int = 1) -> _Optimized:
    res, ms = timed(value_iteration, channel, bound.u, bound.v, bound.m, cfg.bound_delta(bound), cfg.eta,
                    cfg.n_iter, threads=threads, grid_budget=cfg.budget_grid, policy_budget=cfg.budget_policy)
    log.info("optimized %s: sigma %.6f span %.2e (%d ms)", bound.label(), res.sigma, res.span, ms)
    return _Optimized(bound, res.policy, ms)


def _optimize_row(cfg: ExperimentConfig, o: _Optimized) -> dict:
    t = o.table
    return _row(cfg, u=t.u, v=t.v, m=t.m, delta=t.delta, eta=t.eta, n_iter=t.n_iter,
                sigma_dp=t.sigma, sigma_span=t.span, wall_ms=o.wall_ms)


def _evaluate_rows(cfg: ExperimentConfig, channel: ChannelSpec, table: PolicyTable) -> list[dict]:
    table.check(channel)
    src = table_source(channel, table)
    rows = []
    for seed in cfg.seeds:
        est, ms = timed(directed_info_rate, channel, src, table.u, table.v, cfg.N, cfg.burn_in, seed)
        log.info("evaluated u%dv%dm%d seed %d: %s", table.u, table.v, table.m, seed, est)
        rows.append(_row(cfg, u=table.u, v=table.v, m=table.m, delta=table.delta, eta=table.eta,
                         n_iter=table.n_iter, N_mc=cfg.N, seed=seed, rate_bits=est.mean,
                         std_err=est.std_error, sigma_dp=table.sigma, sigma_span=table.span, wall_ms=ms))
    return rows


def _lower_bound_rows(cfg: ExperimentConfig, channel: ChannelSpec) -> list[dict]:
    rows = []
    for seed in cfg.seeds:
        (est, _), ms = timed(markov_lower_bound, channel, cfg.lb_order, cfg.lb_step, cfg.N, seed, cfg.burn_in)
        rows.append(_row(cfg, model=f"{cfg.model}/markov_lb", m=cfg.lb_order, eta=cfg.lb_step, N_mc=cfg.N,
                         seed=seed, rate_bits=est.mean, std_err=est.std_error, wall_ms=ms))
    return rows


def cmd_optimize(cfg: ExperimentConfig, out: Path, threads: int = 1) -> list[dict]:
    """Run value iteration per bound, save the policy files, write ``optimize.csv``."""
    channel = check_channel(cfg)
    inner = threads if len(cfg.bounds) <= 1 else 1
    results = _pool_map(lambda b: _optimize(cfg, channel, b, inner), list(cfg.bounds), threads)
    for o in results:
        path = policy_path(out, channel, o.bound, o.table.delta)
        path.parent.mkdir(parents=True, exist_ok=True)
        o.table.save(path)
    rows = [_optimize_row(cfg, o) for o in results]
    write_csv(out / "optimize.csv", rows)
    return rows


def cmd_evaluate(cfg: ExperimentConfig, out: Path, policy_files=None, threads: int = 1) -> list[dict]:
    """Monte Carlo rate of saved policies, one row per (policy, seed), written to ``evaluate.csv``.

    Without explicit files the policies written by ``optimize`` for the configured
    bounds are used.
    """
    channel = check_channel(cfg)
    if not policy_files:
        policy_files = [policy_path(out, channel, b, cfg.bound_delta(b)) for b in cfg.bounds]
    tables = []
    for p in policy_files:
        try:
            tables.append(PolicyTable.load(p))
        except OSError as exc:
            raise ConfigError(f"cannot read policy file {p}: {exc.strerror}") from None
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"malformed policy file {p}: {exc}") from None
    for t in tables:
        t.check(channel)
    rows = [r for rs in _pool_map(lambda t: _evaluate_rows(cfg, channel, t), tables, threads) for r in rs]
    write_csv(out / "evaluate.csv", rows)
    return rows


def _point_rows(cfg: ExperimentConfig) -> list[dict]:
    channel = check_channel(cfg)
    rows = []
    for b in cfg.bounds:
        o = _optimize(cfg, channel, b)
        rows.extend(_evaluate_rows(cfg, channel, o.table))
    if cfg.lb_enabled:
        rows.extend(_lower_bound_rows(cfg, channel))
    return rows


def cmd_sweep(cfg: ExperimentConfig, out: Path, threads: int = 1) -> list[dict]:
    """Optimize and evaluate every bound (and the Markov lower bound) at each sweep value."""
    if cfg.sweep_parameter is None:
        raise ConfigError("sweep: missing section")
    points = [cfg.with_param(cfg.sweep_parameter, x) for x in cfg.sweep_values]
    for p in points:
        check_channel(p)
    rows = [r for rs in _pool_map(_point_rows, points, threads) for r in rs]
    write_csv(out / "sweep.csv", rows)
    return rows


def cmd_quantizer_study(cfg: ExperimentConfig, out: Path, threads: int = 1) -> list[dict]:
    """Fix (u, v, m) = (1, 1, 1) and evaluate the optimized policy for every (eps_b, delta)."""
    if not cfg.quantizer_deltas or not cfg.quantizer_values:
        raise ConfigError("quantizer: needs both deltas and eps_b lists")
    bound = Bound(1, 1, 1)
    points = [replace(cfg.with_param("eps_b", e), bounds=(replace(bound, delta=d),), lb_enabled=False)
              for e in cfg.quantizer_values for d in cfg.quantizer_deltas]
    for p in points:
        check_channel(p)
    rows = [r for rs in _pool_map(_point_rows, points, threads) for r in rs]
    write_csv(out / "quantizer.csv", rows)
    return rows


def cmd_oracle_check(seed: int = 0, instances: int = 4, corrupt: bool = False) -> bool:
    results = run_identity_suite(seed, instances, corrupt)
    print(format_report(results))
    return all(r.passed for r in results)


def cmd_info(cfg: ExperimentConfig) -> str:
    channel = check_channel(cfg)
    lines = [f"model        {cfg.model} {dict(cfg.params) if cfg.params else ''}".rstrip(),
             f"digest       {channel.digest}",
             f"states       {channel.num_states}  inputs {channel.num_inputs}  outputs {channel.num_outputs}",
             f"constraint   {channel.constraint.name}",
             f"stationary   {' '.join(f'{p:.6g}' for p in channel.stationary)}"]
    for b in cfg.bounds:
        space = context_space(channel, b.m, b.u)
        n_adm = int(space.admissible.sum())
        K = round(1 / cfg.bound_delta(b))
        L = round(1 / cfg.eta)
        n_pol = 1
        for allowed in space.allowed_inputs[space.admissible]:
            n_pol *= composition_count(L, int(allowed.sum()))
        lines.append(f"bound {b.label()}  delta {cfg.bound_delta(b)!r}  contexts {space.size} "
                     f"(admissible {n_adm})  grid points {composition_count(K, n_adm)}  "
                     f"joint policies {n_pol}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fscbounds", description="Capacity bounds for finite-state channels.")
    ap.add_argument("command", choices=("optimize", "evaluate", "sweep", "quantizer-study", "oracle-check", "info"))
    ap.add_argument("--config", type=Path, help="experiment config file (INI)")
    ap.add_argument("--out", type=Path, help="output directory (overrides the config)")
    ap.add_argument("--seed", type=int, help="Monte Carlo / oracle master seed (overrides the config)")
    ap.add_argument("--threads", type=int, help="worker threads (overrides the config)")
    ap.add_argument("--budget-grid", type=int, help="max belief grid points")
    ap.add_argument("--budget-policy", type=int, help="max joint policy candidates")
    ap.add_argument("--policy", type=Path, action="append", help="policy file for evaluate (repeatable)")
    ap.add_argument("--instances", type=int, default=4, help="random instances per identity (oracle-check)")
    ap.add_argument("--corrupt", action="store_true", help="oracle-check negative control: perturb one identity")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg = replace(cfg, seeds=(args.seed,))
    if args.threads is not None:
        cfg = replace(cfg, threads=max(1, args.threads))
    if args.budget_grid is not None:
        cfg = replace(cfg, budget_grid=args.budget_grid)
    if args.budget_policy is not None:
        cfg = replace(cfg, budget_policy=args.budget_policy)
    if args.out is not None:
        cfg = replace(cfg, out_dir=str(args.out))
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        if args.command == "oracle-check":
            ok = cmd_oracle_check(args.seed or 0, args.instances, args.corrupt)
            return EXIT_OK if ok else EXIT_ORACLE
        if args.config is None:
            raise ConfigError(f"{args.command} needs --config")
        cfg = _apply_overrides(load_config(args.config), args)
        out, threads = Path(cfg.out_dir), cfg.threads
        if args.command == "info":
            print(cmd_info(cfg))
        elif args.command == "optimize":
            rows = cmd_optimize(cfg, out, threads)
            print(f"wrote {len(rows)} policies and {out / 'optimize.csv'}")
        elif args.command == "evaluate":
            rows = cmd_evaluate(cfg, out, args.policy, threads)
            print(f"wrote {len(rows)} rows to {out / 'evaluate.csv'}")
        elif args.command == "sweep":
            rows = cmd_sweep(cfg, out, threads)
            print(f"wrote {len(rows)} rows to {out / 'sweep.csv'}")
        else:
            rows = cmd_quantizer_study(cfg, out, threads)
            print(f"wrote {len(rows)} rows to {out / 'quantizer.csv'}")
    except (ConfigError, DigestMismatch, DelayMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetExceeded as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

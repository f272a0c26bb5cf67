"""Command-line front end.

Exit codes: 0 success, 1 usage or config error, 2 numerical failure
(diverged runs or a fixed-point iteration that did not converge). Results
are still written when the exit code is 2.

Environment overrides: ``QTDLAB_SEED`` replaces the base seed and
``QTDLAB_JOBS`` the worker count; explicit flags win over both.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import dp, plotting, results
from .envs import EnvSpec, TransitionKind, make_env
from .harness import (
    DEFAULT_CHECKPOINTS,
    DESK_RUNS,
    PAPER_RUNS,
    Agent,
    ExperimentConfig,
    SkewedSpec,
    build_env,
    improvement_from_summaries,
    lr_grid,
    optimal_mse,
    sweep,
)
from .mrp import Mrp, true_value
from .rewards import RewardKind

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _log(msg: str):
    print(msg, flush=True)


def _int_list(text: str) -> list[int]:
    try:
        out = [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _float_list(text: str) -> list[float]:
    try:
        out = [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _env_int(name: str):
    raw = os.environ.get(name)
    if raw is None or raw.strip() == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"environment variable {name} must be an integer, got {raw!r}") from None


def resolve_jobs(flag) -> int:
    jobs = flag if flag is not None else _env_int("QTDLAB_JOBS")
    jobs = 1 if jobs is None else jobs
    if jobs < 1:
        raise UsageError("jobs must be at least 1")
    return jobs


def resolve_seed(flag, default: int = 0) -> int:
    seed = flag if flag is not None else _env_int("QTDLAB_SEED")
    return default if seed is None else seed


# -- environment flags ------------------------------------------------------


def _add_env_flags(p, required=True):
    p.add_argument("--kind", required=required, choices=[k.value for k in TransitionKind] + ["skewed"], help="transition structure")
    p.add_argument("--rewards", default="gaussian", help="pointmass | gaussian | exponential | t2")
    p.add_argument("--n", type=int, default=None, help="number of states")
    p.add_argument("--branching", type=int, default=6, help="Garnet successors per state")
    p.add_argument("--reward-scale", type=float, default=1.0, help="Gaussian reward standard deviation")
    p.add_argument("--gamma", type=float, default=0.9)
    p.add_argument("--env-seed", "--seed", dest="env_seed", type=int, default=0, help="environment seed")
    p.add_argument("--skew", type=float, default=1.0, help="skewed environment payoff scale")
    p.add_argument("--p", type=float, default=0.1, help="skewed environment payoff probability")


def _spec_from_flags(a):
    if a.kind == "skewed":
        return SkewedSpec(skew=a.skew, gamma=a.gamma, p=a.p)
    return EnvSpec(
        transition_kind=a.kind,
        reward_kind=a.rewards,
        n_states=a.n,
        branching=a.branching,
        reward_scale=a.reward_scale,
        gamma=a.gamma,
        seed=a.env_seed,
    )


def _mrp_from_args(a) -> Mrp:
    if getattr(a, "env", None):
        try:
            return Mrp.loads(Path(a.env).read_text(encoding="utf-8"))
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read environment file {a.env}: {exc}") from None
    if a.kind is None:
        raise UsageError("give --env FILE or --kind")
    return build_env(_spec_from_flags(a))


# -- subcommands ------------------------------------------------------------


def cmd_gen_env(a) -> int:
    mrp = build_env(_spec_from_flags(a))
    record = mrp.to_dict()
    record["reward_means"] = mrp.mean_rewards.tolist()
    record["true_value"] = true_value(mrp).tolist()
    text = json.dumps(record, indent=1, sort_keys=True) + "\n"
    if a.output in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(a.output).write_text(text, encoding="utf-8")
        _log(f"wrote {a.output} ({mrp.name}, {mrp.n_states} states)")
    return EXIT_OK


def _apply_overrides(plan: cfgmod.SweepPlan, a) -> cfgmod.SweepPlan:
    shared = dict(plan.shared)
    if a.paper_scale:
        shared["n_runs"] = PAPER_RUNS
    if getattr(a, "runs", None) is not None:
        shared["n_runs"] = a.runs
    shared["base_seed"] = resolve_seed(a.base_seed, shared.get("base_seed", 0))
    return cfgmod.SweepPlan(plan.envs, plan.agents, shared)


def _report_checkpoint(cks) -> int:
    return 1000 if 1000 in cks else cks[-1]


def _run_sweeps(plan, out: Path, jobs: int):
    out.mkdir(parents=True, exist_ok=True)
    by_env: dict = {}
    diverged = 0
    for en, an, cfg in plan.experiments():
        t0 = time.perf_counter()
        mrp = build_env(cfg.env)
        s = sweep(cfg, jobs=jobs, mrp=mrp)
        results.write_sweeps(s, out / f"{en}__{an}.csv")
        ck = _report_checkpoint(s.checkpoints)
        try:
            lr, mse, se = optimal_mse(s, ck)
            best = f"optimal lr {lr:.4g}  MSE {mse:.4g} +- {2 * se:.2g}"
        except ValueError:
            best = "all learning rates diverged"
        _log(f"{s.env_id:32s} {s.label:10s} @{ck:<6d} {best}  [{time.perf_counter() - t0:.1f}s]")
        diverged += s.total_diverged
        by_env.setdefault(en, []).append((an, s))
    return by_env, diverged


def cmd_run_sweep(a) -> int:
    plan = _apply_overrides(cfgmod.load(a.config), a)
    out = Path(a.out)
    by_env, diverged = _run_sweeps(plan, out, resolve_jobs(a.jobs))
    if not a.no_plot:
        for en, items in by_env.items():
            sums = [s for _, s in items]
            ck = _report_checkpoint(sums[0].checkpoints)
            plotting.mse_vs_lr(sums, ck, path=out / f"{en}__mse_vs_lr.svg", title=f"{sums[0].env_id}, {ck} updates")
    if diverged:
        _log(f"warning: {diverged} diverged (lr, checkpoint, run) cells")
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_improvement(a) -> int:
    plan = _apply_overrides(cfgmod.load(a.config), a)
    names = list(plan.agents)
    if len(names) < 2 and not (a.numerator and a.denominator):
        raise UsageError("improvement needs two [agent NAME] sections")
    num = a.numerator or names[1]
    den = a.denominator or names[0]
    for n in (num, den):
        if n not in plan.agents:
            raise UsageError(f"no [agent {n}] section in {a.config}")
    envs = dict(plan.envs)
    if a.sigmas:
        scaled = {}
        for en, env in envs.items():
            if not isinstance(env, EnvSpec) or env.reward_kind is not RewardKind.GAUSSIAN:
                raise UsageError(f"--sigmas needs Gaussian environments; [env {en}] is not")
            for sg in a.sigmas:
                scaled[f"{en}-sd{sg:g}"] = env.with_(reward_scale=sg)
        envs = scaled
    plan = cfgmod.SweepPlan(envs, {den: plan.agents[den], num: plan.agents[num]}, plan.shared)
    out = Path(a.out)
    jobs = resolve_jobs(a.jobs)
    by_env, diverged = _run_sweeps(plan, out, jobs)
    curves = []
    for en, items in by_env.items():
        sums = dict(items)
        curves.append(improvement_from_summaries(sums[num], sums[den]))
    results.write_improvements(curves, out / "improvement.csv")
    if not a.no_plot:
        plotting.improvement_vs_updates(curves, path=out / "improvement_vs_updates.svg")
        plotting.optimal_lr_vs_updates(curves, path=out / "optimal_lr_vs_updates.svg")
    for c in curves:
        k = c.checkpoints.index(_report_checkpoint(c.checkpoints))
        _log(f"{c.env_id:32s} {c.label_a}/{c.label_b} @{c.checkpoints[k]}: ratio {c.ratio[k]:.4g} +- {2 * c.ratio_stderr[k]:.2g}")
    return EXIT_NUMERICAL if diverged else EXIT_OK


def fixed_point_rows(mrp: Mrp, ms, algo: str = "qtd"):
    solve = dp.qdp_fixed_point if algo == "qtd" else dp.pqtd_fixed_point
    rows = []
    for m in ms:
        res = solve(mrp, m)
        rows.append(
            results.FixedPointRow(
                env_id=mrp.name,
                m=m,
                value_error_sup=res.value_error_sup,
                bound_41=dp.bound_prop41(mrp, m),
                bound_42=dp.mrp_bound_prop42(mrp, m),
                iterations=res.iterations,
                residual=res.residual,
                converged=res.converged,
            )
        )
    return rows


def cmd_fixed_point(a) -> int:
    mrp = _mrp_from_args(a)
    rows = fixed_point_rows(mrp, a.m, a.algo)
    text = results.write_fixed_points(rows, a.output if a.output not in (None, "-") else None)
    if a.output in (None, "-"):
        sys.stdout.write(text)
    else:
        for r in rows:
            flag = "" if r.converged else "  NOT CONVERGED"
            _log(f"{r.env_id}  m={r.m:<4d} error {r.value_error_sup:.3e}  bound41 {r.bound_41:.3e}  bound42 {r.bound_42:.3e}{flag}")
    if a.plot:
        plotting.error_vs_m(rows, path=a.plot)
    return EXIT_OK if all(r.converged for r in rows) else EXIT_NUMERICAL


def cmd_plot(a) -> int:
    kind = plotting.FigureKind(a.kind)
    try:
        if kind is plotting.FigureKind.MSE_VS_LR:
            sums = [s for path in a.inputs for s in results.read_sweeps(path)]
            ck = a.checkpoint if a.checkpoint is not None else _report_checkpoint(sums[0].checkpoints)
            plotting.mse_vs_lr(sums, ck, path=a.output, title=a.title)
        elif kind is plotting.FigureKind.ERROR_VS_M:
            rows = [r for path in a.inputs for r in results.read_fixed_points(path)]
            plotting.error_vs_m(rows, path=a.output, title=a.title)
        else:
            curves = [c for path in a.inputs for c in results.read_improvements(path)]
            draw = plotting.improvement_vs_updates if kind is plotting.FigureKind.IMPROVEMENT_VS_UPDATES else plotting.optimal_lr_vs_updates
            draw(curves, path=a.output, title=a.title)
    except (results.SchemaError, KeyError) as exc:
        raise UsageError(f"cannot plot {kind.value}: {exc}") from None
    _log(f"wrote {a.output}")
    return EXIT_OK


# -- full reproduction ------------------------------------------------------

_MAIN_REWARDS = (RewardKind.POINT_MASS, RewardKind.GAUSSIAN, RewardKind.EXPONENTIAL)
_SIGMAS = (0.01, 0.1, 0.3, 1.0, 3.0)
_CERT_MS = (1, 2, 4, 8, 16, 32, 64, 128)
# rough single-core seconds per (run x update) at unit m; QTD scales ~ m log m
_COST = {Agent.TD: 4e-8, Agent.QTD: 1.1e-8}


def _estimate_seconds(n_envs, n_runs, n_lrs, n_updates, m):
    cells = n_envs * n_runs * n_lrs * n_updates
    return cells * (_COST[Agent.TD] + _COST[Agent.QTD] * m * max(1.0, np.log2(m)))


def cmd_repro(a) -> int:
    t_start = time.perf_counter()
    jobs = resolve_jobs(a.jobs)
    seed = resolve_seed(a.base_seed)
    n_runs = PAPER_RUNS if a.paper_scale else (a.runs or DESK_RUNS)
    n_updates = a.n_updates or (10_000 if a.paper_scale else 1000)
    n_lrs = a.n_lrs
    m = a.m
    cks = tuple(c for c in DEFAULT_CHECKPOINTS if c <= n_updates)
    cert_ms = tuple(x for x in _CERT_MS if x <= a.max_dp_m)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)

    def grid(agent):
        full = lr_grid(agent)
        return tuple(np.geomspace(full[0], full[-1], n_lrs)) if n_lrs != len(full) else ()

    def cfgs(env):
        td = ExperimentConfig(env, Agent.TD, lr_grid=grid(Agent.TD), n_updates=n_updates, checkpoints=cks, n_runs=n_runs, base_seed=seed)
        qtd = ExperimentConfig(env, Agent.QTD, m=m, lr_grid=grid(Agent.QTD), n_updates=n_updates, checkpoints=cks, n_runs=n_runs, base_seed=seed)
        return td, qtd

    main_envs = [EnvSpec(tk, rk, seed=a.env_seed) for tk in TransitionKind for rk in _MAIN_REWARDS]
    t2_envs = [EnvSpec(tk, RewardKind.STUDENT_T2, seed=a.env_seed) for tk in TransitionKind]
    cycle = EnvSpec(TransitionKind.CYCLE, RewardKind.GAUSSIAN, seed=a.env_seed)
    sigma_envs = [cycle.with_(reward_scale=s) for s in _SIGMAS]
    n_envs = len(main_envs) + len(t2_envs) + len(sigma_envs)
    est = _estimate_seconds(n_envs, n_runs, n_lrs, n_updates, m) / jobs
    _log(f"repro: {n_envs} environments, {n_runs} runs, {n_lrs} learning rates, {n_updates} updates, QTD({m}), jobs={jobs}")
    _log(f"repro: estimated sweep budget {est / 60:.1f} min plus fixed-point certification")
    diverged = 0

    def compare(envs, tag):
        nonlocal diverged
        rows, sweeps = [], []
        for env in envs:
            t0 = time.perf_counter()
            td_cfg, q_cfg = cfgs(env)
            mrp = make_env(env)
            s_td = sweep(td_cfg, jobs=jobs, mrp=mrp)
            s_q = sweep(q_cfg, jobs=jobs, mrp=mrp)
            diverged += s_td.total_diverged + s_q.total_diverged
            sweeps += [s_td, s_q]
            c = improvement_from_summaries(s_q, s_td)
            rows.append(c)
            ck = _report_checkpoint(cks)
            k = c.checkpoints.index(ck)
            _log(f"  {env.env_id:32s} ratio@{ck} {c.ratio[k]:.4g}  [{time.perf_counter() - t0:.1f}s]")
            plotting.mse_vs_lr([s_td, s_q], ck, path=out / f"{tag}__{env.env_id}__mse_vs_lr.svg", title=f"{env.env_id}, {ck} updates")
        results.write_sweeps(sweeps, out / f"{tag}__sweeps.csv")
        results.write_improvements(rows, out / f"{tag}__improvement.csv")
        plotting.improvement_vs_updates(rows, path=out / f"{tag}__improvement_vs_updates.svg")
        plotting.optimal_lr_vs_updates(rows, path=out / f"{tag}__optimal_lr_vs_updates.svg")
        return rows

    stage = time.perf_counter()
    _log("main suite: learning-rate sweeps and improvement curves")
    compare(main_envs, "main")
    _log(f"  stage time {time.perf_counter() - stage:.1f}s")
    stage = time.perf_counter()
    _log("heavy-tailed rewards")
    compare(t2_envs, "t2")
    _log(f"  stage time {time.perf_counter() - stage:.1f}s")
    stage = time.perf_counter()
    _log("reward-scale sweep on the cycle")
    compare(sigma_envs, "sigma")
    _log(f"  stage time {time.perf_counter() - stage:.1f}s")

    stage = time.perf_counter()
    _log(f"fixed-point certification, m in {list(cert_ms)}")
    cert_rows = []
    for env in main_envs:
        if env.reward_kind in (RewardKind.POINT_MASS, RewardKind.GAUSSIAN):
            cert_rows += fixed_point_rows(make_env(env), cert_ms)
    results.write_fixed_points(cert_rows, out / "fixed_point_bounds.csv")
    plotting.error_vs_m(cert_rows, path=out / "fixed_point_bounds.svg")
    bad = [r for r in cert_rows if r.value_error_sup > min(r.bound_41, r.bound_42) + 1e-8]
    unconverged = [r for r in cert_rows if not r.converged]
    _log(f"  {len(cert_rows)} rows, {len(bad)} bound violations, {len(unconverged)} not converged  [{time.perf_counter() - stage:.1f}s]")

    _log(f"repro: done in {(time.perf_counter() - t_start) / 60:.1f} min (estimate {est / 60:.1f} min for sweeps)")
    if diverged or unconverged or bad:
        return EXIT_NUMERICAL
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def _add_run_flags(p):
    p.add_argument("--jobs", type=int, default=None, help="worker processes (env QTDLAB_JOBS)")
    p.add_argument("--base-seed", type=int, default=None, help="run seed (env QTDLAB_SEED)")
    p.add_argument("--paper-scale", action="store_true", help="use 1000 runs per learning rate")
    p.add_argument("--runs", type=int, default=None, help="override runs per learning rate")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="qtdlab", description="Tabular TD / QTD / PQTD policy-evaluation lab.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-env", help="write a realised environment as JSON")
    _add_env_flags(p)
    p.add_argument("-o", "--output", default=None, help="output file (default stdout)")
    p.set_defaults(func=cmd_gen_env)

    p = sub.add_parser("run-sweep", help="learning-rate sweeps from a config file")
    p.add_argument("config")
    p.add_argument("-o", "--out", default="results", help="output directory")
    p.add_argument("--no-plot", action="store_true")
    _add_run_flags(p)
    p.set_defaults(func=cmd_run_sweep)

    p = sub.add_parser("fixed-point", help="DP fixed-point errors and bounds")
    p.add_argument("--env", default=None, help="environment JSON from gen-env")
    _add_env_flags(p, required=False)
    p.add_argument("--m", type=_int_list, default=list(_CERT_MS), help="comma-separated m values")
    p.add_argument("--algo", choices=("qtd", "pqtd"), default="qtd")
    p.add_argument("-o", "--output", default=None, help="CSV path (default stdout)")
    p.add_argument("--plot", default=None, help="also write an error_vs_m SVG")
    p.set_defaults(func=cmd_fixed_point)

    p = sub.add_parser("improvement", help="optimal-MSE ratio curves from a config file")
    p.add_argument("config")
    p.add_argument("-o", "--out", default="results")
    p.add_argument("--numerator", default=None, help="agent section name (default: second)")
    p.add_argument("--denominator", default=None, help="agent section name (default: first)")
    p.add_argument("--sigmas", type=_float_list, default=None, help="Gaussian reward scales to sweep")
    p.add_argument("--no-plot", action="store_true")
    _add_run_flags(p)
    p.set_defaults(func=cmd_improvement)

    p = sub.add_parser("plot", help="render an SVG figure from result CSVs")
    p.add_argument("kind", choices=[k.value for k in plotting.FigureKind])
    p.add_argument("inputs", nargs="+")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--checkpoint", type=int, default=None)
    p.add_argument("--title", default="")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("repro", help="desk-scale reproduction of the main figures and bound table")
    p.add_argument("-o", "--out", default="repro")
    p.add_argument("--n-updates", type=int, default=None)
    p.add_argument("--n-lrs", type=int, default=40, help="learning rates per grid")
    p.add_argument("--m", type=int, default=128, help="QTD quantile count")
    p.add_argument("--max-dp-m", type=int, default=128, help="largest m in the certification table")
    p.add_argument("--env-seed", type=int, default=0)
    _add_run_flags(p)
    p.set_defaults(func=cmd_repro)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    try:
        return a.func(a)
    except (UsageError, cfgmod.ConfigError) as exc:
        print(f"qtdlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        # invalid parameter combinations surface as ValueError from the library
        print(f"qtdlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"qtdlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, RuntimeError, dp.BracketError) as exc:
        print(f"qtdlab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

"""Command-line harness: run, sweep, spectral, check-bound, selftest.

Exit codes: 0 ok, 1 config error, 2 engine fault, 3 no certified step size,
4 selftest failure.  Human-readable status goes to stdout, machine-readable
data to files under --out, errors to stderr.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import costs, delays, graphs, optimizer, spectral
from .experiment import (
    ConfigError,
    ExperimentConfig,
    apply_overrides,
    build_problem,
    build_run_config,
    build_setting,
    compare_engines,
    config_help_lines,
    load_config,
    run_experiment,
    write_trace,
)
from .optimizer import EngineFault

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ENGINE = 2
EXIT_NO_STEP_SIZE = 3
EXIT_SELFTEST = 4


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    return apply_overrides(cfg, args.set or [])


def cmd_run(args) -> int:
    try:
        cfg = _load(args)
        result = None
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        try:
            problem = build_problem(cfg)
            setting = build_setting(cfg)
            run_cfg = build_run_config(cfg)
            result = optimizer.run(run_cfg, setting, problem)
        except EngineFault as exc:
            print(f"engine fault: {exc}", file=sys.stderr)
            return EXIT_ENGINE
        tag = cfg.get("experiment.tag")
        trace_path = outdir / f"{tag}_trace.csv"
        write_trace(result.records, trace_path)
        print(result.status_line())
        print(f"trace: {trace_path}")
        return EXIT_OK
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def cmd_sweep(args) -> int:
    try:
        cfg = _load(args)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        summaries = run_experiment(cfg, args.out, jobs=args.jobs)
    except EngineFault as exc:
        print(f"engine fault: {exc}", file=sys.stderr)
        return EXIT_ENGINE
    for s in summaries:
        print(
            f"tau_max={s.tau_max} alpha={s.alpha!r} {s.status} "
            f"iters={s.iters} final_gap={s.final_gap!r}"
        )
    return EXIT_OK


def cmd_compare(args) -> int:
    try:
        cfg = _load(args)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        results = compare_engines(cfg, args.out)
    except EngineFault as exc:
        print(f"engine fault: {exc}", file=sys.stderr)
        return EXIT_ENGINE
    print("delay-tolerant: " + results["delayed"].status_line())
    print("delay-free:     " + results["baseline"].status_line())
    return EXIT_OK


def _spectral_inputs(args):
    """Resolve (C, delay map, problem constants) from files or config."""
    cfg = _load(args)
    if args.graph_file:
        g = graphs.load_edge_list(args.graph_file)
        if not graphs.is_strongly_connected(g):
            raise ConfigError("graph file is not strongly connected")
        if args.delay_file:
            d = delays.load_delay_map(args.delay_file, tau_max=cfg.get("delay.tau_max") if args.use_config_tau else None)
        else:
            d = delays.assign_delays(
                g, cfg.get("delay.tau_max"), cfg.get("delay.mode"), cfg.get("delay.seed")
            )
    else:
        from .experiment import build_graph

        g = build_graph(cfg)
        d = delays.assign_delays(
            g, cfg.get("delay.tau_max"), cfg.get("delay.mode"), cfg.get("delay.seed")
        )
    C = graphs.build_column_stochastic_weights(g)
    problem = build_problem(cfg.with_overrides(**{"graph.n": g.n}))
    return cfg, C, d, problem


def _bound_from_report(report, problem):
    return spectral.step_size_bound(
        n=report.n,
        tau_max=report.tau_max,
        sigma=report.sigma,
        kappa=report.kappa,
        epsilon=report.epsilon,
        l=problem.l,
        s=problem.s,
        y=report.y,
        y_minus=report.y_minus,
    )


def cmd_spectral(args) -> int:
    try:
        cfg, C, d, problem = _spectral_inputs(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report = spectral.build_spectral_report(C.entries, d)
    for line in report.lines():
        print(line)
    bound_err = None
    try:
        bound = _bound_from_report(report, problem)
    except ValueError as exc:
        bound_err = str(exc)
        bound = None
    if bound is not None:
        print(f"{'delta':<13}  {bound.delta!r}")
        print(f"{'theta':<13}  {bound.theta!r}")
        print(f"{'alpha3':<13}  {bound.alpha3!r}")
        print(f"{'cap':<13}  {bound.cap!r}")
        print(f"{'admissible':<13}  {bound.admissible_max!r}")
    if args.record:
        extra = ""
        if bound is not None:
            extra = (
                f" delta={bound.delta!r} theta={bound.theta!r}"
                f" alpha3={bound.alpha3!r} cap={bound.cap!r}"
                f" admissible_max={bound.admissible_max!r}"
            )
        print(report.record() + extra)
    if bound is None or not (report.sigma < 1.0 and bound.admissible_max > 0.0):
        msg = bound_err or "sigma >= 1"
        print(f"no certified step size: {msg}", file=sys.stderr)
        return EXIT_NO_STEP_SIZE
    return EXIT_OK


def cmd_check_bound(args) -> int:
    try:
        cfg, C, d, problem = _spectral_inputs(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report = spectral.build_spectral_report(C.entries, d)
    try:
        bound = _bound_from_report(report, problem)
    except ValueError as exc:
        print(f"no certified step size: {exc}", file=sys.stderr)
        return EXIT_NO_STEP_SIZE
    alpha = cfg.get("run.alpha")
    verdict = "CERTIFIED" if bound.certifies(alpha) else "UNCERTIFIED"
    print(f"alpha={alpha!r} admissible_max={bound.admissible_max!r} {verdict}")
    if verdict == "UNCERTIFIED":
        print(
            "note: alpha outside the certified interval; convergence is "
            "not guaranteed by the bound (it may still converge)",
        )
    return EXIT_OK


def _suite_weights(fault: str | None) -> None:
    for seed in (7, 8):
        g = graphs.generate_erdos_renyi(8, 0.4, seed)
        C = graphs.build_column_stochastic_weights(g)
        entries = C.entries.copy()
        if fault == "weights":
            entries[0, 0] += 1e-6
        colsums = entries.sum(axis=0)
        if np.max(np.abs(colsums - 1.0)) > 1e-12:
            raise AssertionError("weight matrix columns drifted from 1")
        diag = np.diag(entries)
        if np.any(diag <= 0):
            raise AssertionError("weight diagonal must stay positive")
        for j, i in g.edges:
            if i != j and entries[i, j] == 0:
                raise AssertionError("missing weight on an edge")


def _suite_gradients(fault: str | None) -> None:
    probs = [
        costs.make_quadratic(3, 4, 0),
        costs.make_least_squares(3, 3, 5, 1),
        costs.make_logistic(3, 3, 12, 0.1, 2),
        costs.make_smooth_svm(3, 3, 12, 1.0, 5.0, 3),
    ]
    rng = np.random.default_rng(0)
    for prob in probs:
        model = prob.locals[0]
        for _ in range(5):
            z = rng.standard_normal(prob.dim)
            g = model.grad(z)
            step = 1e-6 * (1.0 + np.linalg.norm(z))
            fd = np.empty_like(g)
            for idx in range(prob.dim):
                e = np.zeros(prob.dim)
                e[idx] = step
                fd[idx] = (model.eval(z + e) - model.eval(z - e)) / (2 * step)
            rel = np.linalg.norm(fd - g) / (1.0 + np.linalg.norm(g))
            if rel > 1e-5:
                raise AssertionError(f"gradient check failed: rel err {rel:.2e}")


def _suite_reduction(fault: str | None) -> None:
    g = graphs.generate_erdos_renyi(6, 0.5, 11)
    C = graphs.build_column_stochastic_weights(g)
    d = delays.assign_delays(g, 0, "zero", 0)
    prob = costs.make_quadratic(6, 3, 5)
    s1 = optimizer.init_states(prob, 6, 1)
    s2 = optimizer.init_states(prob, 6, 1)
    e1 = optimizer.DtacEngine(prob, s1, C, d, 0.01)
    e2 = optimizer.AddOptEngine(prob, s2, C, 0.01)
    for _ in range(200):
        e1.step()
        e2.step()
    if np.max(np.abs(e1.live_x - e2.live_x)) > 1e-14:
        raise AssertionError("zero-delay engine does not reduce to the baseline")


def _suite_equivalence(fault: str | None) -> None:
    for n, tau, seed in ((4, 2, 12), (6, 3, 13)):
        g = graphs.generate_erdos_renyi(n, 0.6, seed)
        C = graphs.build_column_stochastic_weights(g)
        d = delays.assign_delays(g, tau, "uniform-random", seed)
        prob = costs.make_quadratic(n, 3, seed)
        e1 = optimizer.DtacEngine(prob, optimizer.init_states(prob, n, 7), C, d, 0.004)
        slices = delays.build_delay_slices(C, d)
        aug = delays.build_augmented_matrix(slices, n)
        e2 = optimizer.AugmentedEngine(prob, optimizer.init_states(prob, n, 7), aug, 0.004)
        for _ in range(150):
            e1.step()
            e2.step()
            if np.max(np.abs(e1.live_x - e2.live_x)) > 1e-10:
                raise AssertionError("per-node and matrix-form engines disagree")


def _suite_conservation(fault: str | None) -> None:
    g = graphs.generate_erdos_renyi(8, 0.5, 21)
    C = graphs.build_column_stochastic_weights(g)
    d = delays.assign_delays(g, 4, "uniform-random", 22)
    prob = costs.make_quadratic(8, 3, 23)
    e = optimizer.DtacEngine(prob, optimizer.init_states(prob, 8, 2), C, d, 0.004)
    for _ in range(300):
        e.step()
        if abs(e.mass - 8) > 1e-10:
            raise AssertionError("weight mass drifted")
        resid = np.linalg.norm(e.tracker_mass - e.grad_prev.sum(axis=0))
        if resid / (1.0 + np.linalg.norm(e.grad_prev.sum(axis=0))) > 1e-9:
            raise AssertionError("tracker mass drifted from gradient mass")


def _suite_spectral_bound(fault: str | None) -> None:
    rng = np.random.default_rng(31)
    for trial in range(20):
        n = 6
        M = rng.random((n, n)) * (rng.random((n, n)) < 0.6)
        np.fill_diagonal(M, rng.random(n))
        rho = spectral.spectral_radius(M)
        if rho == 0:
            continue
        M *= 0.9 / rho
        edges = {(j, i) for i, j in zip(*np.nonzero(M)) if i != j}
        tau_max = 2
        d = delays.DelayMap(
            tau={e: int(rng.integers(0, tau_max + 1)) for e in sorted(edges)},
            tau_max=tau_max,
        )
        if not spectral.verify_spectral_bound(M, tau_max, d):
            raise AssertionError("spectral-radius bound violated")


SELFTEST_SUITES = (
    ("column-stochasticity", _suite_weights),
    ("gradient-check", _suite_gradients),
    ("reduction", _suite_reduction),
    ("oracle-equivalence", _suite_equivalence),
    ("conservation", _suite_conservation),
    ("spectral-bound", _suite_spectral_bound),
)


def run_selftest(inject_fault: str | None = None) -> tuple[bool, list[str]]:
    lines = []
    all_ok = True
    for name, suite in SELFTEST_SUITES:
        t0 = time.perf_counter()
        try:
            suite(inject_fault)
            status = "PASS"
        except AssertionError as exc:
            status = f"FAIL ({exc})"
            all_ok = False
        dt = time.perf_counter() - t0
        lines.append(f"SUITE {name:<22} {status}  [{dt:.2f}s]")
    return all_ok, lines


def cmd_selftest(args) -> int:
    ok, lines = run_selftest(getattr(args, "inject_fault", None))
    for line in lines:
        print(line)
    if not ok:
        failing = [ln.split()[1] for ln in lines if "FAIL" in ln]
        print(f"selftest failed: {', '.join(failing)}", file=sys.stderr)
        return EXIT_SELFTEST
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="experiment config file (flat key = value)")
    parser.add_argument(
        "--set",
        action="append",
        metavar="K=V",
        help="override a config key (repeatable), e.g. --set run.alpha=0.001",
    )
    parser.add_argument("--out", default="out", help="output directory")


def _add_spectral_inputs(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--graph-file", help="edge list `j i` per line")
    parser.add_argument("--delay-file", help="delay list `j i tau` per line")
    parser.add_argument(
        "--use-config-tau",
        action="store_true",
        help="take tau_max from the config instead of the delay file maximum",
    )


def build_parser() -> argparse.ArgumentParser:
    epilog = "config keys:\n" + "\n".join(config_help_lines())
    parser = argparse.ArgumentParser(
        prog="dtacopt",
        description="Delay-tolerant distributed optimization over digraphs",
        epilog=epilog,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fmt = argparse.RawDescriptionHelpFormatter
    p_run = sub.add_parser("run", help="single run", epilog=epilog, formatter_class=fmt)
    _add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser(
        "sweep", help="tau_max x alpha sweep", epilog=epilog, formatter_class=fmt
    )
    _add_common(p_sweep)
    p_sweep.add_argument("--jobs", type=int, default=1, help="parallel runs")
    p_sweep.set_defaults(func=cmd_sweep)

    p_cmp = sub.add_parser(
        "compare",
        help="delayed run vs delay-free baseline",
        epilog=epilog,
        formatter_class=fmt,
    )
    _add_common(p_cmp)
    p_cmp.set_defaults(func=cmd_compare)

    p_spec = sub.add_parser(
        "spectral",
        help="spectral report and step-size bound",
        epilog=epilog,
        formatter_class=fmt,
    )
    _add_common(p_spec)
    _add_spectral_inputs(p_spec)
    p_spec.add_argument(
        "--record", action="store_true", help="also print a single-line record"
    )
    p_spec.set_defaults(func=cmd_spectral)

    p_chk = sub.add_parser(
        "check-bound",
        help="check the configured alpha against the certified interval",
        epilog=epilog,
        formatter_class=fmt,
    )
    _add_common(p_chk)
    _add_spectral_inputs(p_chk)
    p_chk.set_defaults(func=cmd_check_bound)

    p_self = sub.add_parser("selftest", help="run the built-in invariant suites")
    p_self.add_argument("--inject-fault", help=argparse.SUPPRESS)
    p_self.set_defaults(func=cmd_selftest)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

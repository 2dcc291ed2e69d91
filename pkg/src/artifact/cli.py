"""Command line: ``stackelberg-lq {solve,simulate,verify,report}``.

Exit codes: 0 success, 1 usage or configuration error, 2 a solvability
gate failed, 3 a verification suite failed.  Every command writes into
``--out`` and lists each file with its SHA-256 in ``manifest.txt``.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
from pathlib import Path

SUITES = ("lemma", "decoupling", "stacked", "filter", "nash", "smp")
EXIT_OK, EXIT_USAGE, EXIT_GATE, EXIT_VERIFY = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stackelberg-lq",
                                description="Solve, simulate and verify the LQ leader-follower game.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("solve", "Riccati sweeps, gains and gate diagnostics"),
                        ("simulate", "Monte Carlo closed loop and cost report"),
                        ("verify", "run verification suites"),
                        ("report", "solve and simulate, then write a markdown summary")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True, help="TOML model file")
        s.add_argument("--out", default="out", help="output directory")
        s.add_argument("--steps", type=int, default=None, help="override the grid size")
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--paths", type=int, default=None, help="Monte Carlo paths")
        s.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
        if name == "verify":
            s.add_argument("--suite", default="all",
                           help="comma separated subset of " + ",".join(SUITES) + " or 'all'")
            s.add_argument("--corrupt", default=None, metavar="TARGET:INDEX:DELTA",
                           help="test hook: shift one gain entry before verifying")
    return p


def _cap_threads(n):
    if n is None:
        return
    if n < 1:
        raise UsageError("--threads must be at least 1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return
    threadpool_limits(n)


def _load(args):
    from .errors import ConfigError
    from .model import TimeGrid, load_model
    path = Path(args.config)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    model, grid = load_model(path.read_text())
    if args.steps is not None:
        if args.steps < 1:
            raise UsageError("--steps must be positive")
        grid = TimeGrid(grid.T, args.steps)
    return model, grid


class _Writer:
    def __init__(self, out: str):
        self.dir = Path(out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files = []

    def write(self, name: str, text: str):
        (self.dir / name).write_text(text)
        self.files.append(name)

    def write_bytes(self, name: str, data: bytes):
        (self.dir / name).write_bytes(data)
        self.files.append(name)

    def manifest(self, args, grid, extra=None):
        lines = [f"command: {args.command}", f"config: {args.config}", f"seed: {args.seed}",
                 f"steps: {grid.n_steps}", f"paths: {args.paths}", f"out: {args.out}"]
        for k, v in sorted((extra or {}).items()):
            lines.append(f"{k}: {v}")
        lines.append("files:")
        for name in sorted(self.files):
            h = hashlib.sha256((self.dir / name).read_bytes()).hexdigest()
            lines.append(f"  {h}  {name}")
        (self.dir / "manifest.txt").write_text("\n".join(lines) + "\n")


def _gate_report(eq) -> str:
    import numpy as np
    flags = eq.model.flags(eq.grid)
    detN = np.array([p.gains.detN for p in eq.ftab.points])
    lines = [f"A1 {'holds' if flags.A1 else 'violated'}",
             f"A3 {'holds' if flags.A3 else 'does not hold'}",
             f"A4 {'holds' if flags.A4 else 'violated'}",
             f"min |det N| over grid: {np.min(np.abs(detN)):.6g}"]
    for key, vals in sorted(_stage_minima(eq).items()):
        lines.append(f"{key}: {vals:.6g}")
    lines += [f"note: {m}" for m in flags.messages]
    if eq.follower.note:
        lines.append(f"note: {eq.follower.note}")
    return "\n".join(lines) + "\n"


def _stage_minima(eq) -> dict:
    import numpy as np
    stages = ("A5 checkhat", "A6 check", "A7 hat", "A8 full")
    r = np.asarray(eq.leader.rconds)
    return {f"min rcond {name}": float(np.min(r[:, i])) for i, name in enumerate(stages)}


def _solve(model, grid):
    from .equilibrium import solve_equilibrium
    return solve_equilibrium(model, grid)


def cmd_solve(args) -> int:
    from .equilibrium import gains_csv
    from .follower_stage import follower_csv
    from .leader_assembly import matrices_csv
    from .leader_riccati import leader_csv
    model, grid = _load(args)
    eq = _solve(model, grid)
    w = _Writer(args.out)
    w.write("follower_riccati.csv", follower_csv(model, eq.follower))
    w.write("leader_riccati.csv", leader_csv(eq.leader))
    w.write("gains.csv", gains_csv(eq))
    w.write("leader_matrices_t0.csv", matrices_csv(eq.leader.mats[:1]))
    w.write("gates.txt", _gate_report(eq))
    w.manifest(args, grid)
    print(f"solved on {grid.n_steps} steps: P~1(0)={eq.follower.Ptilde1[0]:.8g} "
          f"P~2(0)={eq.follower.Ptilde2[0]:.8g}")
    return EXIT_OK


def _costs_text(mean, se) -> str:
    return "".join(f"J{j + 1} {mean[j]:.10g} se {se[j]:.3g}\n" for j in range(4))


def _plot(sim, path):
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return None
    import io
    matplotlib.rcParams["svg.hashsalt"] = "stackelberg-lq"
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for lev, lab in enumerate(("x", "x hat", "x check", "x checkhat")):
        ax.plot(sim.t, sim.X[path, :, lev, 0], label=lab)
    ax.set_xlabel("t")
    ax.legend()
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buf.getvalue()


def _paths_arg(args, default):
    n = default if args.paths is None else args.paths
    if n < 1:
        raise UsageError("--paths must be at least 1")
    return n


def cmd_simulate(args) -> int:
    from .simulator import paths_for, simulate_closed_loop, trajectory_csv
    n_paths = _paths_arg(args, 1000)
    model, grid = _load(args)
    eq = _solve(model, grid)
    sim = simulate_closed_loop(eq, paths_for(eq, args.seed, n_paths), store=True)
    mean, se = sim.cost_summary()
    w = _Writer(args.out)
    w.write("costs.txt", _costs_text(mean, se))
    w.write("trajectory_path0.csv", trajectory_csv(sim, 0))
    svg = _plot(sim, 0)
    if svg is not None:
        w.write("trajectory_path0.svg", svg)
    w.manifest(args, grid)
    sys.stdout.write(_costs_text(mean, se))
    return EXIT_OK


def _parse_corrupt(spec):
    if spec is None:
        return None
    parts = spec.split(":")
    if len(parts) != 3:
        raise UsageError("--corrupt expects TARGET:INDEX:DELTA")
    try:
        return parts[0], int(parts[1]), float(parts[2])
    except ValueError:
        raise UsageError("--corrupt expects TARGET:INDEX:DELTA") from None


def _run_suites(eq, names, args):
    """Yield ``(suite, passed, lines)`` for each selected suite."""
    import numpy as np
    from . import verifier as V
    from .decoupler import relation_residual
    from .equilibrium import corrupt, solve_equilibrium
    from .leader_assembly import stacked_drift_residual
    from .model import TimeGrid
    from .simulator import paths_for

    if "lemma" in names:
        res = V.lemma_suite(eq.model, eq.grid)
        if res["status"] == "skipped":
            yield "lemma", True, [f"skipped: {res['reason']}"]
        else:
            worst = max(v for k, v in res.items() if k != "status")
            yield "lemma", worst <= 1e-6, [f"{k} {v:.3e}" for k, v in res.items() if k != "status"]
    if "decoupling" in names:
        worst = max(relation_residual(m, P, s) for m, P, s in zip(eq.leader.mats, eq.leader.P, eq.script))
        yield "decoupling", worst <= 1e-9, [f"max relation residual {worst:.3e}"]
    if "stacked" in names:
        r = stacked_drift_residual(eq, paths_for(eq, args.seed, 200))
        yield "stacked", r <= 5 * eq.grid.dt, [f"sup residual {r:.3e} (bound {5 * eq.grid.dt:.3e})"]
    if "filter" in names:
        rep = V.filter_oracle(eq, args.seed, _paths_arg(args, 20000))
        lines = [f"{k} max|z| {np.max(np.abs(z)):.3f}" for k, z in rep.z_scores.items()]
        yield "filter", rep.max_abs_z <= 3, lines
    if "nash" in names:
        ok, lines = True, []
        for pl in (1, 2, 3, 4):
            reps, fits = V.nash_deviation_test(eq, pl, n_paths=_paths_arg(args, 10000), seed=args.seed + 1)
            bad = [r for r in reps if not r.passed]
            curv = all(f.curvature_ok for f in fits)
            ok &= not bad and curv
            lines.append(f"player {pl}: {len(reps) - len(bad)}/{len(reps)} deviations non-improving, "
                         f"min a {min(f.a for f in fits if not f.void):.4g}"
                         + (f", {sum(f.void for f in fits)} void" if any(f.void for f in fits) else ""))
        yield "nash", ok, lines
    if "smp" in names:
        base = eq.grid.n_steps
        target = args.corrupt_spec

        def solve(n):
            e = solve_equilibrium(eq.model, TimeGrid(eq.grid.T, n))
            return corrupt(e, *target) if target else e

        res, orders = V.smp_order_study(solve, steps=(base, 2 * base, 4 * base), seed=args.seed + 2,
                                        n_paths=_paths_arg(args, 2000))
        lines = [f"steps {base * 2 ** i}: " + " ".join(f"{v:.3e}" for v in row) for i, row in enumerate(res)]
        lines.append("orders: " + " ".join(f"{v:.3f}" for v in orders.ravel()))
        yield "smp", bool(np.all(V.smp_order_ok(res, orders))), lines


def cmd_verify(args) -> int:
    from .equilibrium import corrupt
    names = SUITES if args.suite == "all" else tuple(s.strip() for s in args.suite.split(","))
    unknown = set(names) - set(SUITES)
    if unknown:
        raise UsageError(f"unknown suite(s): {', '.join(sorted(unknown))}")
    args.corrupt_spec = _parse_corrupt(args.corrupt)
    model, grid = _load(args)
    eq = _solve(model, grid)
    if args.corrupt_spec:
        try:
            eq = corrupt(eq, *args.corrupt_spec)
        except (ValueError, IndexError) as exc:
            raise UsageError(f"--corrupt: {exc}") from None
    out, all_ok = [], True
    for suite, ok, lines in _run_suites(eq, names, args):
        all_ok &= ok
        out.append(f"[{'PASS' if ok else 'FAIL'}] {suite}")
        out += [f"    {line}" for line in lines]
        print(out[-len(lines) - 1])
    w = _Writer(args.out)
    w.write("verify.txt", "\n".join(out) + "\n")
    w.manifest(args, grid, {"suite": ",".join(names), "corrupt": args.corrupt})
    return EXIT_OK if all_ok else EXIT_VERIFY


def cmd_report(args) -> int:
    from .simulator import paths_for, simulate_closed_loop
    n_paths = _paths_arg(args, 2000)
    model, grid = _load(args)
    eq = _solve(model, grid)
    sim = simulate_closed_loop(eq, paths_for(eq, args.seed, n_paths))
    mean, se = sim.cost_summary()
    P0 = eq.leader.P[0]
    lines = ["# Solve report", "", f"- horizon {grid.T}, steps {grid.n_steps}, x0 {model.x0}",
             f"- follower Riccati at t=0: {eq.follower.Ptilde1[0]:.8g}, {eq.follower.Ptilde2[0]:.8g}",
             "", "## Gates", "", "```", _gate_report(eq).rstrip(), "```", "",
             "## Leader Riccati blocks at t=0", ""]
    for lev, name in enumerate(("P1", "P2", "P3", "P4")):
        lines.append(f"{name}:")
        lines += ["    " + " ".join(f"{v: .6f}" for v in row) for row in P0[lev]]
    lines += ["", "## Gains at t=0", ""]
    from .equilibrium import GAIN_NAMES
    for name in GAIN_NAMES:
        lines.append(f"- {name}: " + " ".join(f"{v:.6g}" for v in getattr(eq.gains, name)[0]))
    lines += ["", f"## Costs ({n_paths} paths, seed {args.seed})", "", "```", _costs_text(mean, se).rstrip(), "```"]
    w = _Writer(args.out)
    w.write("report.md", "\n".join(lines) + "\n")
    w.manifest(args, grid)
    print(f"wrote {Path(args.out) / 'report.md'}")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "verify": cmd_verify, "report": cmd_report}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    from .errors import BlowUpError, ConfigError, GateError
    try:
        _cap_threads(args.threads)
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except GateError as exc:
        print(f"gate failure [{exc.assumption}]: {exc}", file=sys.stderr)
        return EXIT_GATE
    except BlowUpError as exc:
        print(f"gate failure [blow-up]: {exc}", file=sys.stderr)
        return EXIT_GATE


if __name__ == "__main__":
    sys.exit(main())

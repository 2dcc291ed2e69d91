"""The eleven acceptance criteria, each printing one PASS/FAIL line."""

from __future__ import annotations

import time

import numpy as np
import pytest

from artifact.decoupler import relation_residual
from artifact.equilibrium import GAIN_NAMES, corrupt, solve_equilibrium
from artifact.errors import BlowUpError, GateError
from artifact.follower_stage import solve_follower_riccati
from artifact.leader_assembly import C, CH, F, H
from artifact.model import ModelCoefficients, TimeGrid
from artifact.simulator import paths_for, simulate_closed_loop
from artifact.verifier import (filter_oracle, nash_deviation_test, smp_order_ok, smp_order_study)
from helpers import generic_model, record, smooth, smooth_symmetric_model, zero_cost_model

NASH_PATHS = 10_000
SMP_STEPS = (200, 400, 800)


@pytest.fixture(scope="module")
def nash_eq():
    return solve_equilibrium(generic_model(), TimeGrid(1.0, 100))


def smooth_model() -> ModelCoefficients:
    """Asymmetric model whose coefficients all vary smoothly in time."""
    m = generic_model()
    return m.replace(
        a=(smooth(lambda t: 0.2 * np.cos(3 * t)), 0.1, 0.0, smooth(lambda t: 0.15 + 0.05 * t)),
        b=(smooth(lambda t: 1.0 + 0.3 * np.sin(2 * t)), 0.2, 0.0, 0.1),
        c=(smooth(lambda t: 0.8 + 0.2 * t * t), 0.1, 0.0, 0.2),
        d=(smooth(lambda t: 0.7 + 0.1 * np.sin(t)), 0.1, 0.2, 0.1),
        Q=(smooth(lambda t: 1.0 + 0.5 * t * t), 0.8, smooth(lambda t: 1.2 - 0.2 * t), 0.9),
        R=(smooth(lambda t: 1.0 + 0.2 * np.sin(t)), 1.2, 0.9, 1.1),
    )


def test_criterion_01_symmetric_sum_identity():
    model = smooth_symmetric_model()
    t0 = time.perf_counter()
    sol = solve_follower_riccati(model, TimeGrid(1.0, 800))
    elapsed = time.perf_counter() - t0
    gap = float(np.max(np.abs(sol.Ptilde1 + sol.Ptilde2 - sol.Ptilde_sum)))
    ok = sol.symmetric and gap <= 1e-6 and elapsed < 1.0
    assert record(1, ok, f"max|P~1+P~2-P~| = {gap:.2e} (<= 1e-6), {elapsed:.2f} s at 800 steps (< 1 s)")


def test_criterion_02_closed_form_riccati():
    model = ModelCoefficients.from_constants(b=(1, 0, 0, 0), c=(1, 0, 0, 0), G=(0.5, 0.5, 0, 0))
    t0 = time.perf_counter()
    sol = solve_follower_riccati(model, TimeGrid(1.0, 100))
    elapsed = time.perf_counter() - t0
    t = sol.grid.nodes
    g = 0.5
    exact = 0.5 * 2 * g / (1 + 2 * g * (1.0 - t))
    err = float(np.max(np.abs(sol.Ptilde1 - exact)))
    ok = abs(sol.Ptilde1[0] - 0.25) <= 1e-6 and err <= 1e-6 and elapsed < 1.0
    assert record(2, ok, f"P~1(0) = {sol.Ptilde1[0]:.10f}, max error {err:.2e} (<= 1e-6), "
                         f"{elapsed:.2f} s (< 1 s)")


def test_criterion_03_zero_data_fixpoint():
    eq = solve_equilibrium(zero_cost_model(), TimeGrid(1.0, 50))
    sim = simulate_closed_loop(eq, paths_for(eq, 0, 100), store=True)
    families = ("N", "Ncheck", "Ntilde", "Nhat", "Ncheckhat", "script")
    checks = {
        "P~": np.all(eq.leader.Ptilde == 0.0) and np.all(eq.follower.Ptilde1 == 0.0)
        and np.all(eq.follower.Ptilde2 == 0.0),
        "P1..P4": np.all(eq.leader.P == 0.0),
        "integrand gains": all(np.all(getattr(g, f) == 0.0) for g in eq.leader.gains for f in families),
        "control gains": all(np.all(getattr(eq.gains, n) == 0.0) for n in GAIN_NAMES),
        "controls": np.all(sim.u == 0.0),
        "costs": np.all(sim.J == 0.0),
    }
    bad = [k for k, v in checks.items() if not v]
    assert record(3, not bad, "all exactly zero" if not bad else "nonzero: " + ", ".join(bad))


def random_small_model(rng) -> ModelCoefficients:
    def four(lo, hi):
        return tuple(float(v) for v in rng.uniform(lo, hi, 4))
    return ModelCoefficients.from_constants(
        a=four(-0.3, 0.3), b=four(-1.0, 1.0), c=four(-1.0, 1.0), d=four(-1.0, 1.0), e=four(-1.0, 1.0),
        Q=four(0.0, 1.5), R=four(0.5, 1.5), G=four(0.0, 1.0), x0=float(rng.uniform(-2, 2)), T=1.0,
    )


def test_criterion_04_decoupling_residuals():
    rng = np.random.default_rng(20240)
    t0 = time.perf_counter()
    worst, solved, rejected = 0.0, 0, 0
    while solved < 20:
        model = random_small_model(rng)
        try:
            eq = solve_equilibrium(model, TimeGrid(1.0, 40))
        except (GateError, BlowUpError):
            rejected += 1
            continue
        solved += 1
        for m, P, S in zip(eq.leader.mats, eq.leader.P, eq.script):
            worst = max(worst, relation_residual(m, P, S))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and elapsed < 10.0
    assert record(4, ok, f"max node residual {worst:.2e} over 20 models (<= 1e-9), "
                         f"{rejected} gate rejections, {elapsed:.2f} s (< 10 s)")


def test_criterion_05_rk4_order():
    model = smooth_model()
    vals = {}
    for n in (200, 400, 800):
        eq = solve_equilibrium(model, TimeGrid(1.0, n))
        vals[n] = (eq.follower.Ptilde1[0], eq.leader.P[0, 0].copy())
    factors = []
    for q in range(2):
        d1 = np.max(np.abs(np.asarray(vals[200][q]) - vals[400][q]))
        d2 = np.max(np.abs(np.asarray(vals[400][q]) - vals[800][q]))
        factors.append(d1 / d2)
    ok = min(factors) >= 8.0
    assert record(5, ok, f"self-difference factors P~1(0) {factors[0]:.1f}, P1(0) {factors[1]:.1f} (>= 8)")


def test_criterion_06_filter_oracle():
    eq = solve_equilibrium(generic_model(), TimeGrid(1.0, 200))
    t0 = time.perf_counter()
    rep = filter_oracle(eq, seed=2024, m_particles=20_000, n_checkpoints=5)
    elapsed = time.perf_counter() - t0
    ok = rep.max_abs_z <= 3.0 and elapsed < 60.0 and len(rep.checkpoints) == 5
    assert record(6, ok, f"max|z| = {rep.max_abs_z:.2f} (<= 3) over 4 estimates x 5 checkpoints x 5 "
                         f"components, {elapsed:.1f} s (< 60 s)")


def _nash(eq, players):
    t0 = time.perf_counter()
    n_bad, min_z, curv = 0, np.inf, True
    for pl in players:
        reports, fits = nash_deviation_test(eq, pl, n_paths=NASH_PATHS, seed=11)
        n_bad += sum(not r.passed for r in reports)
        min_z = min(min_z, min(r.deltaJ / r.se if r.se > 0 else np.inf for r in reports))
        curv &= all(f.curvature_ok for f in fits)
    return n_bad, min_z, curv, time.perf_counter() - t0


def test_criterion_07_follower_nash(nash_eq):
    n_bad, min_z, curv, elapsed = _nash(nash_eq, (1, 2))
    ok = n_bad == 0 and curv and elapsed < 120.0
    assert record(7, ok, f"{80 - n_bad}/80 deviations with dJ >= -3 SE (min dJ/SE {min_z:.2f}), "
                         f"positive curvature {curv}, {elapsed:.1f} s (< 120 s)")


def test_criterion_08_leader_nash(nash_eq):
    n_bad, min_z, curv, elapsed = _nash(nash_eq, (3, 4))
    ok = n_bad == 0 and elapsed < 120.0
    assert record(8, ok, f"{80 - n_bad}/80 deviations with dJ >= -3 SE (min dJ/SE {min_z:.2f}), "
                         f"{elapsed:.1f} s (< 120 s)")


def test_criterion_09_smp_stationarity():
    model = generic_model()
    res, orders = smp_order_study(lambda n: solve_equilibrium(model, TimeGrid(1.0, n)), SMP_STEPS)
    ok = bool(np.all(smp_order_ok(res, orders, 0.4)))
    assert record(9, ok, "min observed order " + f"{np.nanmin(orders):.2f} (>= 0.4), "
                         "finest residuals " + " ".join(f"{v:.1e}" for v in res[-1]))


def test_criterion_10_adaptedness(nash_eq):
    eq = nash_eq
    run = lambda seeds: simulate_closed_loop(eq, paths_for(eq, 3, 50, component_seeds=seeds),    # noqa: E731
                                             store=True, costs=False)
    base, new_w2, new_w1 = run((3, 3, 3)), run((3, 91, 3)), run((91, 3, 3))
    checks = {
        "W2 leaves X^": np.array_equal(base.X[:, :, H], new_w2.X[:, :, H]),
        "W2 leaves X^v": np.array_equal(base.X[:, :, CH], new_w2.X[:, :, CH]),
        "W1 leaves Xv": np.array_equal(base.X[:, :, C], new_w1.X[:, :, C]),
        "W1 leaves X^v": np.array_equal(base.X[:, :, CH], new_w1.X[:, :, CH]),
        "t=0 estimates": all(np.array_equal(base.X[p, 0, lev], eq.X0) for p in range(50) for lev in range(4)),
        "W2 reaches X": not np.array_equal(base.X[:, :, F], new_w2.X[:, :, F]),
    }
    bad = [k for k, v in checks.items() if not v]
    assert record(10, not bad, "bit-identical estimates under regenerated noise" if not bad
                  else "violated: " + ", ".join(bad))


def test_criterion_11_negative_control(nash_eq):
    target = ("u1_on_hat", 0, 0.1)
    bad_eq = corrupt(nash_eq, *target)
    decoupling = max(relation_residual(m, P, S) for m, P, S in
                     zip(bad_eq.leader.mats, bad_eq.leader.P, bad_eq.script))
    reports, _ = nash_deviation_test(bad_eq, 1, n_paths=NASH_PATHS, seed=11)
    nash_fail = sum(not r.passed for r in reports)
    res, orders = smp_order_study(lambda n: corrupt(solve_equilibrium(generic_model(), TimeGrid(1.0, n)),
                                                    *target), SMP_STEPS)
    smp_fail = not np.all(smp_order_ok(res, orders, 0.4))
    failed = [name for name, f in (("4", decoupling > 1e-9), ("7", nash_fail > 0), ("9", smp_fail)) if f]
    assert record(11, bool(failed),
                  f"corrupted u1_on_hat[0] += 0.1 fails criteria {','.join(failed) or 'none'} "
                  f"(nash failures {nash_fail}/40, smp order for player 1 {np.nanmin(orders[:, 0]):.2f})")

from __future__ import annotations

import numpy as np
import pytest

from artifact.errors import GateError
from artifact.follower_stage import solve_follower_riccati
from artifact.leader_riccati import (leader_csv, point_state, riccati_rhs, riccati_rhs_audit,
                                     solve_leader_riccati)
from artifact.model import TimeGrid
from helpers import generic_model, zero_cost_model


def leader(model, n, substeps=1):
    grid = TimeGrid(model.T, n)
    return solve_leader_riccati(model, solve_follower_riccati(model, grid, substeps), grid, substeps)


def test_zero_cost_model_has_zero_solution():
    sol = leader(zero_cost_model(), 20)
    assert np.all(sol.P == 0.0)
    assert np.all(sol.Ptilde == 0.0)


def test_terminal_data():
    m = generic_model()
    sol = leader(m, 10)
    PT = sol.P[-1]
    expect = np.zeros((4, 4, 5))
    expect[0, 2, 0], expect[0, 3, 0] = m.G[2], m.G[3]
    np.testing.assert_array_equal(PT, expect)
    np.testing.assert_array_equal(sol.Ptilde[-1], m.G[:2])


def test_audit_sums_to_right_hand_side():
    m = generic_model()
    sol = leader(m, 20)
    for k in (0, 7, 20):
        t = sol.grid.nodes[k]
        *_, mats, g = point_state(m, t, *sol.Ptilde[k], sol.P[k])
        rhs = riccati_rhs(mats, sol.P[k], g)
        audit = riccati_rhs_audit(mats, sol.P[k], g)
        for n in range(4):
            total = sum(v for _, v in audit[f"P{n + 1}"])
            scale = max(1.0, np.max(np.abs(rhs[n])))
            assert np.max(np.abs(total + rhs[n])) <= 1e-14 * scale


def test_audit_detects_a_dropped_term():
    m = generic_model()
    sol = leader(m, 20)
    *_, mats, g = point_state(m, 0.0, *sol.Ptilde[0], sol.P[0])
    audit = riccati_rhs_audit(mats, sol.P[0], g)
    rhs = riccati_rhs(mats, sol.P[0], g)
    terms = [v for lab, v in audit["P4"] if lab != "Qcal_checkhat"]
    assert np.max(np.abs(sum(terms) + rhs[3])) > 1e-3


def test_audit_labels_are_unique_per_level():
    m = generic_model()
    sol = leader(m, 10)
    *_, mats, g = point_state(m, 0.5, *sol.Ptilde[5], sol.P[5])
    for key, terms in riccati_rhs_audit(mats, sol.P[5], g).items():
        labels = [lab for lab, _ in terms]
        assert len(labels) == len(set(labels)), key


def test_nodes_satisfy_the_ode():
    m = generic_model()
    sol = leader(m, 400)
    dt = sol.grid.dt
    for k in (50, 200, 350):
        *_, mats, g = point_state(m, sol.grid.nodes[k], *sol.Ptilde[k], sol.P[k])
        fd = (sol.P[k + 1] - sol.P[k - 1]) / (2 * dt)
        assert np.max(np.abs(fd - riccati_rhs(mats, sol.P[k], g))) < 1e-4


def test_rk4_converges_at_fourth_order():
    m = generic_model()
    ref = leader(m, 5, substeps=64).P[0]
    errs = [np.max(np.abs(leader(m, 5, substeps=s).P[0] - ref)) for s in (2, 4, 8)]
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios > 12.0) & (ratios < 24.0))


def test_zero_leader_weight_trips_gate():
    m = generic_model(R=(1.0, 1.0, 0.0, 1.0))
    grid = TimeGrid(1.0, 10)
    fsol = solve_follower_riccati(m, grid)
    with pytest.raises(GateError) as info:
        solve_leader_riccati(m, fsol, grid)
    assert info.value.assumption == "A4"


def test_solution_diagnostics_have_expected_shapes():
    sol = leader(generic_model(), 10)
    assert sol.P.shape == (11, 4, 4, 5)
    assert sol.rconds.shape == (11, 4)
    assert np.all(sol.rconds > 0)
    np.testing.assert_array_equal(sol.P1, sol.P[:, 0])
    lines = leader_csv(sol).splitlines()
    assert len(lines) == 12
    assert lines[0].split(",")[:2] == ["t", "P1_00"]

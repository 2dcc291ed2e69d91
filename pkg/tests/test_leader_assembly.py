from __future__ import annotations

from dataclasses import replace

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from artifact.equilibrium import solve_equilibrium
from artifact.follower_stage import follower_point
from artifact.leader_assembly import (CH, assemble_leader_matrices, check_structure, matrices_csv,
                                      stacked_drift_residual)
from artifact.model import Coeffs, TimeGrid
from artifact.simulator import paths_for
from helpers import generic_model, zero_cost_model


def cf_of(**kw):
    base = dict(a=np.zeros(4), b=np.zeros(4), c=np.zeros(4), d=np.zeros(4), e=np.zeros(4),
                Q=np.zeros(4), R=np.ones(4), G=np.zeros(4))
    base.update({k: np.asarray(v, float) for k, v in kw.items()})
    return Coeffs(**base)


def mats_for(cf, P1=0.6, P2=0.4, x0=1.0):
    return assemble_leader_matrices(follower_point(cf, P1, P2), cf, x0)


def test_zero_model_blocks():
    m = mats_for(cf_of(), P1=0.0, P2=0.0, x0=2.5)
    np.testing.assert_array_equal(m.Xcal0, [2.5, 0, 0, 0, 0])
    for name in ("Acal", "Ncal", "Abar", "Mcal", "Hcal", "Mbar", "Ical", "Bcal", "Ccal",
                 "Qcal", "Qcal_checkhat", "Gcal", "Fcal1", "Fcal2"):
        assert np.all(getattr(m, name) == 0.0), name


def test_terminal_block_places_leader_weights():
    m = mats_for(cf_of(G=(0.1, 0.2, 2.0, 3.0)))
    np.testing.assert_array_equal(m.Gcal @ np.array([1.0, 0, 0, 0, 0]), [0, 0, 2, 3])


def test_leader_blocks_vanish_without_leader_loading():
    m = mats_for(cf_of(a=(0.2, 0.1, 0, 0.3), b=(1, 0.2, 0, 0.1), c=(0.5, 0.1, 0, 0.2)))
    for name in ("Hcal", "Ical", "Bcal", "Ccal", "Dbar", "Ebar", "Qcal_checkhat"):
        assert np.all(getattr(m, name) == 0.0), name


coef = st.floats(-1.0, 1.0, allow_nan=False)
quad = st.tuples(coef, coef, coef, coef)


@settings(max_examples=50, deadline=None)
@given(a=quad, b=quad, c=quad, d=quad, e=quad, P=st.tuples(st.floats(0, 2), st.floats(0, 2)),
       t=st.floats(0, 1))
def test_structural_zeros_hold_for_any_model(a, b, c, d, e, P, t):
    cf = cf_of(a=a, b=b, c=c, d=d, e=e, Q=(1, 1, 1, 1), R=(1, 1, 0.7, 1.3), G=(1, 1, 1, 1))
    m = assemble_leader_matrices(follower_point(cf, *P, t), cf, 1.0, t)
    assert check_structure(m) == []


def test_blocks_are_affine_in_follower_riccati():
    cf = cf_of(a=(0.2, 0.1, 0, 0.3), b=(1, 0.2, 0, 0.1), c=(0.5, 0.1, 0, 0.2),
               d=(0.7, 0.1, 0.2, 0.1), e=(0.5, 0.2, 0.1, 0.1), R=(1, 1, 1, 1))
    # N depends on P~1 through its inverse, so the blocks are affine in P~1
    # only where N is fixed: with b_i = 0 for i >= 1, N does not see P~1.
    cf = cf._replace(b=np.array([1.0, 0.0, 0.0, 0.0]))
    h = 0.1
    vals = [mats_for(cf, P1=0.5 + k * h).Acal for k in range(3)]
    np.testing.assert_allclose(vals[2] - 2 * vals[1] + vals[0], 0.0, atol=1e-12)


def test_structure_check_reports_violations():
    m = mats_for(cf_of(a=(0.2, 0.1, 0, 0.3)))
    bad = m.Acal.copy()
    bad[2, 1, 1] = 1.0
    assert check_structure(replace(m, Acal=bad)) == ["Acal"]


def test_matrices_csv_lists_nonzero_entries():
    m = mats_for(cf_of(a=(0.5, 0, 0, 0)), P1=0.0, P2=0.0)
    lines = matrices_csv([m]).strip().splitlines()
    assert lines[0] == "t,block,index,value"
    assert "0.0,Acal,0-0-0,0.5" in lines


def test_stacked_equals_primitive_on_same_noise(eq100):
    r = stacked_drift_residual(eq100, paths_for(eq100, 4, 100))
    assert r <= 5 * eq100.grid.dt
    assert r < 1e-12


def test_stacked_residual_zero_model():
    m = zero_cost_model().replace(x0=0.0)
    eq = solve_equilibrium(m, TimeGrid(1.0, 20))
    assert stacked_drift_residual(eq, paths_for(eq, 1, 20)) == 0.0


def test_stacked_residual_mismatched_noise_is_order_one(eq100):
    r = stacked_drift_residual(eq100, paths_for(eq100, 4, 100), paths_for(eq100, 5, 100))
    assert r > 0.1


def test_conditional_state_cost_block_is_needed(eq100):
    """Dropping the f f^T / R block of the Phi^ drift breaks the match."""
    mats = []
    for mt in eq100.leader.mats:
        yx = mt.yx.copy()
        yx[CH] = 0.0
        mats.append(replace(mt, yx=yx))
    broken = replace(eq100, leader=replace(eq100.leader, mats=mats))
    assert stacked_drift_residual(broken, paths_for(eq100, 4, 100)) > 1e-2


def test_duality_pairing_vanishes_for_zero_cost_model():
    eq = solve_equilibrium(zero_cost_model(), TimeGrid(1.0, 40))
    _, tr = stacked_drift_residual(eq, paths_for(eq, 2, 30), return_paths=True)
    pair_s = np.einsum("pka,pka->pk", tr["stacked_Y"][:, :, :2], tr["stacked_X"][:, :, 1:3]) + \
        tr["stacked_Y"][:, :, 2] * tr["stacked_X"][:, :, 0]
    assert np.all(tr["stacked_Y"] == 0.0) and np.all(tr["unstacked_Y"] == 0.0)
    assert np.all(pair_s == 0.0)


def test_generic_model_has_nonzero_conditional_blocks():
    eq = solve_equilibrium(generic_model(), TimeGrid(1.0, 10))
    assert np.any(eq.leader.mats[0].Qcal_checkhat != 0.0)

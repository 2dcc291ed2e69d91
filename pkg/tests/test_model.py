from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from artifact.errors import ConfigError
from artifact.model import (CoefficientFunction, ModelCoefficients, TimeGrid, coefficients_csv,
                            dump_model, eval_coefficient, load_model)

BASE = """
horizon = 1.0
x0 = 1.0
steps = 50

[cost.player1]
Q = {Q1}
R = 1.0
G = 0.5

[cost.player2]
Q = 1.0
R = {R2}
G = 0.5

[cost.player3]
Q = 1.0
R = {R3}
G = 0.5

[cost.player4]
Q = 1.0
R = 1.0
G = 0.5
"""


def config(Q1=1.0, R2=1.0, R3=1.0, extra=""):
    return BASE.format(Q1=Q1, R2=R2, R3=R3) + extra


def test_negative_Q1_is_rejected_naming_A1():
    with pytest.raises(ConfigError, match=r"Assumption A1 violated: Q1\(t\) < 0"):
        load_model(config(Q1=-1.0))


def test_zero_coefficients_load_and_flag_leader_R():
    model, grid = load_model(config(R3=0.0))
    flags = model.flags(grid)
    assert flags.A1
    assert not flags.A4
    assert any("R3(t) <= 0" in m for m in flags.messages)
    assert not any("Q3" in m for m in flags.messages)


def test_symmetric_followers_flag_A3():
    extra = "\n[b]\ni0 = 1.0\ni1 = 0.3\n\n[c]\ni0 = 1.0\ni1 = 0.3\n"
    model, grid = load_model(config(extra=extra))
    assert model.flags(grid).A3
    assert "Assumption A3 holds" in model.flags(grid).messages
    model, grid = load_model(config(R2=2.0, extra=extra))
    assert not model.flags(grid).A3


def test_missing_key_is_a_config_error():
    with pytest.raises(ConfigError, match="x0"):
        load_model(config().replace("x0 = 1.0\n", ""))
    with pytest.raises(ConfigError, match="player4"):
        load_model(config().split("[cost.player4]")[0])


def test_malformed_toml_is_a_config_error():
    with pytest.raises(ConfigError, match="parse error"):
        load_model("horizon = = 1")


def test_coefficient_examples():
    assert eval_coefficient(CoefficientFunction.constant(2.5), 0.7) == 2.5
    pw = CoefficientFunction("piecewise", (1.0, 3.0), (0.0, 0.5), 1.0)
    assert eval_coefficient(pw, 0.5) == 3.0
    assert eval_coefficient(pw, 0.499) == 1.0
    gr = CoefficientFunction("grid", (0.0, 2.0), (0.0, 1.0), 1.0)
    assert eval_coefficient(gr, 0.25) == pytest.approx(0.5)


def test_coefficient_outside_horizon_raises():
    with pytest.raises(ValueError):
        eval_coefficient(CoefficientFunction.constant(1.0), 1.5)


@pytest.mark.parametrize("kw", [
    dict(kind="grid", values=(0.0, 1.0), breakpoints=(0.0, 0.5)),
    dict(kind="piecewise", values=(0.0, 1.0), breakpoints=(0.2, 0.5)),
    dict(kind="piecewise", values=(0.0, 1.0), breakpoints=(0.0, 0.0)),
    dict(kind="spline", values=(1.0,)),
])
def test_bad_coefficients_rejected(kw):
    with pytest.raises(ConfigError):
        CoefficientFunction(horizon=1.0, **kw)


def test_time_grid():
    g = TimeGrid(2.0, 4)
    assert g.dt == 0.5
    np.testing.assert_array_equal(g.nodes, [0.0, 0.5, 1.0, 1.5, 2.0])


def test_piecewise_config_roundtrip():
    extra = '\n[a]\ni0 = { kind = "piecewise", breakpoints = [0.0, 0.5], values = [0.1, -0.2] }\n'
    model, grid = load_model(config(extra=extra))
    assert model.at(0.25).a[0] == 0.1
    assert model.at(0.75).a[0] == -0.2
    again, grid2 = load_model(dump_model(model, grid))
    assert again == model and grid2 == grid


coef = st.floats(-2.0, 2.0, allow_nan=False)
pos = st.floats(0.0, 3.0, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(a=st.tuples(coef, coef, coef, coef), d=st.tuples(coef, coef, coef, coef),
       Q=st.tuples(pos, pos, pos, pos), R=st.tuples(*(st.floats(0.1, 3.0),) * 4),
       G=st.tuples(pos, pos, pos, pos), x0=coef, steps=st.integers(1, 500))
def test_dump_load_roundtrip(a, d, Q, R, G, x0, steps):
    model = ModelCoefficients.from_constants(a=a, d=d, Q=Q, R=R, G=G, x0=x0, T=1.5)
    grid = TimeGrid(1.5, steps)
    again, grid2 = load_model(dump_model(model, grid))
    assert again == model
    assert grid2 == grid


def test_coefficients_csv_has_long_format():
    model = ModelCoefficients.from_constants(a=(0.5, 0, 0, 0))
    text = coefficients_csv(model, TimeGrid(1.0, 2))
    lines = text.strip().splitlines()
    assert lines[0] == "t,name,value"
    assert "0.0,a0,0.5" in lines


@settings(max_examples=60, deadline=None)
@given(vals=st.lists(st.floats(-5, 5), min_size=2, max_size=8), t=st.floats(0, 1))
def test_scalar_and_array_evaluation_agree(vals, t):
    knots = tuple(np.linspace(0.0, 1.0, len(vals)))
    for kind in ("grid", "piecewise"):
        f = CoefficientFunction(kind, tuple(vals), knots, 1.0)
        assert f(t) == pytest.approx(float(f(np.array([t]))[0]), abs=1e-12)

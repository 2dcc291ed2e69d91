"""Model builders shared by the test modules."""

from __future__ import annotations

import numpy as np

from artifact.model import CoefficientFunction, ModelCoefficients

# a2 = b2 = c2 = 0: W2 reaches the state only through the leaders' controls,
# which is the setting in which the follower feedback is exactly optimal.
GENERIC = dict(
    a=(0.2, 0.1, 0.0, 0.15), b=(1.0, 0.2, 0.0, 0.1), c=(0.8, 0.1, 0.0, 0.2),
    d=(0.7, 0.1, 0.2, 0.1), e=(0.5, 0.15, 0.1, 0.05),
    Q=(1.0, 0.8, 1.2, 0.9), R=(1.0, 1.2, 0.9, 1.1), G=(0.5, 0.4, 0.6, 0.3),
    x0=1.0, T=1.0,
)


def generic_model(**changes) -> ModelCoefficients:
    kw = dict(GENERIC)
    kw.update(changes)
    return ModelCoefficients.from_constants(**kw)


def zero_cost_model() -> ModelCoefficients:
    return generic_model(Q=(0, 0, 0, 0), G=(0, 0, 0, 0))


def smooth(fn, T=1.0, knots=101):
    """Piecewise-linear samples of ``fn`` with knots on a 1/100 lattice."""
    t = np.linspace(0.0, T, knots)
    return CoefficientFunction("grid", tuple(fn(t)), tuple(t), T)


def smooth_symmetric_model() -> ModelCoefficients:
    """A3 model (b = c, R1 = R2) with time-varying coefficients."""
    bc = (smooth(lambda t: 1.0 + 0.3 * np.sin(2 * t)), 0.3, 0.0, smooth(lambda t: 0.2 + 0.1 * t))
    m = generic_model()
    return m.replace(
        a=(smooth(lambda t: 0.2 * np.cos(3 * t)), 0.1, 0.0, 0.15),
        b=bc, c=bc,
        Q=(smooth(lambda t: 1.0 + 0.5 * t * t), 0.6, 1.2, 0.9),
        R=(smooth(lambda t: 1.0 + 0.2 * np.sin(t)), smooth(lambda t: 1.0 + 0.2 * np.sin(t)), 0.9, 1.1),
        G=(0.5, 0.3, 0.6, 0.3),
    )


ACCEPTANCE_LINES: list = []


def record(number: int, passed: bool, detail: str) -> bool:
    """Print and keep one acceptance verdict line."""
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed

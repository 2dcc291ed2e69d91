"""Follower stage on its own: a closed-form check and the symmetric identities.

Run with ``python demos/follower_riccati.py``.
"""

from __future__ import annotations

import numpy as np

from artifact.follower_stage import solve_follower_riccati, tabulate
from artifact.model import CoefficientFunction, ModelCoefficients, TimeGrid


def closed_form():
    # No drift, unit control loading and weights, terminal weight 1/2 for each
    # follower.  The pair stays equal and each member is half of
    # 2g / (1 + 2g (T - t)).
    model = ModelCoefficients.from_constants(b=(1, 0, 0, 0), c=(1, 0, 0, 0), G=(0.5, 0.5, 0, 0))
    sol = solve_follower_riccati(model, TimeGrid(1.0, 50))
    t = sol.grid.nodes
    exact = 0.5 / (1.0 + (1.0 - t))
    print("closed form: P~1(0) =", f"{sol.Ptilde1[0]:.10f}",
          " max error", f"{np.max(np.abs(sol.Ptilde1 - exact)):.2e}")


def symmetric_case():
    # Identical control channels and weights for the two followers, with a
    # time-varying loading sampled on a 1/100 lattice.
    t = np.linspace(0.0, 1.0, 101)
    b0 = CoefficientFunction("grid", tuple(1.0 + 0.3 * np.sin(2 * t)), tuple(t), 1.0)
    model = ModelCoefficients.from_constants(
        a=(0.2, 0.1, 0.0, 0.15), b=(1.0, 0.3, 0.0, 0.2), c=(1.0, 0.3, 0.0, 0.2),
        Q=(1.0, 0.6, 1.2, 0.9), R=(1.0, 1.0, 0.9, 1.1), G=(0.5, 0.3, 0.6, 0.3),
    ).replace(b=(b0, 0.3, 0.0, 0.2), c=(b0, 0.3, 0.0, 0.2))
    sol = solve_follower_riccati(model, TimeGrid(1.0, 800))
    print("symmetric case detected:", sol.symmetric)
    print("  |P~1 + P~2 - P~|       ", f"{np.max(np.abs(sol.Ptilde1 + sol.Ptilde2 - sol.Ptilde_sum)):.2e}")
    print("  |P~1 - auxiliary 1|    ", f"{np.max(np.abs(sol.Ptilde1 - sol.aux1)):.2e}")
    tab = tabulate(model, sol)
    print("  feedback gains at t=0: L =", np.array2string(tab.points[0].gains.L, precision=4))


if __name__ == "__main__":
    closed_form()
    symmetric_case()

"""Fixed-step classical Runge-Kutta sweeps used by both Riccati stages."""

from __future__ import annotations

import numpy as np

from .errors import BlowUpError

BLOWUP = 1e8


def rk4_backward(rhs, y_terminal, nodes, substeps: int = 1, what: str = "solution",
                 guard: float = BLOWUP):
    """Integrate ``y' = rhs(t, y)`` from ``nodes[-1]`` down to ``nodes[0]``.

    Returns an array with the solution at every node.  Each interval is
    split into ``substeps`` equal RK4 steps.  Raises :class:`BlowUpError`
    when a value becomes nonfinite or exceeds ``guard`` in magnitude.
    """
    y = np.array(y_terminal, dtype=float)
    out = np.empty((len(nodes),) + y.shape)
    out[-1] = y
    for k in range(len(nodes) - 2, -1, -1):
        t_hi, t_lo = nodes[k + 1], nodes[k]
        h = (t_lo - t_hi) / substeps
        for s in range(substeps):
            t = t_hi + s * h
            t_end = t_lo if s == substeps - 1 else t + h
            k1 = rhs(t, y)
            k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
            k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
            k4 = rhs(t_end, y + h * k3)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)) or np.max(np.abs(y), initial=0.0) > guard:
            raise BlowUpError(what, t_hi)
        out[k] = y
    return out

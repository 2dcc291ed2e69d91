"""Exception types shared by the solver stages and the command line."""

from __future__ import annotations


class ConfigError(ValueError):
    """Malformed or invalid model configuration."""


class GateError(RuntimeError):
    """A numerical solvability gate failed.

    Parameters
    ----------
    assumption : str
        Short name of the violated standing assumption (``"A2"``, ``"A5"`` ...).
    t : float
        Time at which the gate tripped.
    detail : str
        Human readable diagnostic (determinant, condition estimate, ...).
    """

    def __init__(self, assumption: str, t: float, detail: str = ""):
        self.assumption = assumption
        self.t = float(t)
        self.detail = detail
        msg = f"Assumption {assumption} violated at t={self.t:.6g}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class BlowUpError(RuntimeError):
    """A backward Riccati sweep produced a nonfinite or huge value."""

    def __init__(self, what: str, t_last_valid: float):
        self.what = what
        self.t_last_valid = float(t_last_valid)
        super().__init__(f"{what} blew up; last valid t={self.t_last_valid:.6g}")

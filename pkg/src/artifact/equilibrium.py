"""Closed-loop Stackelberg-Nash gains and the full solve pipeline.

The leaders act on ``(Xv, X^v)``, the followers on ``(X^, X^v)``; each gain
is a row acting on the stacked 5-vector ``(x, y3, y4)`` of that level.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .decoupler import DecouplingGains
from .follower_stage import FollowerPoint, FollowerRiccatiSolution, FollowerTables, solve_follower_riccati, tabulate
from .leader_assembly import CH, C, F, H, LeaderSystemMatrices
from .leader_riccati import LeaderRiccatiSolution, solve_leader_riccati
from .model import ModelCoefficients, TimeGrid

GAIN_NAMES = (
    "u1_on_hat", "u1_on_checkhat", "u2_on_hat", "u2_on_checkhat",
    "u3_on_check", "u3_on_checkhat", "u4_on_check", "u4_on_checkhat",
)


@dataclass(frozen=True)
class EquilibriumGains:
    """Gain rows on the grid, each of shape ``(n_steps + 1, 5)``."""

    u1_on_hat: np.ndarray
    u1_on_checkhat: np.ndarray
    u2_on_hat: np.ndarray
    u2_on_checkhat: np.ndarray
    u3_on_check: np.ndarray
    u3_on_checkhat: np.ndarray
    u4_on_check: np.ndarray
    u4_on_checkhat: np.ndarray

    def by_level(self) -> np.ndarray:
        """Array ``G[k, j, lev]`` with the gain of player ``j+1`` on level ``lev``."""
        n = self.u1_on_hat.shape[0]
        out = np.zeros((n, 4, 4, 5))
        out[:, 0, H], out[:, 0, CH] = self.u1_on_hat, self.u1_on_checkhat
        out[:, 1, H], out[:, 1, CH] = self.u2_on_hat, self.u2_on_checkhat
        out[:, 2, C], out[:, 2, CH] = self.u3_on_check, self.u3_on_checkhat
        out[:, 3, C], out[:, 3, CH] = self.u4_on_check, self.u4_on_checkhat
        return out


def leader_gains(mats: LeaderSystemMatrices, P: np.ndarray, g: DecouplingGains):
    """Rows ``(u3 on Xv, u3 on X^v, u4 on Xv, u4 on X^v)`` at one time."""
    Psum = P.sum(axis=0)
    Nsum = g.N

    def row(Dbar, Mbar, Fcal, R):
        on_check = Dbar[0] @ (P[F] + P[C]) + np.einsum("ia,iac->c", Dbar[1:], g.Ncheck)
        on_ch = (Fcal + Dbar[0] @ (P[H] + P[CH]) + Mbar[0] @ Psum
                 + np.einsum("ia,iac->c", Dbar[1:], g.Ntilde)
                 + np.einsum("ia,iac->c", Mbar[1:], Nsum))
        return -on_check / R, -on_ch / R

    u3c, u3ch = row(mats.Dbar, mats.Mbar4, mats.Fcal1, mats.R3)
    u4c, u4ch = row(mats.Ebar, mats.Mbar5, mats.Fcal2, mats.R4)
    return u3c, u3ch, u4c, u4ch


def follower_gains_nonanticipating(fp: FollowerPoint, P: np.ndarray, g: DecouplingGains,
                                   u3_total: np.ndarray, u4_total: np.ndarray):
    """Rows ``(u1 on X^, u1 on X^v, u2 on X^, u2 on X^v)`` at one time.

    ``u3_total`` is the row with ``u3^ = u3_total . X^v`` (sum of both leader
    rows), likewise ``u4_total``.  ``Phi^`` and ``zeta^`` come from the first
    two rows of ``Y^ = (P1+P2) X^ + (P3+P4) X^v`` and of ``Z^_j``.
    """
    fg = fp.gains
    phi_hat = (P[F] + P[H])[0:2]
    phi_ch = (P[C] + P[CH])[0:2]
    z1_hat, z1_ch = g.Nhat[0, 0:2], g.Ncheckhat[0, 0:2]
    z3_hat, z3_ch = g.Nhat[2, 0:2], g.Ncheckhat[2, 0:2]
    rows = []
    for j in range(2):
        on_hat = fg.rho[j] @ phi_hat + fg.sigma[j] @ z1_hat + fg.tau[j] @ z3_hat
        on_hat[0] -= fg.L[j, 0]
        on_ch = (-fg.L[j, 1] * u3_total - fg.L[j, 2] * u4_total + fg.rho[j] @ phi_ch
                 + fg.sigma[j] @ z1_ch + fg.tau[j] @ z3_ch)
        rows += [on_hat, on_ch]
    return tuple(rows)


def closed_loop_matrices(model: ModelCoefficients, grid: TimeGrid, ftab: FollowerTables,
                         lsol: LeaderRiccatiSolution, gains: EquilibriumGains,
                         script: np.ndarray | None = None) -> np.ndarray:
    """Closed-loop coefficients ``D[k, i, lev]`` (5x5) built from the gain tables.

    Row 0 is the state equation with the four controls substituted; rows
    1..4 are the adjoint equations of ``Phi^`` with ``z_j`` and ``q_ji`` read
    from their feedback representations.
    """
    nodes = grid.nodes
    script = np.array([g.script for g in lsol.gains]) if script is None else script
    G = gains.by_level()
    D = np.zeros((len(nodes), 4, 4, 5, 5))
    for k, t in enumerate(nodes):
        cf = model.at(t)
        coef = np.array([cf.b, cf.c, cf.d, cf.e])     # (player, channel)
        D[k, :, F, 0, 0] = cf.a
        D[k, :, :, 0, :] += np.einsum("ji,jlc->ilc", coef, G[k])
        A, Nb = ftab.A[k], ftab.Nb[k]
        P = lsol.P[k]
        for i in (0, 1, 3):
            D[k, i, F, 1:3, 1:3] += A[i].T
            D[k, i, F, 3:5, 3:5] += A[i].T
            for r, zrow in ((slice(1, 3), 2), (slice(3, 5), 3)):
                D[k, i, :, r, :] += np.einsum("a,lc->lac", Nb[0, i], P[:, zrow])
                D[k, i, :, r, :] += np.einsum("ja,jlc->lac", Nb[1:, i], script[k, :, :, zrow])
    return D


@dataclass(frozen=True)
class Equilibrium:
    """Everything needed to simulate and verify one solved model."""

    model: ModelCoefficients
    grid: TimeGrid
    follower: FollowerRiccatiSolution
    ftab: FollowerTables
    leader: LeaderRiccatiSolution
    gains: EquilibriumGains
    D: np.ndarray
    script: np.ndarray

    @property
    def X0(self) -> np.ndarray:
        return np.array([self.model.x0, 0.0, 0.0, 0.0, 0.0])


def equilibrium_gains(ftab: FollowerTables, lsol: LeaderRiccatiSolution) -> EquilibriumGains:
    rows = {name: [] for name in GAIN_NAMES}
    for k in range(len(lsol.grid.nodes)):
        mats, g, P = lsol.mats[k], lsol.gains[k], lsol.P[k]
        u3c, u3ch, u4c, u4ch = leader_gains(mats, P, g)
        f = follower_gains_nonanticipating(ftab.points[k], P, g, u3c + u3ch, u4c + u4ch)
        vals = (*f, u3c, u3ch, u4c, u4ch)
        for name, v in zip(GAIN_NAMES, vals):
            rows[name].append(v)
    return EquilibriumGains(**{k: np.array(v) for k, v in rows.items()})


def solve_equilibrium(model: ModelCoefficients, grid: TimeGrid, substeps: int = 1) -> Equilibrium:
    """Follower stage, leader stage, gains and closed-loop tables."""
    fsol = solve_follower_riccati(model, grid, substeps)
    ftab = tabulate(model, fsol)
    lsol = solve_leader_riccati(model, fsol, grid, substeps)
    gains = equilibrium_gains(ftab, lsol)
    script = np.array([g.script for g in lsol.gains])
    D = closed_loop_matrices(model, grid, ftab, lsol, gains, script)
    return Equilibrium(model, grid, fsol, ftab, lsol, gains, D, script)


def corrupt(eq: Equilibrium, target: str = "u1_on_hat", index: int = 0,
            delta: float = 0.1) -> Equilibrium:
    """Copy of ``eq`` with one entry shifted by ``delta`` on every node.

    ``target`` is a gain name from :data:`GAIN_NAMES` or ``"script"`` (then
    ``index`` is a flat index into one node's ``(3, 4, 4, 5)`` array).
    """
    if target == "script":
        script = eq.script.copy()
        flat = script.reshape(len(script), -1)
        flat[:, index] += delta
        D = closed_loop_matrices(eq.model, eq.grid, eq.ftab, eq.leader, eq.gains, script)
        return replace(eq, script=script, D=D)
    if target not in GAIN_NAMES:
        raise ValueError(f"unknown gain {target!r}")
    arr = getattr(eq.gains, target).copy()
    arr[:, index] += delta
    gains = replace(eq.gains, **{target: arr})
    D = closed_loop_matrices(eq.model, eq.grid, eq.ftab, eq.leader, gains, eq.script)
    return replace(eq, gains=gains, D=D)


def gains_csv(eq: Equilibrium) -> str:
    head = ["t"] + [f"{n}_{c}" for n in GAIN_NAMES for c in range(5)]
    lines = [",".join(head)]
    for k, t in enumerate(eq.grid.nodes):
        vals = [t] + [v for n in GAIN_NAMES for v in getattr(eq.gains, n)[k]]
        lines.append(",".join(repr(float(v)) for v in vals))
    return "\n".join(lines) + "\n"

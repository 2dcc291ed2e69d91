"""Backward sweep of the four coupled leader Riccati equations.

Matching the coefficient of each level in ``d(sum_L P_L X_L)`` against the
``-dY`` drift gives, for every level ``n``,

    P_n' + sum_{L, m: PROJ[L][m] = n} P_L D_0[m] + E[n] = 0,

where ``D_0`` is the closed-loop X drift and ``E`` the closed-loop ``-dY``
drift, both after substituting ``Y`` and the decoupled ``Z``.  Levels
F, H, C, CH carry ``P1, P2, P3, P4``.  The follower pair ``P~1, P~2`` is
integrated in the same sweep so that every RK4 stage sees consistent
follower data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._ode import rk4_backward
from .decoupler import TPROJ, DecouplingGains, closed_loop_part, decouple
from .errors import GateError
from .follower_stage import FollowerRiccatiSolution, follower_point, follower_riccati_rhs
from .leader_assembly import LEVEL_NAMES, LeaderSystemMatrices, assemble_leader_matrices
from .model import ModelCoefficients, TimeGrid


@dataclass(frozen=True)
class LeaderRiccatiSolution:
    """``P[k, lev]`` is ``P_{lev+1}`` at node ``k``; gains are per node."""

    grid: TimeGrid
    P: np.ndarray
    Ptilde: np.ndarray
    gains: tuple
    mats: tuple
    dets: np.ndarray
    rconds: np.ndarray

    @property
    def P1(self):
        return self.P[:, 0]

    @property
    def P2(self):
        return self.P[:, 1]

    @property
    def P3(self):
        return self.P[:, 2]

    @property
    def P4(self):
        return self.P[:, 3]


def riccati_rhs(mats: LeaderSystemMatrices, P: np.ndarray, g: DecouplingGains) -> np.ndarray:
    """``dP/dt`` for all four levels, shape (4, 4, 5)."""
    D, E = closed_loop_part(mats, P, g.script)
    return -(np.einsum("Lmn,Lab,mbc->nac", TPROJ, P, D[0]) + E)


def point_state(model: ModelCoefficients, t: float, P1t: float, P2t: float, P: np.ndarray):
    """Assemble follower data, matrices and gains at one time."""
    cf = model.at(t)
    fp = follower_point(cf, P1t, P2t, t)
    if cf.R[2] <= 0 or cf.R[3] <= 0:
        raise GateError("A4", t, "leader control weight must be positive")
    mats = assemble_leader_matrices(fp, cf, model.x0, t)
    return cf, fp, mats, decouple(mats, P, t)


def solve_leader_riccati(model: ModelCoefficients, fsol: FollowerRiccatiSolution,
                         grid: TimeGrid | None = None, substeps: int = 1) -> LeaderRiccatiSolution:
    """Integrate ``P1..P4`` backward from ``P1(T) = Gcal``, ``P2..P4(T) = 0``."""
    grid = grid or fsol.grid
    nodes = grid.nodes

    def rhs(t, y):
        P = y[2:].reshape(4, 4, 5)
        cf = model.at(t)
        dpt = follower_riccati_rhs(cf, y[0], y[1], t)
        _, _, mats, g = point_state(model, t, y[0], y[1], P)
        return np.concatenate([dpt, riccati_rhs(mats, P, g).ravel()])

    cfT = model.at(grid.T)
    PT = np.zeros((4, 4, 5))
    PT[0, 2, 0], PT[0, 3, 0] = cfT.G[2], cfT.G[3]
    yT = np.concatenate([[model.G[0], model.G[1]], PT.ravel()])
    Y = rk4_backward(rhs, yT, nodes, substeps, what="leader Riccati")
    if fsol.grid == grid:
        gap = np.max(np.abs(Y[:, :2] - np.column_stack([fsol.Ptilde1, fsol.Ptilde2])))
        if gap > 1e-12:
            raise RuntimeError(f"follower trajectory differs from the joint sweep by {gap:.3e}")
    P = Y[:, 2:].reshape(-1, 4, 4, 5)
    gains, mats_all = [], []
    for k, t in enumerate(nodes):
        _, _, mats, g = point_state(model, t, Y[k, 0], Y[k, 1], P[k])
        gains.append(g)
        mats_all.append(mats)
    return LeaderRiccatiSolution(
        grid=grid, P=P, Ptilde=Y[:, :2], gains=tuple(gains), mats=tuple(mats_all),
        dets=np.array([g.dets for g in gains]), rconds=np.array([g.rconds for g in gains]),
    )


_VAR = ("Y", "Z1", "Z2", "Z3")


def riccati_rhs_audit(mats: LeaderSystemMatrices, P: np.ndarray, g: DecouplingGains) -> dict:
    """Every summand of ``-dP_n/dt`` with a readable label, per level.

    Returns ``{"P1": [(label, 4x5), ...], ..., "P4": [...]}``.  The sum of the
    summands of level ``n`` equals ``-riccati_rhs(...)[n]``.
    """
    W = np.zeros((4, 4, 4, 5))
    W[0] = P
    W[1:] = g.script
    xblock = {0: "Acal", 1: "Mcal", 3: "Hcal"}
    yblock = {0: "Ncal", 2: "Bcal", 3: "Ccal"}
    wname = lambda v, m: f"P{m + 1}" if v == 0 else f"script{v}[{LEVEL_NAMES[m]}]"  # noqa: E731
    out = {f"P{n + 1}": [] for n in range(4)}
    for L in range(4):
        for m in range(4):
            n = int(np.argmax(TPROJ[L, m]))
            key = f"P{n + 1}"
            if m in xblock:
                out[key].append((f"P{L + 1} {xblock[m]}0", P[L] @ mats.xx[0, m]))
            for lev, blk in yblock.items():
                for v in range(4):
                    for mm in range(4):
                        if TPROJ[lev, mm, m] and np.any(mats.xy[0, v, lev]):
                            out[key].append(
                                (f"P{L + 1} {blk}0{v} {wname(v, mm)}",
                                 P[L] @ mats.xy[0, v, lev] @ W[v, mm]))
    out["P1"].append(("Qcal", mats.yx[0].copy()))
    out["P4"].append(("Qcal_checkhat", mats.yx[3].copy()))
    yname = {0: "Abar", 1: "Mbar", 3: "Ical"}
    for v in range(4):
        for lev, blk in yname.items():
            for m in range(4):
                n = int(np.argmax(TPROJ[lev, m]))
                out[f"P{n + 1}"].append(
                    (f"{blk}{v} {_VAR[v]} {wname(v, m)}", mats.yy[v, lev] @ W[v, m]))
    return out


def leader_csv(sol: LeaderRiccatiSolution) -> str:
    head = ["t"]
    for k in range(1, 5):
        head += [f"P{k}_{r}{c}" for r in range(4) for c in range(5)]
    head += [f"det{k}" for k in range(1, 5)]
    lines = [",".join(head)]
    for k, t in enumerate(sol.grid.nodes):
        row = [t, *sol.P[k].ravel(), *sol.dets[k]]
        lines.append(",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"

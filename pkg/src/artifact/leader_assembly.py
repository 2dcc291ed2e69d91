"""Block matrices of the leaders' stacked forward-backward system.

Stacked variables: ``X = (x, y3, y4)`` in R^5, ``Y = (Phi^, z3, z4)`` in
R^4, ``Z_j = (zeta^_j, q3j, q4j)`` in R^4 (``zeta^_2 = 0``).  Conditional
expectations are written by *level*: ``F`` (none), ``H`` (given the
followers' information), ``C`` (given the leaders'), ``CH`` (both).

Dynamics, channel ``i = 0`` being the drift and ``i = 1..3`` the noises::

    dX  = sum_i [ Acal_i X + Mcal_i X^ + Hcal_i X^v
                 + Ncal_i0 Y + Bcal_i0 Yv + Ccal_i0 Y^v
                 + sum_j (Ncal_ij Z_j + Bcal_ij Zv_j + Ccal_ij Z^v_j) ] dW_i
    -dY = [ Qcal X + Qcal_checkhat X^v + Abar_0 Y + Mbar_0 Y^ + Ical_0 Y^v
           + sum_j (Abar_j Z_j + Mbar_j Z^_j + Ical_j Z^v_j) ] dt - sum_j Z_j dW_j

with ``X(0) = Xcal0`` and ``Y(T) = Gcal X(T)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .follower_stage import FollowerPoint
from .model import Coeffs

F, H, C, CH = 0, 1, 2, 3
LEVEL_NAMES = ("F", "H", "C", "CH")


@dataclass(frozen=True)
class LeaderSystemMatrices:
    """Calligraphic blocks at one time plus level-indexed coefficient tensors.

    ``xx[i, lev]`` (5x5) is the coefficient of ``X`` at level ``lev`` in
    channel ``i``; ``xy[i, v, lev]`` (5x4) that of variable ``v`` (0 for
    ``Y``, ``j`` for ``Z_j``).  ``yx[lev]`` (4x5) and ``yy[v, lev]`` (4x4)
    are the same for ``-dY`` drift.  The tensors are what the decoupler and
    the Riccati equations consume.
    """

    t: float
    Acal: np.ndarray
    Ncal: np.ndarray
    Abar: np.ndarray
    Mcal: np.ndarray
    Hcal: np.ndarray
    Mbar: np.ndarray
    Ical: np.ndarray
    Bcal: np.ndarray
    Ccal: np.ndarray
    Dbar: np.ndarray
    Mbar4: np.ndarray
    Ebar: np.ndarray
    Mbar5: np.ndarray
    Qcal: np.ndarray
    Qcal_checkhat: np.ndarray
    Fcal1: np.ndarray
    Fcal2: np.ndarray
    Gcal: np.ndarray
    Xcal0: np.ndarray
    R3: float
    R4: float
    xx: np.ndarray
    xy: np.ndarray
    yx: np.ndarray
    yy: np.ndarray


def assemble_leader_matrices(fp: FollowerPoint, cf: Coeffs, x0: float,
                             t: float = 0.0) -> LeaderSystemMatrices:
    """Fill every block from the follower-stage outputs at one time."""
    a, d, e = cf.a, cf.d, cf.e
    Q, R, G = cf.Q, cf.R, cf.G
    R3, R4 = float(R[2]), float(R[3])
    bs = fp.bsde
    A, M, Nb, f1, f2 = bs.A, bs.M, bs.Nb, bs.f1, bs.f2
    M1, M4, M5 = M[:, 0], M[:, 3], M[:, 4]

    Acal = np.zeros((4, 5, 5))
    Abar = np.zeros((4, 4, 4))
    for i in range(4):
        Acal[i, 0, 0] = a[i]
        Acal[i, 1:3, 1:3] = A[i].T
        Acal[i, 3:5, 3:5] = A[i].T
        Abar[i, 0:2, 0:2] = A[i]
        Abar[i, 2, 2] = Abar[i, 3, 3] = a[i]

    # Ncal[i, j]: channel i, acting on Y (j = 0) or Z_j.  The x row picks up
    # the Phi^/zeta^ gains of the followers, the y rows are the adjoint of it.
    Ncal = np.zeros((4, 4, 5, 4))
    for i in range(4):
        for j in range(4):
            if j != 2:
                Ncal[i, j, 0, 0:2] = Nb[i, j]
            if i != 2:
                Ncal[i, j, 1:3, 2] = Nb[j, i]
                Ncal[i, j, 3:5, 3] = Nb[j, i]

    Mcal = np.zeros((4, 5, 5))
    Mbar = np.zeros((4, 4, 4))
    Mcal[:, 0, 0] = M1
    Mbar[:, 2, 2] = M1
    Mbar[:, 3, 3] = M1

    # Index 0 of the d/e/M4/M5 vectors is the drift, 1..3 the noises.
    Bcal = np.zeros((4, 4, 5, 4))
    Ccal = np.zeros((4, 4, 5, 4))
    for i in range(4):
        for j in range(4):
            Bcal[i, j, 0, 2] = -d[i] * d[j] / R3
            Bcal[i, j, 0, 3] = -e[i] * e[j] / R4
            Ccal[i, j, 0, 2] = -(d[i] * M4[j] + M4[i] * d[j] + M4[i] * M4[j]) / R3
            Ccal[i, j, 0, 3] = -(e[i] * M5[j] + M5[i] * e[j] + M5[i] * M5[j]) / R4

    Hcal = np.zeros((4, 5, 5))
    Ical = np.zeros((4, 4, 4))
    for i in range(4):
        Hcal[i, 0, 1:3] = -(d[i] + M4[i]) / R3 * f1
        Hcal[i, 0, 3:5] = -(e[i] + M5[i]) / R4 * f2
        Ical[i, 0:2, 2] = -(d[i] + M4[i]) / R3 * f1
        Ical[i, 0:2, 3] = -(e[i] + M5[i]) / R4 * f2

    Dbar = np.zeros((4, 4))
    Ebar = np.zeros((4, 4))
    Mbar4 = np.zeros((4, 4))
    Mbar5 = np.zeros((4, 4))
    Dbar[:, 2] = d
    Ebar[:, 3] = e
    Mbar4[:, 2] = M4
    Mbar5[:, 3] = M5

    Qcal = np.zeros((4, 5))
    Qcal[2, 0], Qcal[3, 0] = Q[2], Q[3]
    # Substituting u3^, u4^ into the Phi^ drift leaves f1 u3^ + f2 u4^, whose
    # y-parts act on X^v through f f^T.
    Qch = np.zeros((4, 5))
    Qch[0:2, 1:3] = -np.outer(f1, f1) / R3
    Qch[0:2, 3:5] = -np.outer(f2, f2) / R4
    Gcal = np.zeros((4, 5))
    Gcal[2, 0], Gcal[3, 0] = G[2], G[3]
    Fcal1 = np.zeros(5)
    Fcal2 = np.zeros(5)
    Fcal1[1:3] = f1
    Fcal2[3:5] = f2
    Xcal0 = np.array([x0, 0.0, 0.0, 0.0, 0.0])

    xx = np.zeros((4, 4, 5, 5))
    xx[:, F] = Acal
    xx[:, H] = Mcal
    xx[:, CH] = Hcal
    xy = np.zeros((4, 4, 4, 5, 4))
    xy[:, :, F] = Ncal
    xy[:, :, C] = Bcal
    xy[:, :, CH] = Ccal
    yx = np.zeros((4, 4, 5))
    yx[F] = Qcal
    yx[CH] = Qch
    yy = np.zeros((4, 4, 4, 4))
    yy[:, F] = Abar
    yy[:, H] = Mbar
    yy[:, CH] = Ical

    return LeaderSystemMatrices(
        t=t, Acal=Acal, Ncal=Ncal, Abar=Abar, Mcal=Mcal, Hcal=Hcal, Mbar=Mbar,
        Ical=Ical, Bcal=Bcal, Ccal=Ccal, Dbar=Dbar, Mbar4=Mbar4, Ebar=Ebar,
        Mbar5=Mbar5, Qcal=Qcal, Qcal_checkhat=Qch, Fcal1=Fcal1, Fcal2=Fcal2,
        Gcal=Gcal, Xcal0=Xcal0, R3=R3, R4=R4, xx=xx, xy=xy, yx=yx, yy=yy,
    )


def structural_mask() -> dict:
    """Boolean masks of entries allowed to be nonzero, per block family."""
    m = {}
    acal = np.zeros((4, 5, 5), bool)
    acal[:, 0, 0] = True
    acal[:, 1:3, 1:3] = acal[:, 3:5, 3:5] = True
    acal[2, 1:, 1:] = False
    m["Acal"] = acal
    ncal = np.zeros((4, 4, 5, 4), bool)
    for i in range(4):
        for j in range(4):
            ncal[i, j, 0, 0:2] = j != 2
            ncal[i, j, 1:3, 2] = ncal[i, j, 3:5, 3] = i != 2
    m["Ncal"] = ncal
    abar = np.zeros((4, 4, 4), bool)
    abar[:, 0:2, 0:2] = True
    abar[2, 0:2, 0:2] = False
    abar[:, 2, 2] = abar[:, 3, 3] = True
    m["Abar"] = abar
    mcal = np.zeros((4, 5, 5), bool)
    mcal[:, 0, 0] = True
    m["Mcal"] = mcal
    mbar = np.zeros((4, 4, 4), bool)
    mbar[:, 2, 2] = mbar[:, 3, 3] = True
    m["Mbar"] = mbar
    bc = np.zeros((4, 4, 5, 4), bool)
    bc[:, :, 0, 2:4] = True
    m["Bcal"] = m["Ccal"] = bc
    hcal = np.zeros((4, 5, 5), bool)
    hcal[:, 0, 1:5] = True
    m["Hcal"] = hcal
    ical = np.zeros((4, 4, 4), bool)
    ical[:, 0:2, 2:4] = True
    m["Ical"] = ical
    q = np.zeros((4, 5), bool)
    q[2:4, 0] = True
    m["Qcal"] = m["Gcal"] = q
    qch = np.zeros((4, 5), bool)
    qch[0:2, 1:5] = True
    m["Qcal_checkhat"] = qch
    return m


def check_structure(mats: LeaderSystemMatrices) -> list:
    """Names of block families with a nonzero entry outside their mask."""
    bad = []
    for name, mask in structural_mask().items():
        if np.any(getattr(mats, name)[~mask] != 0.0):
            bad.append(name)
    return bad


def matrices_csv(mats_list) -> str:
    """Per-node dump of every block with its label and entry index."""
    names = ("Acal", "Ncal", "Abar", "Mcal", "Hcal", "Mbar", "Ical", "Bcal", "Ccal",
             "Dbar", "Mbar4", "Ebar", "Mbar5", "Qcal", "Qcal_checkhat", "Fcal1",
             "Fcal2", "Gcal", "Xcal0")
    lines = ["t,block,index,value"]
    for mats in mats_list:
        for name in names:
            arr = np.asarray(getattr(mats, name))
            for idx in np.ndindex(arr.shape):
                if arr[idx] != 0.0:
                    lab = "-".join(str(i) for i in idx)
                    lines.append(f"{float(mats.t)!r},{name},{lab},{float(arr[idx])!r}")
    return "\n".join(lines) + "\n"


def _representations(P, script, Xl):
    """``Y[w]`` (paths, 4) and ``Z[i, w]`` (3, paths, 4) on all four levels."""
    from .decoupler import PROJ
    n = Xl.shape[0]
    Y = np.zeros((4, n, 4))
    Z = np.zeros((3, 4, n, 4))
    for w in range(4):
        for m in range(4):
            Xs = Xl[:, PROJ[w, m]]
            Y[w] += Xs @ P[m].T
            Z[:, w] += np.einsum("iab,pb->ipa", script[:, m], Xs)
    return Y, Z


def stacked_drift_residual(eq, paths, unstacked_paths=None, return_paths: bool = False):
    """Sup-norm gap between the stacked and the primitive forward-backward system.

    The closed loop is simulated on ``paths``; its filtered levels and the
    feedback representations of ``Y`` and ``Z`` supply every conditional
    term.  On top of that, ``(X, Y)`` at the unconditioned level is advanced
    twice by Euler steps: once with the block matrices of this module, once
    with the coefficient formulas of the original state, filtered follower
    adjoint and leader adjoints (the leader controls taken from their
    stationarity conditions).  The second run uses ``unstacked_paths`` when
    given, which makes the residual O(1) and serves as a negative control.
    """
    from .simulator import simulate_closed_loop

    noise_u = paths if unstacked_paths is None else unstacked_paths
    sim = simulate_closed_loop(eq, paths, store=True, costs=False)
    model, grid = eq.model, eq.grid
    n, dt = paths.n_paths, grid.dt
    P_all, S_all = eq.leader.P, eq.script
    Y0, _ = _representations(P_all[0], S_all[0], sim.X[:, 0])
    Xs = sim.X[:, 0, F].copy()
    Ys = Y0[F].copy()
    Xu, Yu = Xs.copy(), Ys.copy()
    gap = 0.0
    traj = {"stacked_X": [Xs.copy()], "stacked_Y": [Ys.copy()],
            "unstacked_X": [Xu.copy()], "unstacked_Y": [Yu.copy()]}
    for k in range(grid.n_steps):
        t = grid.nodes[k]
        mats = eq.leader.mats[k]
        cf = model.at(t)
        fp = eq.ftab.points[k]
        Xl = sim.X[:, k]
        Yr, Zr = _representations(P_all[k], S_all[k], Xl)
        dW = paths.dW[:, k]
        dWu = noise_u.dW[:, k]

        # stacked
        Xlev = Xl.copy()
        Xlev[:, F] = Xs
        YZ = np.concatenate([Yr[None], Zr], axis=0)          # (v, lev, paths, 4)
        YZ[0, F] = Ys
        incX = np.zeros_like(Xs)
        for i in range(4):
            di = np.einsum("lab,plb->pa", mats.xx[i], Xlev) + np.einsum("vlab,vlpb->pa", mats.xy[i], YZ)
            incX += di * (dt if i == 0 else dW[:, i - 1, None])
        dY = np.einsum("lab,plb->pa", mats.yx, Xlev) + np.einsum("vlab,vlpb->pa", mats.yy, YZ)
        incY = -dY * dt + sum(Zr[j, F] * dW[:, j, None] for j in range(3))

        # primitive
        bs, fg = fp.bsde, fp.gains
        x, y3, y4 = Xu[:, 0], Xu[:, 1:3], Xu[:, 3:5]
        phi, z3, z4 = Yu[:, 0:2], Yu[:, 2], Yu[:, 3]
        zeta = Zr[:, F, :, 0:2]                               # (3, paths, 2)
        lead = []
        for j, (coef, Mc, f, R) in enumerate(((cf.d, bs.M[:, 3], bs.f1, cf.R[2]),
                                              (cf.e, bs.M[:, 4], bs.f2, cf.R[3]))):
            row = 2 + j
            ych = Xl[:, CH, 1 + 2 * j:3 + 2 * j]
            zch, qch = Yr[CH, :, row], Zr[:, CH, :, row]
            common = ych @ f + Mc[0] * zch + Mc[1:] @ qch
            u_full = -(coef[0] * Yr[C, :, row] + coef[1:] @ Zr[:, C, :, row] + common) / R
            u_hat = -(coef[0] * zch + coef[1:] @ qch + common) / R
            lead.append((u_full, u_hat))
        (u3, u3h), (u4, u4h) = lead
        xh = Xl[:, H, 0]
        uf = (-np.outer(fg.L[:, 0], xh) - np.outer(fg.L[:, 1], u3h) - np.outer(fg.L[:, 2], u4h)
              + fg.rho @ phi.T + fg.sigma @ zeta[0].T + fg.tau @ zeta[2].T)
        incXu = np.zeros_like(Xu)
        q3, q4 = Zr[:, F, :, 2], Zr[:, F, :, 3]
        nb = bs.Nb
        for i in range(4):
            h = np.full(n, dt) if i == 0 else dWu[:, i - 1]
            incXu[:, 0] += (cf.a[i] * x + cf.b[i] * uf[0] + cf.c[i] * uf[1]
                            + cf.d[i] * u3 + cf.e[i] * u4) * h
            if i == 2:
                continue
            incXu[:, 1:3] += (y3 @ bs.A[i] + np.outer(z3, nb[0, i])
                              + np.einsum("jp,ja->pa", q3, nb[1:, i])) * h[:, None]
            incXu[:, 3:5] += (y4 @ bs.A[i] + np.outer(z4, nb[0, i])
                              + np.einsum("jp,ja->pa", q4, nb[1:, i])) * h[:, None]
        M1 = bs.M[:, 0]
        dphi = (phi @ bs.A[0].T + zeta[0] @ bs.A[1].T + zeta[2] @ bs.A[3].T
                + np.outer(u3h, bs.f1) + np.outer(u4h, bs.f2))
        incYu = np.zeros_like(Yu)
        incYu[:, 0:2] = -dphi * dt + zeta[0] * dWu[:, 0, None] + zeta[2] * dWu[:, 2, None]
        for j, zj in enumerate((z3, z4)):
            row = 2 + j
            q = Zr[:, F, :, row]
            qh = Zr[:, H, :, row]
            dz = cf.a[0] * zj + cf.a[1:] @ q + M1[0] * Yr[H, :, row] + M1[1:] @ qh + cf.Q[2 + j] * x
            incYu[:, row] = -dz * dt + np.einsum("jp,pj->p", q, dWu)

        Xs, Ys = Xs + incX, Ys + incY
        Xu, Yu = Xu + incXu, Yu + incYu
        gap = max(gap, float(np.max(np.abs(Xs - Xu))), float(np.max(np.abs(Ys - Yu))))
        if return_paths:
            for key, val in (("stacked_X", Xs), ("stacked_Y", Ys), ("unstacked_X", Xu), ("unstacked_Y", Yu)):
                traj[key].append(val.copy())
    if return_paths:
        return gap, {k: np.stack(v, axis=1) for k, v in traj.items()}
    return gap

"""Followers' stage: the N matrix, the coupled Riccati pair and all gains.

Given leader controls, follower ``j`` uses ``p_j = -P~_j x - phi_j``.  The
stationarity conditions of both followers form the 2x2 linear system

    N (u1, u2)^T = -[h_x x^ + h3 u3^ + h4 u4^ + D0 Phi^ + D1 zeta^_1 + D3 zeta^_3]

with ``Phi = (phi_1, phi_2)``, ``zeta_l = (zeta_1l, zeta_2l)`` the ``dW_l``
integrands, ``D_l = diag(b_l, c_l)`` and ``h_x = (P~1 B1, P~2 C1)``.
Everything here is derived from that matrix form.  Scalar gains (``L``,
``alpha``, ``beta``, ``gamma``, ``L~``) are read off the matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from ._ode import rk4_backward
from .errors import GateError
from .model import Coeffs, ModelCoefficients, TimeGrid

DET_TOL = 1e-10


def assemble_N(cf: Coeffs, P1: float, P2: float):
    """Return ``(N, det N)`` for Riccati values ``P1``, ``P2``."""
    b, c = cf.b[1:], cf.c[1:]
    N = np.array([
        [cf.R[0] + P1 * np.dot(b, b), P1 * np.dot(b, c)],
        [P2 * np.dot(b, c), cf.R[1] + P2 * np.dot(c, c)],
    ])
    det = N[0, 0] * N[1, 1] - N[0, 1] * N[1, 0]
    return N, det


def invertible(N: np.ndarray, det: float) -> bool:
    """Scale-aware invertibility gate ``|det N| >= tol (1 + |N|_F^2)``."""
    return abs(det) >= DET_TOL * (1.0 + float(np.sum(N * N)))


@dataclass(frozen=True)
class FollowerGains:
    """Feedback data of the followers at one time.

    ``L[j]`` holds ``(L_j1, L_j2, L_j3)`` for follower ``j+1``.  The signed
    gains ``rho``, ``sigma`` and ``tau`` multiply ``Phi^``, ``zeta^_1`` and
    ``zeta^_3``: row ``j`` belongs to follower ``j+1``.  ``alpha``, ``beta``
    and ``gamma`` are the unsigned entries of those rows in the usual
    scalar layout.
    """

    N: np.ndarray
    detN: float
    K: np.ndarray
    barR1: float
    barR2: float
    barB1: float
    barC1: float
    L: np.ndarray
    rho: np.ndarray
    sigma: np.ndarray
    tau: np.ndarray
    alpha1: np.ndarray
    alpha2: np.ndarray
    beta1: np.ndarray
    beta2: np.ndarray
    gamma1: np.ndarray
    gamma2: np.ndarray


@dataclass(frozen=True)
class FollowerBsdeCoefficients:
    """Coefficients of the ``Phi^`` equation and the leaders' state equation.

    ``dPhi^ = -(A0 Phi^ + A1 zeta^_1 + A3 zeta^_3 + f1 u3^ + f2 u4^) dt
    + zeta^_1 dW1 + zeta^_3 dW3`` with ``Phi^(T) = 0``.  ``A[l]`` is stored
    for ``l = 0..3`` with ``A[2] = 0``.  ``M[i, m-1]`` is ``M_im`` and
    ``Nb[i, l] = (M_i2 b_l, M_i3 c_l)``.
    """

    A: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    M: np.ndarray
    Nb: np.ndarray
    Ltilde1: np.ndarray
    Ltilde2: np.ndarray

    @property
    def A0(self):
        return self.A[0]

    @property
    def A1(self):
        return self.A[1]

    @property
    def A3(self):
        return self.A[3]


@dataclass(frozen=True)
class FollowerPoint:
    t: float
    P1: float
    P2: float
    gains: FollowerGains
    bsde: FollowerBsdeCoefficients


def _follower_drift_gain(cf: Coeffs, P1: float, P2: float, t: float):
    """``w K h_x`` which multiplies ``P~_j`` in the Riccati equations."""
    N, det = assemble_N(cf, P1, P2)
    if not invertible(N, det):
        raise GateError("A2", t, f"det N = {det:.3e}")
    a, b, c = cf.a, cf.b, cf.c
    w = np.array([b[0] + a[1:] @ b[1:], c[0] + a[1:] @ c[1:]])
    hx = np.array([P1 * w[0], P2 * w[1]])
    adj = np.array([[N[1, 1], -N[0, 1]], [-N[1, 0], N[0, 0]]])
    return w @ (adj @ hx) / det


def follower_point(cf: Coeffs, P1: float, P2: float, t: float = 0.0) -> FollowerPoint:
    """All follower-stage quantities at one time for given ``P~1``, ``P~2``."""
    N, det = assemble_N(cf, P1, P2)
    if not invertible(N, det):
        raise GateError("A2", t, f"det N = {det:.3e}")
    a, b, c, d, e = cf.a, cf.b, cf.c, cf.d, cf.e
    K = np.array([[N[1, 1], -N[0, 1]], [-N[1, 0], N[0, 0]]]) / det
    p = np.array([P1, P2])
    w = np.array([b[0] + a[1:] @ b[1:], c[0] + a[1:] @ c[1:]])
    hx = p * w
    h3 = p * np.array([b[1:] @ d[1:], c[1:] @ d[1:]])
    h4 = p * np.array([b[1:] @ e[1:], c[1:] @ e[1:]])
    L = np.column_stack([K @ hx, K @ h3, K @ h4])
    # G[l] = -K D_l: gain of u on the l-th integrand vector (l = 0 is Phi^).
    G = np.array([-K * np.array([b[l], c[l]]) for l in range(4)])
    S = b[1:] @ c[1:]
    barR1, barR2 = N[0, 0], N[1, 1]
    alpha1 = np.array([barR2 * b[0], P1 * c[0] * S]) / det
    alpha2 = np.array([P2 * b[0] * S, barR1 * c[0]]) / det
    beta1 = np.array([barR2 * b[1], barR2 * b[3]]) / det
    beta2 = np.array([P2 * b[1] * S, P2 * b[3] * S]) / det
    gamma1 = np.array([P1 * c[1] * S, P1 * c[3] * S]) / det
    gamma2 = np.array([barR1 * c[1], barR1 * c[3]]) / det
    gains = FollowerGains(
        N=N, detN=det, K=K, barR1=barR1, barR2=barR2, barB1=w[0], barC1=w[1],
        L=L, rho=G[0], sigma=G[1], tau=G[3],
        alpha1=alpha1, alpha2=alpha2, beta1=beta1, beta2=beta2,
        gamma1=gamma1, gamma2=gamma2,
    )

    pw = np.outer(p, w)
    A = np.zeros((4, 2, 2))
    for l in (0, 1, 3):
        A[l] = a[l] * np.eye(2) + pw @ G[l]
    Dbar = d[0] + a[1:] @ d[1:]
    Ebar = e[0] + a[1:] @ e[1:]
    f1 = p * (Dbar - w @ L[:, 1])
    f2 = p * (Ebar - w @ L[:, 2])

    bc = np.column_stack([b, c])                   # rows i: (b_i, c_i)
    M = np.zeros((4, 5))
    M[:, 0] = -bc @ L[:, 0]
    M[:, 3] = -bc @ L[:, 1]
    M[:, 4] = -bc @ L[:, 2]
    M[:, 1:3] = -bc @ K                            # (M_i2, M_i3)
    Nb = M[:, None, 1:3] * bc[None, :, :]          # Nb[i, l] = (M_i2 b_l, M_i3 c_l)

    lt1 = np.array([A[0, 0, 0], A[0, 0, 1], A[1, 0, 0], A[3, 0, 0],
                    A[1, 0, 1], A[3, 0, 1], f1[0], f2[0]])
    lt2 = np.array([A[0, 1, 1], A[0, 1, 0], A[1, 1, 0], A[3, 1, 0],
                    A[1, 1, 1], A[3, 1, 1], f1[1], f2[1]])
    bsde = FollowerBsdeCoefficients(A=A, f1=f1, f2=f2, M=M, Nb=Nb, Ltilde1=lt1, Ltilde2=lt2)
    return FollowerPoint(t=t, P1=P1, P2=P2, gains=gains, bsde=bsde)


def follower_riccati_rhs(cf: Coeffs, P1: float, P2: float, t: float = 0.0):
    """Time derivatives of ``(P~1, P~2)``."""
    rate = 2.0 * cf.a[0] + cf.a[1:] @ cf.a[1:]
    g = _follower_drift_gain(cf, P1, P2, t)
    return np.array([
        -rate * P1 - cf.Q[0] + P1 * g,
        -rate * P2 - cf.Q[1] + P2 * g,
    ])


@dataclass(frozen=True)
class FollowerRiccatiSolution:
    """Node values of ``P~1``, ``P~2``.

    When the symmetric case holds, ``Ptilde_sum`` solves the scalar
    Riccati equation of the sum and ``aux1``, ``aux2`` solve the linear
    auxiliary equations driven by it.  Otherwise those are ``None``.
    """

    grid: TimeGrid
    Ptilde1: np.ndarray
    Ptilde2: np.ndarray
    Ptilde_sum: np.ndarray | None
    aux1: np.ndarray | None
    aux2: np.ndarray | None
    symmetric: bool
    note: str = ""


def _sum_and_aux_rhs(cf: Coeffs, y):
    P, X1, X2 = y
    rate = 2.0 * cf.a[0] + cf.a[1:] @ cf.a[1:]
    B = cf.b[0] + cf.a[1:] @ cf.b[1:]
    denom = cf.R[0] + (cf.b[1:] @ cf.b[1:]) * P
    g = B * B * P / denom
    return np.array([
        -rate * P - cf.Q[0] - cf.Q[1] + g * P,
        -rate * X1 - cf.Q[0] + g * X1,
        -rate * X2 - cf.Q[1] + g * X2,
    ])


def solve_follower_riccati(model: ModelCoefficients, grid: TimeGrid,
                           substeps: int = 1) -> FollowerRiccatiSolution:
    """Backward RK4 sweep of the coupled follower Riccati pair."""
    flags = model.flags(grid)
    if not flags.A1:
        msg = next(m for m in flags.messages if "A1" in m)
        raise GateError("A1", 0.0, msg)
    nodes = grid.nodes
    G = np.array(model.G[:2], dtype=float)

    def rhs(t, y):
        return follower_riccati_rhs(model.at(t), y[0], y[1], t)

    Y = rk4_backward(rhs, G, nodes, substeps, what="follower Riccati")
    Ps = a1 = a2 = None
    note = ""
    if flags.A3:
        Z = rk4_backward(lambda t, y: _sum_and_aux_rhs(model.at(t), y),
                         np.array([G.sum(), G[0], G[1]]), nodes, substeps,
                         what="follower sum Riccati")
        Ps, a1, a2 = Z[:, 0], Z[:, 1], Z[:, 2]
    else:
        note = "existence not covered by the symmetric-case lemma"
    return FollowerRiccatiSolution(grid, Y[:, 0], Y[:, 1], Ps, a1, a2, flags.A3, note)


@dataclass(frozen=True)
class FollowerTables:
    """Follower quantities at every grid node (leading axis is time)."""

    t: np.ndarray
    P1: np.ndarray
    P2: np.ndarray
    N: np.ndarray
    detN: np.ndarray
    K: np.ndarray
    L: np.ndarray
    rho: np.ndarray
    sigma: np.ndarray
    tau: np.ndarray
    alpha1: np.ndarray
    alpha2: np.ndarray
    beta1: np.ndarray
    beta2: np.ndarray
    gamma1: np.ndarray
    gamma2: np.ndarray
    A: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    M: np.ndarray
    Nb: np.ndarray
    Ltilde1: np.ndarray
    Ltilde2: np.ndarray
    points: tuple


def compute_L_gains(model: ModelCoefficients, sol: FollowerRiccatiSolution, k: int) -> FollowerGains:
    """Gain row at grid node ``k``."""
    t = sol.grid.nodes[k]
    return follower_point(model.at(t), sol.Ptilde1[k], sol.Ptilde2[k], t).gains


def compute_Ltilde(model: ModelCoefficients, sol: FollowerRiccatiSolution, k: int) -> FollowerBsdeCoefficients:
    """BSDE coefficient row at grid node ``k``."""
    t = sol.grid.nodes[k]
    return follower_point(model.at(t), sol.Ptilde1[k], sol.Ptilde2[k], t).bsde


def tabulate(model: ModelCoefficients, sol: FollowerRiccatiSolution) -> FollowerTables:
    """Evaluate every follower quantity on the grid nodes (cached table)."""
    pts = tuple(
        follower_point(model.at(t), p1, p2, t)
        for t, p1, p2 in zip(sol.grid.nodes, sol.Ptilde1, sol.Ptilde2)
    )
    cols = {}
    for part in ("gains", "bsde"):
        for f in fields(getattr(pts[0], part)):
            cols[f.name] = np.array([getattr(getattr(p, part), f.name) for p in pts])
    keep = {f.name for f in fields(FollowerTables)}
    cols = {k: v for k, v in cols.items() if k in keep}
    return FollowerTables(t=sol.grid.nodes.copy(), P1=sol.Ptilde1, P2=sol.Ptilde2,
                          points=pts, **cols)


def follower_openloop_residual(R, b, u, p_hat, k_hat):
    """Sup-norm stationarity residual ``|R u - b0 p^ - sum_i b_i k^_i|``.

    ``R`` and ``u`` have shape ``(..., n)``; ``b`` has shape ``(n, 4)``
    (node, coefficient index); ``p_hat`` matches ``u`` and ``k_hat`` has a
    trailing axis of length 3 for the three Brownian components.
    """
    b = np.asarray(b)
    r = R * u - b[:, 0] * p_hat - np.einsum("...ki,ki->...k", k_hat, b[:, 1:])
    return float(np.max(np.abs(r), initial=0.0))


def follower_csv(model: ModelCoefficients, sol: FollowerRiccatiSolution) -> str:
    tab = tabulate(model, sol)
    names = ["L11", "L12", "L13", "L21", "L22", "L23"]
    lines = ["t,Ptilde1,Ptilde2,detN," + ",".join(names)]
    for k, t in enumerate(tab.t):
        row = [t, tab.P1[k], tab.P2[k], tab.detN[k], *tab.L[k].ravel()]
        lines.append(",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"

"""Feedback representation of the martingale integrands ``Z_1, Z_2, Z_3``.

With the ansatz ``Y = P1 X + P2 X^ + P3 X^v + P4 X^v^`` (levels F, H, C, CH)
the integrand of ``Y`` against ``dW_i`` only collects the levels that are
driven by ``W_i``: F by all three, H by ``W1, W3``, C by ``W2, W3`` and CH by
``W3``.  Conditioning maps levels through the table :data:`PROJ`.  This
gives a linear relation

    Z_i = sum_lev G_i[lev] X_lev + sum_j sum_lev H_ij[lev] Z_j,lev

(``Z_j,lev`` being ``Z_j``, ``Z^_j``, ``Zv_j``, ``Z^v_j``).  Projecting it to
the CH, C, H and F levels in turn gives four 12x12 systems that are solved
in that order.  The full representation is

    Z_i = Ncal_i X + Ncal^_i X^ + Ncalv_i X^v + Ncal^v_i X^v^.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GateError
from .leader_assembly import CH, C, F, H, LeaderSystemMatrices

RCOND_TOL = 1e-12

# PROJ[w][lev]: level of E[X_lev | world w].
PROJ = np.array([
    [F, H, C, CH],
    [H, H, CH, CH],
    [C, CH, C, CH],
    [CH, CH, CH, CH],
])
# Brownian components that drive each level.
ALLOWED = {F: (1, 2, 3), H: (1, 3), C: (2, 3), CH: (3,)}
# T[l, m, n] = 1 when PROJ[l][m] == n.
TPROJ = np.zeros((4, 4, 4))
for _l in range(4):
    for _m in range(4):
        TPROJ[_l, _m, PROJ[_l, _m]] = 1.0
# AMASK[i, lev] = 1 when W_i drives level lev (i = 0 unused).
AMASK = np.zeros((4, 4))
for _lev, _ch in ALLOWED.items():
    for _i in _ch:
        AMASK[_i, _lev] = 1.0
T16 = TPROJ.reshape(16, 4)
# WGT[i-1, 4 L + m, n] = AMASK[i, L] TPROJ[L, m, n]
WGT = (AMASK[1:, :, None, None] * TPROJ[None]).reshape(3, 16, 4)


@dataclass(frozen=True)
class KBlocks:
    """Coefficient blocks of the four projected relations.

    ``G[i-1, lev]`` (4x5) and ``H[i-1, j-1, lev]`` (4x4) are the level
    expanded relation; the staged families are sums of their slices.
    """

    G: np.ndarray
    H: np.ndarray

    def _gsum(self, levels):
        return self.G[:, list(levels)].sum(axis=1)

    def _hsum(self, levels):
        return self.H[:, :, list(levels)].sum(axis=2)

    @property
    def K0(self):            # checkhat stage: K_i0
        return self._gsum((F, H, C, CH))

    @property
    def K(self):             # checkhat stage: K_ij
        return self._hsum((F, H, C, CH))

    @property
    def Kbar0(self):
        return self._gsum((F, C))

    @property
    def Ktilde0(self):
        return self._gsum((H, CH))

    @property
    def Kbar(self):
        return self._hsum((F, C))

    @property
    def Ktilde(self):
        return self._hsum((H, CH))

    @property
    def Khat0(self):
        return self._gsum((F, H))

    @property
    def Kcheckhat0(self):
        return self._gsum((C, CH))

    @property
    def Khat(self):
        return self._hsum((F, H))

    @property
    def Kcheckhat(self):
        return self._hsum((C, CH))

    @property
    def Kscript(self):       # full stage: coefficient of Z_j in Z_i
        return self.H[:, :, F]


@dataclass(frozen=True)
class DecouplingGains:
    """Stage results.  Index ``i-1`` along the leading axis is ``Z_i``.

    ``script[i-1, lev]`` holds the full-stage gain on level ``lev``;
    ``dets`` and ``rconds`` are the determinants and reciprocal condition
    numbers of the four coefficient matrices (checkhat, check, hat, full).
    """

    N: np.ndarray
    Ncheck: np.ndarray
    Ntilde: np.ndarray
    Nhat: np.ndarray
    Ncheckhat: np.ndarray
    script: np.ndarray
    dets: np.ndarray
    rconds: np.ndarray


def _w_stack(P: np.ndarray, script: np.ndarray | None) -> np.ndarray:
    """Coefficient arrays of Y and Z_j per level: shape (4 var, 4 lev, 4, 5)."""
    W = np.zeros((4, 4, 4, 5))
    W[0] = P
    if script is not None:
        W[1:] = script
    return W


def closed_loop_part(mats: LeaderSystemMatrices, P: np.ndarray, script=None):
    """Closed-loop X coefficients ``D[i, lev]`` (5x5) and ``-dY`` drift ``E[lev]``.

    With ``script`` omitted only the X and Y terms are included (the part
    known before the integrands are solved for).
    """
    W = _w_stack(P, script)
    vs = slice(None) if script is not None else slice(0, 1)
    U = np.einsum("ivlab,vmbc->ilmac", mats.xy[:, vs], W[vs]).reshape(4, 16, 5, 5)
    V = np.einsum("vlab,vmbc->lmac", mats.yy[vs], W[vs]).reshape(16, 4, 5)
    D = mats.xx + np.einsum("iqac,qn->inac", U, T16)
    E = mats.yx + np.einsum("qac,qn->nac", V, T16)
    return D, E


def k_blocks(mats: LeaderSystemMatrices, P: np.ndarray) -> KBlocks:
    """Level-expanded relation for the integrands at given ``P``."""
    D0, _ = closed_loop_part(mats, P)
    # G_i[n] = sum_{L allowed for i, m} [PROJ[L][m] == n] P_L D0_i[m]
    PD = np.einsum("Lab,imbc->iLmac", P, D0[1:]).reshape(3, 16, 4, 5)
    Gm = np.einsum("iqac,iqn->inac", PD, WGT)
    PX = np.einsum("Lab,ijlbc->ijLlac", P, mats.xy[1:, 1:]).reshape(3, 3, 16, 4, 4)
    Hm = np.einsum("ijqac,iqn->ijnac", PX, WGT)
    return KBlocks(G=Gm, H=Hm)


def _block_matrix(K: np.ndarray) -> np.ndarray:
    """``I_12 - [K_ij]`` from a (3, 3, 4, 4) array."""
    return np.eye(12) - K.transpose(0, 2, 1, 3).reshape(12, 12)


def _factor(K: np.ndarray, assumption: str, t: float):
    A = _block_matrix(K)
    det = float(np.linalg.det(A))
    with np.errstate(all="ignore"):
        rc = 1.0 / np.linalg.cond(A, 1)
    if not np.isfinite(rc) or rc < RCOND_TOL:
        raise GateError(assumption, t, f"reciprocal condition {rc:.3e}, det {det:.3e}")
    return A, det, rc


def _solve(A: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve with rhs of shape (3, 4, m) and return the same shape."""
    m = rhs.shape[-1]
    return np.linalg.solve(A, rhs.reshape(12, m)).reshape(3, 4, m)


def solve_checkhat_stage(kb: KBlocks, t: float = 0.0):
    """``Z^v_i = N_i X^v``.  Returns ``(N, det, rcond)``."""
    A, det, rc = _factor(kb.K, "A5", t)
    return _solve(A, kb.K0), det, rc


def solve_check_stage(kb: KBlocks, N: np.ndarray, t: float = 0.0):
    """``Zv_i = Nv_i Xv + N~_i X^v``.  Returns ``(Ncheck, Ntilde, det, rcond)``."""
    A, det, rc = _factor(kb.Kbar, "A6", t)
    Nbar = kb.Ktilde0 + np.einsum("ijab,jbc->iac", kb.Ktilde, N)
    both = _solve(A, np.concatenate([kb.Kbar0, Nbar], axis=2))
    return both[..., :5], both[..., 5:], det, rc


def solve_hat_stage(kb: KBlocks, N: np.ndarray, t: float = 0.0):
    """``Z^_i = N^_i X^ + Nv^_i X^v``.  Returns ``(Nhat, Ncheckhat, det, rcond)``."""
    A, det, rc = _factor(kb.Khat, "A7", t)
    rhs2 = kb.Kcheckhat0 + np.einsum("ijab,jbc->iac", kb.Kcheckhat, N)
    both = _solve(A, np.concatenate([kb.Khat0, rhs2], axis=2))
    return both[..., :5], both[..., 5:], det, rc


def solve_full_stage(kb: KBlocks, N, Ncheck, Ntilde, Nhat, Ncheckhat, t: float = 0.0):
    """Full representation; returns ``(script, det, rcond)`` with script (3, 4, 4, 5)."""
    A, det, rc = _factor(kb.Kscript, "A8", t)
    Hm, Gm = kb.H, kb.G
    ein = lambda Hl, X: np.einsum("ijab,jbc->iac", Hl, X)  # noqa: E731
    rhs = np.stack([
        Gm[:, F],
        Gm[:, H] + ein(Hm[:, :, H], Nhat),
        Gm[:, C] + ein(Hm[:, :, C], Ncheck),
        Gm[:, CH] + ein(Hm[:, :, H], Ncheckhat) + ein(Hm[:, :, C], Ntilde)
        + ein(Hm[:, :, CH], N),
    ], axis=1)                                     # (3, 4 lev, 4, 5)
    sol = _solve(A, rhs.transpose(0, 2, 1, 3).reshape(3, 4, 20))
    return sol.reshape(3, 4, 4, 5).transpose(0, 2, 1, 3), det, rc


def decouple(mats: LeaderSystemMatrices, P: np.ndarray, t: float = 0.0) -> DecouplingGains:
    """Run the four stages in order and collect the gains."""
    kb = k_blocks(mats, P)
    N, d1, r1 = solve_checkhat_stage(kb, t)
    Nc, Nt, d2, r2 = solve_check_stage(kb, N, t)
    Nh, Nch, d3, r3 = solve_hat_stage(kb, N, t)
    S, d4, r4 = solve_full_stage(kb, N, Nc, Nt, Nh, Nch, t)
    return DecouplingGains(N=N, Ncheck=Nc, Ntilde=Nt, Nhat=Nh, Ncheckhat=Nch, script=S,
                           dets=np.array([d1, d2, d3, d4]),
                           rconds=np.array([r1, r2, r3, r4]))


def relation_residual(mats: LeaderSystemMatrices, P: np.ndarray, script: np.ndarray) -> float:
    """Residual of the level-expanded integrand relation under ``script``.

    For every ``i`` and level ``n``:
    ``script_i[n] - G_i[n] - sum_j sum_{l, m: PROJ[l][m] = n} H_ij[l] script_j[m]``.
    """
    kb = k_blocks(mats, P)
    back = np.einsum("ijlab,lmn,jmbc->inac", kb.H, TPROJ, script)
    return float(np.max(np.abs(script - kb.G - back)))


def decoupling_consistency(mats: LeaderSystemMatrices, P: np.ndarray,
                           g: DecouplingGains) -> dict:
    """Tower consistency of the four stages and the relation residual."""
    S = g.script
    proj = {
        "checkhat": S.sum(axis=1) - g.N,
        "check": S[:, F] + S[:, C] - g.Ncheck,
        "check_tilde": S[:, H] + S[:, CH] - g.Ntilde,
        "hat": S[:, F] + S[:, H] - g.Nhat,
        "hat_check": S[:, C] + S[:, CH] - g.Ncheckhat,
    }
    out = {k: float(np.max(np.abs(v))) for k, v in proj.items()}
    out["relation"] = relation_residual(mats, P, S)
    return out


def stage_residuals(kb: KBlocks, g: DecouplingGains) -> np.ndarray:
    """Relative linear-solve residuals of the four staged systems."""
    def rel(K, X, B):
        r = _block_matrix(K) @ X.reshape(12, -1) - B.reshape(12, -1)
        return float(np.max(np.abs(r)) / (1.0 + np.max(np.abs(B), initial=0.0)))

    ein = lambda Hl, X: np.einsum("ijab,jbc->iac", Hl, X)  # noqa: E731
    S = g.script
    full_rhs = np.concatenate([
        kb.G[:, F], kb.G[:, H] + ein(kb.H[:, :, H], g.Nhat),
        kb.G[:, C] + ein(kb.H[:, :, C], g.Ncheck),
        kb.G[:, CH] + ein(kb.H[:, :, H], g.Ncheckhat) + ein(kb.H[:, :, C], g.Ntilde)
        + ein(kb.H[:, :, CH], g.N)], axis=2)
    return np.array([
        rel(kb.K, g.N, kb.K0),
        rel(kb.Kbar, np.concatenate([g.Ncheck, g.Ntilde], 2),
            np.concatenate([kb.Kbar0, kb.Ktilde0 + ein(kb.Ktilde, g.N)], 2)),
        rel(kb.Khat, np.concatenate([g.Nhat, g.Ncheckhat], 2),
            np.concatenate([kb.Khat0, kb.Kcheckhat0 + ein(kb.Kcheckhat, g.N)], 2)),
        rel(kb.Kscript, np.concatenate([S[:, lev] for lev in range(4)], 2), full_rhs),
    ])

"""Executable checks of the equilibrium claims.

* :func:`filter_oracle` estimates conditional expectations by averaging over
  fresh draws of the unobserved Brownian components.
* :func:`reconstruct_adjoints` and :func:`smp_residuals` evaluate the
  stationarity conditions of all four players along simulated paths.
* :func:`nash_deviation_test` perturbs one player's control in a measurable
  direction and measures the cost change under common random numbers.
* :func:`lemma_suite` checks the symmetric-case identities of the follower
  Riccati pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decoupler import ALLOWED
from .equilibrium import Equilibrium
from .follower_stage import solve_follower_riccati
from .leader_assembly import CH, C, F, H, LEVEL_NAMES
from .model import ModelCoefficients, TimeGrid
from .simulator import (BrownianPaths, coarsen, level_operators, paths_for,
                        simulate_closed_loop)

OWN_LEVEL = {1: H, 2: H, 3: C, 4: C}
ALLOWED_LEVELS = {1: (H, CH), 2: (H, CH), 3: (C, CH), 4: (C, CH)}


class MeasurabilityError(ValueError):
    """A perturbation direction uses information the player does not have."""


# ------------------------------------------------------------------ filter

@dataclass(frozen=True)
class FilterOracleReport:
    checkpoints: np.ndarray
    m_particles: int
    construction: dict
    estimated: dict
    simulated: dict
    z_scores: dict

    @property
    def max_abs_z(self) -> float:
        return float(max(np.max(np.abs(z)) for z in self.z_scores.values()))


class _Recorder:
    def __init__(self, ks, levels):
        self.ks = list(ks)
        self.levels = levels
        self.data = {}

    def step(self, k, t, Xl, u, dW):
        if k in self.ks:
            self.data[k] = Xl[:, self.levels].copy()

    def finish(self, Xl, u):
        if self.ks[-1] not in self.data:
            self.data[self.ks[-1]] = Xl[:, self.levels].copy()


def _zs(samples, ref):
    m = samples.shape[0]
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / np.sqrt(m)
    diff = mean - ref
    # A spread at round-off level means the particles agree: compare exactly.
    floor = 1e-12 * (1.0 + np.abs(ref))
    noisy = se > floor
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(noisy, diff / np.where(noisy, se, 1.0),
                     np.where(np.abs(diff) <= floor, 0.0, np.inf))
    return mean, z


def filter_oracle(eq: Equilibrium, seed: int, m_particles: int = 20000,
                  n_checkpoints: int = 5, observed_path: int = 0) -> FilterOracleReport:
    """Particle estimates of the filtered states at ``n_checkpoints`` times.

    One observed path is drawn.  Keeping its ``(W1, W3)`` and redrawing ``W2``
    estimates expectations given the followers' information; keeping
    ``(W2, W3)`` and redrawing ``W1`` those given the leaders'.
    """
    n = eq.grid.n_steps
    ks = [int(round(n * (c + 1) / n_checkpoints)) for c in range(n_checkpoints)]
    obs = paths_for(eq, seed, 1, path_offset=observed_path).dW[0]
    fresh = paths_for(eq, seed + 1, m_particles, path_offset=0).dW

    def run(keep):
        dW = fresh.copy()
        for i in keep:
            dW[:, :, i - 1] = obs[:, i - 1]
        rec = _Recorder(ks, [F, H, C, CH])
        simulate_closed_loop(eq, BrownianPaths(dW, eq.grid.dt, seed, np.arange(m_particles),
                                               (seed + 1,) * 3), observers=[rec], costs=False)
        return np.stack([rec.data[k] for k in ks], axis=1)   # (m, checkpoints, 4, 5)

    g1 = run((1, 3))
    g2 = run((2, 3))
    est, sim, zs = {}, {}, {}
    pairs = {
        "E[X|G1]": (g1[:, :, F], g1[0, :, H]),
        "E[Xcheck|G1]": (g1[:, :, C], g1[0, :, CH]),
        "E[X|G2]": (g2[:, :, F], g2[0, :, C]),
        "E[Xhat|G2]": (g2[:, :, H], g2[0, :, CH]),
    }
    for name, (samples, ref) in pairs.items():
        mean, z = _zs(samples, ref)
        est[name], sim[name], zs[name] = mean, ref, z
    construction = {"seed": seed, "observed_path": observed_path,
                    "fresh_seed": seed + 1, "steps": n}
    return FilterOracleReport(eq.grid.nodes[ks], m_particles, construction, est, sim, zs)


# ------------------------------------------------------------------ adjoints

def reconstruct_adjoints(eq: Equilibrium, X: np.ndarray) -> dict:
    """Adjoints read from their feedback representations.

    ``X`` has shape ``(paths, n+1, 4, 5)`` (a stored simulation).  Returns a
    dict of arrays with a trailing time axis: ``Y[lev]`` (paths, n+1, 4),
    ``Z[i][lev]``, ``p_hat`` (2, paths, n+1), and ``p_terminal``,
    ``z_terminal`` identities at the horizon.
    """
    P = eq.leader.P                                # (n+1, 4, 4, 5)
    S = eq.script                                   # (n+1, 3, 4, 4, 5)
    from .decoupler import PROJ
    Y = np.zeros(X.shape[:2] + (4, 4))
    Z = np.zeros((3,) + X.shape[:2] + (4, 4))
    for w in range(4):
        for m in range(4):
            src = PROJ[w, m]
            Y[:, :, w] += np.einsum("kab,pkb->pka", P[:, m], X[:, :, src])
            Z[:, :, :, w] += np.einsum("ikab,pkb->ipka", S[:, :, m].transpose(1, 0, 2, 3),
                                       X[:, :, src])
    Pt = eq.leader.Ptilde                           # (n+1, 2)
    phi_hat = Y[:, :, H, 0:2]
    xh = X[:, :, H, 0]
    p_hat = np.stack([-Pt[None, :, j] * xh - phi_hat[:, :, j] for j in range(2)])
    G = np.asarray(eq.model.G)
    x = X[:, :, F, 0]
    p_full_T = np.stack([-Pt[-1, j] * x[:, -1] - Y[:, -1, F, j] for j in range(2)])
    return {
        "Y": Y, "Z": Z, "p_hat": p_hat,
        "p_terminal": p_full_T + G[:2, None] * x[None, :, -1],
        "z_terminal": Y[:, -1, F, 2:4] - G[None, 2:4] * x[:, -1, None],
    }


class _SmpObserver:
    """Propagates adjoints with their own dynamics and records stationarity.

    The follower adjoints ``p^_j`` and the leader adjoints ``zv_j``, ``z^v_j``
    start from their representation at ``t = 0`` and then follow Euler steps
    of their backward equations run forward in time, with the martingale
    integrands taken from the representations.  The residuals vanish as
    ``dt -> 0`` exactly when the Riccati data and the gains are consistent.
    """

    def __init__(self, eq: Equilibrium, n: int):
        self.eq = eq
        self.dt = eq.grid.dt
        self.sup = np.zeros((4, n))
        self.p = None
        self.z = None

    def _rep(self, k, Xl):
        eq = self.eq
        P, S = eq.leader.P[k], eq.script[k]
        g = eq.leader.gains[k]
        Yh = Xl[:, H] @ (P[F] + P[H]).T + Xl[:, CH] @ (P[C] + P[CH]).T
        Yc = Xl[:, C] @ (P[F] + P[C]).T + Xl[:, CH] @ (P[H] + P[CH]).T
        Ych = Xl[:, CH] @ P.sum(axis=0).T
        Zh = np.einsum("iab,pb->ipa", g.Nhat, Xl[:, H]) + np.einsum("iab,pb->ipa", g.Ncheckhat, Xl[:, CH])
        Zc = np.einsum("iab,pb->ipa", g.Ncheck, Xl[:, C]) + np.einsum("iab,pb->ipa", g.Ntilde, Xl[:, CH])
        Zch = np.einsum("iab,pb->ipa", g.N, Xl[:, CH])
        return Yh, Yc, Ych, Zh, Zc, Zch

    def step(self, k, t, Xl, u, dW):
        eq, dt = self.eq, self.dt
        cf = eq.model.at(t)
        fp = eq.ftab.points[k]
        Pt = (fp.P1, fp.P2)
        Yh, Yc, Ych, Zh, Zc, Zch = self._rep(k, Xl)
        Cop = level_operators(eq.D[k])
        sig_hat = np.stack([(Xl[:, H] @ Cop[i, H, H][0] + Xl[:, CH] @ Cop[i, H, CH][0])
                            for i in range(1, 4)])          # (3, paths)
        if self.p is None:
            self.p = np.stack([-Pt[j] * Xl[:, H, 0] - Yh[:, j] for j in range(2)])
            self.z = np.stack([Yc[:, 2:4].T, Ych[:, 2:4].T])   # (2 kinds, 2 leaders, paths)
        xh, xc, xch = Xl[:, H, 0], Xl[:, C, 0], Xl[:, CH, 0]
        ctrl = (cf.b, cf.c)
        for j in range(2):
            kh = np.stack([-Pt[j] * sig_hat[i] - (Zh[i, :, j] if i != 1 else 0.0)
                           for i in range(3)])
            r = cf.R[j] * u[j] - ctrl[j][0] * self.p[j] - np.einsum("i,ip->p", ctrl[j][1:], kh)
            self.sup[j] = np.maximum(self.sup[j], np.abs(r))
            drift = cf.a[0] * self.p[j] + cf.a[1:] @ kh - cf.Q[j] * xh
            self.p[j] = self.p[j] - drift * dt + kh[0] * dW[:, 0] + kh[2] * dW[:, 2]
        M = fp.bsde.M
        fs = (fp.bsde.f1, fp.bsde.f2)
        lc = (cf.d, cf.e)
        for j in range(2):
            row = 2 + j
            zc, zch = self.z[0, j], self.z[1, j]
            qc = Zc[:, :, row]                                   # (3, paths)
            qch = Zch[:, :, row]
            Mj = M[:, 3 + j]
            r = (cf.R[2 + j] * u[2 + j] + lc[j][0] * zc + lc[j][1:] @ qc
                 + Xl[:, CH, 1 + 2 * j:3 + 2 * j] @ fs[j] + Mj[0] * zch + Mj[1:] @ qch)
            self.sup[2 + j] = np.maximum(self.sup[2 + j], np.abs(r))
            dc = (cf.a[0] * zc + cf.a[1:] @ qc + M[0, 0] * zch + M[1:, 0] @ qch
                  + cf.Q[2 + j] * xc)
            dch = ((cf.a[0] + M[0, 0]) * zch + (cf.a[1:] + M[1:, 0]) @ qch + cf.Q[2 + j] * xch)
            self.z[0, j] = zc - dc * dt + qc[1] * dW[:, 1] + qc[2] * dW[:, 2]
            self.z[1, j] = zch - dch * dt + qch[2] * dW[:, 2]

    def finish(self, Xl, u):
        pass


@dataclass(frozen=True)
class SmpReport:
    sup_mean: np.ndarray
    sup_max: np.ndarray

    def as_dict(self):
        return {f"player{j + 1}": float(self.sup_mean[j]) for j in range(4)}


def smp_residuals(eq: Equilibrium, paths: BrownianPaths) -> SmpReport:
    """Sup-over-time stationarity residuals, averaged and maximised over paths."""
    ob = _SmpObserver(eq, paths.n_paths)
    simulate_closed_loop(eq, paths, observers=[ob], costs=False)
    return SmpReport(ob.sup.mean(axis=1), ob.sup.max(axis=1))


def smp_order_study(solve, steps=(200, 400, 800), seed: int = 5, n_paths: int = 2000):
    """Residuals on nested grids driven by the same Brownian paths.

    ``solve(n_steps)`` must return an :class:`Equilibrium`.  Returns
    ``(residuals[len(steps), 4], orders[len(steps)-1, 4])``.
    """
    eqs = [solve(n) for n in steps]
    finest = eqs[-1]
    base = paths_for(finest, seed, n_paths)
    res = []
    for n, eq in zip(steps, eqs):
        p = coarsen(base, steps[-1] // n)
        res.append(smp_residuals(eq, p).sup_mean)
    res = np.array(res)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.array(steps[1:], float) / np.array(steps[:-1], float)
        orders = np.log(res[:-1] / res[1:]) / np.log(ratio)[:, None]
    return res, orders


def smp_order_ok(res: np.ndarray, orders: np.ndarray, min_order: float = 0.4,
                 floor: float = 1e-12) -> np.ndarray:
    """Per-player verdict of an order study.

    A player passes when every observed order is at least ``min_order`` or
    when the residual on the finest grid is already at round-off level (the
    orders are then ratios of round-off and carry no information).
    """
    with np.errstate(invalid="ignore"):
        decays = np.all(orders >= min_order, axis=0)
    return decays | (res[-1] <= floor)


# ------------------------------------------------------------------ deviations

@dataclass(frozen=True)
class Direction:
    """Perturbation ``v = sum_lev kappa_lev(t) . X_lev + v0(t)``.

    ``weights`` maps a level index to a function of the time array returning
    an ``(len(t), 5)`` array; ``offset`` returns ``(len(t),)``.
    """

    name: str
    weights: dict = field(default_factory=dict)
    offset: object = None

    def tables(self, t: np.ndarray):
        kappa = np.zeros((len(t), 4, 5))
        for lev, fn in self.weights.items():
            kappa[:, lev] = fn(t)
        v0 = np.zeros(len(t)) if self.offset is None else np.asarray(self.offset(t), float)
        return kappa, v0


def _unit(c, scale=lambda t: np.ones_like(t)):
    def fn(t):
        out = np.zeros((len(t), 5))
        out[:, c] = scale(t)
        return out
    return fn


def catalog(player: int, T: float) -> list:
    """Ten fixed directions measurable for ``player``."""
    own = OWN_LEVEL[player]
    bump = lambda t: np.sin(np.pi * t / T)                           # noqa: E731
    gauss = lambda t: np.exp(-((t - 0.5 * T) / (0.15 * T)) ** 2)     # noqa: E731
    return [
        Direction("constant", {}, lambda t: np.ones_like(t)),
        Direction("time-bump", {}, bump),
        Direction("ramp", {}, lambda t: t / T),
        Direction("x-own", {own: _unit(0)}),
        Direction("x-common", {CH: _unit(0)}),
        Direction("y3-own", {own: _unit(1)}),
        Direction("y4-common", {CH: _unit(4)}),
        Direction("x-own-oscillating", {own: _unit(0, lambda t: np.cos(2 * np.pi * t / T))}),
        Direction("x-own-minus-common", {own: _unit(0), CH: _unit(0, lambda t: -np.ones_like(t))}),
        Direction("x-own-bump", {own: _unit(0, gauss)}, lambda t: 0.5 * gauss(t)),
    ]


def check_measurable(player: int, direction: Direction):
    bad = [lev for lev in direction.weights if lev not in ALLOWED_LEVELS[player]]
    if bad:
        names = ", ".join(LEVEL_NAMES[b] for b in bad)
        raise MeasurabilityError(
            f"direction {direction.name!r} uses level(s) {names} not observed by player {player}")


class _FollowerDeviation:
    """First and second order cost changes for a follower perturbation."""

    def __init__(self, eq, player, kappa, v0, n):
        self.eq, self.j, self.kappa, self.v0 = eq, player - 1, kappa, v0
        self.dx = np.zeros(n)
        self.first = np.zeros(n)
        self.second = np.zeros(n)

    def step(self, k, t, Xl, u, dW):
        eq, j, dt = self.eq, self.j, self.eq.grid.dt
        cf = eq.model.at(t)
        v = np.einsum("lc,plc->p", self.kappa[k], Xl) + self.v0[k]
        x, dx = Xl[:, F, 0], self.dx
        self.first += (cf.Q[j] * x * dx + cf.R[j] * u[j] * v) * dt
        self.second += 0.5 * (cf.Q[j] * dx * dx + cf.R[j] * v * v) * dt
        coef = cf.b if j == 0 else cf.c
        inc = (cf.a[0] * dx + coef[0] * v) * dt
        for i in range(1, 4):
            inc = inc + (cf.a[i] * dx + coef[i] * v) * dW[:, i - 1]
        self.dx = dx + inc

    def finish(self, Xl, u):
        G = self.eq.model.G[self.j]
        self.first += G * Xl[:, F, 0] * self.dx
        self.second += 0.5 * G * self.dx * self.dx


class _LeaderDeviation:
    """Leader perturbation with the followers' best response.

    A leader perturbation ``v`` shifts ``u^`` of that leader by
    ``v^ = kappa_tot . X^v + v0`` with ``kappa_tot`` the sum of the C and CH
    weights.  The followers' ``Phi^`` then shifts by ``Pi X^v + pi`` where
    ``Pi``, ``pi`` solve linear backward equations on the grid, and their
    controls follow from the same feedback formula as in equilibrium.
    """

    def __init__(self, eq, player, kappa, v0, n):
        self.eq, self.j, self.kappa, self.v0 = eq, player - 1, kappa, v0
        self.li = 1 if player == 3 else 2
        self.dx = np.zeros(n)
        self.dxh = np.zeros(n)
        self.first = np.zeros(n)
        self.second = np.zeros(n)
        self._backward()

    def _backward(self):
        eq = self.eq
        n, dt = eq.grid.n_steps, eq.grid.dt
        ktot = self.kappa[:, C] + self.kappa[:, CH]
        self.ktot = ktot
        Pi = np.zeros((n + 1, 2, 5))
        pi = np.zeros((n + 1, 2))
        Db = np.zeros((n + 1, 4, 5, 5))
        for k in range(n + 1):
            Db[k] = level_operators(eq.D[k])[:, CH, CH]
        for k in range(n - 1, -1, -1):
            bs = eq.ftab.points[k].bsde
            f = bs.f1 if self.li == 1 else bs.f2
            Pn = Pi[k + 1]
            Pi[k] = Pn + dt * (Pn @ Db[k, 0] + bs.A[0] @ Pn + bs.A[3] @ Pn @ Db[k, 3]
                               + np.outer(f, ktot[k]))
            pi[k] = pi[k + 1] + dt * (bs.A[0] @ pi[k + 1] + f * self.v0[k])
        self.Pi, self.pi, self.Db = Pi, pi, Db

    def step(self, k, t, Xl, u, dW):
        eq, j, dt = self.eq, self.j, self.eq.grid.dt
        cf = eq.model.at(t)
        fg = eq.ftab.points[k].gains
        xch = Xl[:, CH]
        v = np.einsum("lc,plc->p", self.kappa[k], Xl) + self.v0[k]
        vh = xch @ self.ktot[k] + self.v0[k]
        dphi = xch @ self.Pi[k].T + self.pi[k]
        dzeta3 = xch @ (self.Pi[k] @ self.Db[k, 3]).T
        du = (-np.outer(fg.L[:, 0], self.dxh) - np.outer(fg.L[:, self.li], vh)
              + fg.rho @ dphi.T + fg.tau @ dzeta3.T)              # (2, paths)
        x, dx = Xl[:, F, 0], self.dx
        self.first += (cf.Q[j] * x * dx + cf.R[j] * u[j] * v) * dt
        self.second += 0.5 * (cf.Q[j] * dx * dx + cf.R[j] * v * v) * dt
        lead = cf.d if self.li == 1 else cf.e
        inc = (cf.a[0] * dx + cf.b[0] * du[0] + cf.c[0] * du[1] + lead[0] * v) * dt
        inch = (cf.a[0] * self.dxh + cf.b[0] * du[0] + cf.c[0] * du[1] + lead[0] * vh) * dt
        for i in range(1, 4):
            inc = inc + (cf.a[i] * dx + cf.b[i] * du[0] + cf.c[i] * du[1] + lead[i] * v) * dW[:, i - 1]
            if i in ALLOWED[H]:
                inch = inch + (cf.a[i] * self.dxh + cf.b[i] * du[0] + cf.c[i] * du[1]
                               + lead[i] * vh) * dW[:, i - 1]
        self.dx = dx + inc
        self.dxh = self.dxh + inch

    def finish(self, Xl, u):
        G = self.eq.model.G[self.j]
        self.first += G * Xl[:, F, 0] * self.dx
        self.second += 0.5 * G * self.dx * self.dx


@dataclass(frozen=True)
class DeviationReport:
    player: int
    direction: str
    epsilon: float
    deltaJ: float
    se: float
    passed: bool


@dataclass(frozen=True)
class DeviationFit:
    """Least-squares fit ``dJ(eps) = a eps^2 + b eps`` of one direction."""

    player: int
    direction: str
    a: float
    b: float
    se_b: float

    @property
    def void(self) -> bool:
        """True when the direction vanishes identically on the sampled paths."""
        return self.a == 0.0 and self.b == 0.0 and self.se_b == 0.0

    @property
    def curvature_ok(self) -> bool:
        return self.a > 0.0 or self.void


def nash_deviation_test(eq: Equilibrium, player: int, directions=None,
                        epsilons=(-0.5, -0.1, 0.1, 0.5), n_paths: int = 10000,
                        seed: int = 1):
    """Cost change of ``player`` for every (direction, epsilon) pair.

    The perturbed state is linear in ``epsilon``, so one pass per direction
    records the first and second order terms path by path; every epsilon is
    then evaluated on exactly the same noise.  Returns
    ``(list[DeviationReport], list[DeviationFit])``.
    """
    if player not in (1, 2, 3, 4):
        raise ValueError("player must be 1..4")
    directions = catalog(player, eq.model.T) if directions is None else directions
    for d in directions:
        check_measurable(player, d)
    paths = paths_for(eq, seed, n_paths)
    t = eq.grid.nodes
    cls = _FollowerDeviation if player <= 2 else _LeaderDeviation
    obs = []
    for d in directions:
        kappa, v0 = d.tables(t)
        obs.append(cls(eq, player, kappa, v0, n_paths))
    simulate_closed_loop(eq, paths, observers=obs, costs=False)
    reports, fits = [], []
    eps = np.asarray(epsilons, float)
    for d, ob in zip(directions, obs):
        means = []
        for e in eps:
            dj = e * ob.first + e * e * ob.second
            mean = float(dj.mean())
            se = float(dj.std(ddof=1) / np.sqrt(n_paths))
            means.append(mean)
            reports.append(DeviationReport(player, d.name, float(e), mean, se, mean >= -3 * se))
        A = np.column_stack([eps ** 2, eps])
        (a, b), *_ = np.linalg.lstsq(A, np.array(means), rcond=None)
        se_b = float(ob.first.std(ddof=1) / np.sqrt(n_paths))
        fits.append(DeviationFit(player, d.name, float(a), float(b), se_b))
    return reports, fits


# ------------------------------------------------------------------ lemma

def lemma_suite(model: ModelCoefficients, grid: TimeGrid) -> dict:
    """Symmetric-case identities of the follower Riccati pair."""
    sol = solve_follower_riccati(model, grid)
    if not sol.symmetric:
        return {"status": "skipped", "reason": "symmetric-case assumption does not hold"}
    return {
        "status": "ok",
        "sum_identity": float(np.max(np.abs(sol.Ptilde1 + sol.Ptilde2 - sol.Ptilde_sum))),
        "aux_identity_1": float(np.max(np.abs(sol.Ptilde1 - sol.aux1))),
        "aux_identity_2": float(np.max(np.abs(sol.Ptilde2 - sol.aux2))),
        "terminal": float(max(abs(sol.Ptilde1[-1] - model.G[0]), abs(sol.Ptilde2[-1] - model.G[1]))),
    }

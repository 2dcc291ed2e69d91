"""Brownian paths, Euler-Maruyama on the four information levels, costs.

The simulated state is ``X_lev`` for the levels F (``X``), H (``X^``), C
(``Xv``) and CH (``X^v``).  Level ``n`` evolves with the closed-loop
coefficients applied to the projected levels ``PROJ[n][m]`` and is driven
only by the Brownian components its information contains, so each level is
updated from exactly the data it is measurable with respect to.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decoupler import ALLOWED, TPROJ
from .equilibrium import Equilibrium

SOURCES = {0: (0, 1, 2, 3), 1: (1, 3), 2: (2, 3), 3: (3,)}


@dataclass(frozen=True)
class BrownianPaths:
    """Increments ``dW[p, k, i-1]`` of component ``i`` on step ``k`` of path ``p``."""

    dW: np.ndarray
    dt: float
    seed: int
    path_ids: np.ndarray
    component_seeds: tuple

    @property
    def n_paths(self) -> int:
        return self.dW.shape[0]

    @property
    def n_steps(self) -> int:
        return self.dW.shape[1]


def _stream(seed: int, component: int, path_id: int, n: int) -> np.ndarray:
    """Standard normals of one (seed, component, path) Philox stream."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, component], dtype=np.uint64)
    ctr = np.array([0, path_id, 0, 0], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(counter=ctr, key=key))
    return gen.standard_normal(n)


def generate_paths(seed: int, n_paths: int, n_steps: int, dt: float,
                   component_seeds: tuple | None = None, path_offset: int = 0) -> BrownianPaths:
    """Counter-based Brownian increments.

    Component ``i`` of path ``p`` comes from a Philox stream keyed by
    ``(component_seeds[i-1], i)`` with counter block ``p``, so each draw is a
    pure function of (seed, path id, step, component).  Passing a different
    seed for one component regenerates only that component.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    seeds = tuple(component_seeds) if component_seeds is not None else (seed, seed, seed)
    ids = np.arange(path_offset, path_offset + n_paths)
    dW = np.empty((n_paths, n_steps, 3))
    sq = np.sqrt(dt)
    for p, pid in enumerate(ids):
        for i in range(3):
            dW[p, :, i] = _stream(seeds[i], i + 1, int(pid), n_steps)
    dW *= sq
    return BrownianPaths(dW, dt, seed, ids, seeds)


def paths_for(eq: Equilibrium, seed: int, n_paths: int, **kw) -> BrownianPaths:
    return generate_paths(seed, n_paths, eq.grid.n_steps, eq.grid.dt, **kw)


def coarsen(paths: BrownianPaths, factor: int) -> BrownianPaths:
    """Sum consecutive increments so a finer path drives a coarser grid."""
    n, m, _ = paths.dW.shape
    if m % factor:
        raise ValueError("factor must divide the number of steps")
    dW = paths.dW.reshape(n, m // factor, factor, 3).sum(axis=2)
    return BrownianPaths(dW, paths.dt * factor, paths.seed, paths.path_ids, paths.component_seeds)


def level_operators(D: np.ndarray) -> np.ndarray:
    """``C[i, n, s]`` (5x5): coefficient of level ``s`` in the update of level ``n``."""
    return np.einsum("nms,imac->insac", TPROJ, D)


@dataclass
class SimulationBundle:
    """Result of one closed-loop run.

    ``X[p, k, lev]`` and ``u[j, p, k]`` are stored only when requested.
    ``J[j, p]`` are the per-path costs of players ``j+1``.
    """

    t: np.ndarray
    X: np.ndarray | None
    u: np.ndarray | None
    J: np.ndarray | None
    X_T: np.ndarray

    def cost_summary(self):
        n = self.J.shape[1]
        mean = self.J.mean(axis=1)
        se = self.J.std(axis=1, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(4)
        return mean, se


def controls(G: np.ndarray, Xl: np.ndarray) -> np.ndarray:
    """``u[j, p] = sum_lev G[j, lev] . X[p, lev]``."""
    return np.einsum("jlc,plc->jp", G, Xl)


def simulate_closed_loop(eq: Equilibrium, paths: BrownianPaths, observers=(),
                         store: bool = False, costs: bool = True, X0=None) -> SimulationBundle:
    """Euler-Maruyama run of the closed loop on ``paths``.

    Observers get ``step(k, t, Xl, u, dW)`` before every update and
    ``finish(Xl, u)`` at the horizon, with ``Xl`` of shape (paths, 4, 5).
    """
    model, grid = eq.model, eq.grid
    if paths.n_steps != grid.n_steps:
        raise ValueError("paths and grid disagree on the number of steps")
    n, dt, nodes = paths.n_paths, grid.dt, grid.nodes
    X0 = eq.X0 if X0 is None else np.asarray(X0, float)
    Xl = np.broadcast_to(X0, (n, 4, 5)).copy()
    Gl = eq.gains.by_level()
    Xs = np.empty((n, grid.n_steps + 1, 4, 5)) if store else None
    us = np.empty((4, n, grid.n_steps + 1)) if store else None
    run = np.empty((4, n, grid.n_steps)) if costs else None
    for k in range(grid.n_steps):
        t = nodes[k]
        u = controls(Gl[k], Xl)
        if store:
            Xs[:, k], us[:, :, k] = Xl, u
        if costs:
            cf = model.at(t)
            x = Xl[:, 0, 0]
            run[:, :, k] = 0.5 * (cf.Q[:, None] * x * x + cf.R[:, None] * u * u)
        dW = paths.dW[:, k]
        for ob in observers:
            ob.step(k, t, Xl, u, dW)
        Cop = level_operators(eq.D[k])
        new = np.empty_like(Xl)
        for lev in range(4):
            src = SOURCES[lev]
            flat = Xl[:, src].reshape(n, -1)
            op = Cop[0, lev, src].transpose(0, 2, 1).reshape(-1, 5)
            inc = (flat @ op) * dt
            for i in ALLOWED[lev]:
                op = Cop[i, lev, src].transpose(0, 2, 1).reshape(-1, 5)
                inc = inc + (flat @ op) * dW[:, i - 1, None]
            new[:, lev] = Xl[:, lev] + inc
        Xl = new
        if not np.all(np.isfinite(Xl)):
            raise FloatingPointError(f"nonfinite state at step {k + 1}")
    u = controls(Gl[-1], Xl)
    if store:
        Xs[:, -1], us[:, :, -1] = Xl, u
    for ob in observers:
        ob.finish(Xl, u)
    J = None
    if costs:
        x = Xl[:, 0, 0]
        J = run.sum(axis=2) * dt + 0.5 * np.asarray(model.G)[:, None] * x * x
    return SimulationBundle(nodes.copy(), Xs, us, J, Xl)


def estimate_costs(eq: Equilibrium, seed: int, n_paths: int):
    """Monte Carlo means and standard errors of ``J1..J4``."""
    sim = simulate_closed_loop(eq, paths_for(eq, seed, n_paths))
    return sim.cost_summary()


def trajectory_csv(sim: SimulationBundle, path: int = 0) -> str:
    names = ["x", "y31", "y32", "y41", "y42"]
    lev = ["", "_hat", "_check", "_checkhat"]
    head = ["t"] + [f"{n}{s}" for s in lev for n in names] + ["u1", "u2", "u3", "u4"]
    lines = [",".join(head)]
    for k, t in enumerate(sim.t):
        row = [t, *sim.X[path, k].ravel(), *sim.u[:, path, k]]
        lines.append(",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"

"""Deterministic coefficients, time grid and configuration of the game.

The state equation is scalar,

    dx = (a0 x + b0 u1 + c0 u2 + d0 u3 + e0 u4) dt
         + sum_{i=1..3} (ai x + bi u1 + ci u2 + di u3 + ei u4) dWi,

and player ``j`` (1, 2 followers; 3, 4 leaders) minimises

    J_j = 1/2 E[ int_0^T (Q_j x^2 + R_j u_j^2) dt + G_j x(T)^2 ].

Every time-dependent symbol is a :class:`CoefficientFunction`.  Player
indices are stored zero based, so ``model.Q[0]`` is ``Q_1``.
"""

from __future__ import annotations

import bisect
import sys
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

KINDS = ("constant", "piecewise", "grid")
STATE_NAMES = ("a", "b", "c", "d", "e")

# Brownian components seen by each side.  W3 is the shared channel.
FOLLOWER_SIGMA = frozenset({1, 3})
LEADER_SIGMA = frozenset({2, 3})


@dataclass(frozen=True)
class InformationStructure:
    follower_sigma: frozenset = FOLLOWER_SIGMA
    leader_sigma: frozenset = LEADER_SIGMA

    @property
    def overlap(self) -> frozenset:
        return self.follower_sigma & self.leader_sigma


@dataclass(frozen=True)
class CoefficientFunction:
    """A bounded deterministic function on ``[0, horizon]``.

    ``constant`` stores one value.  ``piecewise`` stores left endpoints in
    ``breakpoints`` (first one 0) and uses left-closed intervals.  ``grid``
    stores sample times in ``breakpoints`` and interpolates linearly.
    """

    kind: str
    values: tuple
    breakpoints: tuple = ()
    horizon: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown coefficient kind {self.kind!r}")
        vals = np.asarray(self.values, dtype=float)
        if vals.size == 0 or not np.all(np.isfinite(vals)):
            raise ConfigError("coefficient values must be finite and nonempty")
        if self.kind == "constant":
            if vals.size != 1:
                raise ConfigError("constant coefficient takes exactly one value")
            return
        bps = np.asarray(self.breakpoints, dtype=float)
        if bps.size != vals.size:
            raise ConfigError("breakpoints and values must have equal length")
        if np.any(np.diff(bps) <= 0):
            raise ConfigError("breakpoints must be strictly increasing")
        if bps[0] != 0.0:
            raise ConfigError("first breakpoint must be 0")
        if self.kind == "grid" and bps[-1] != self.horizon:
            raise ConfigError("grid samples must cover [0, T]")
        if bps[-1] > self.horizon:
            raise ConfigError("breakpoints must lie in [0, T]")

    @classmethod
    def constant(cls, value: float, horizon: float = 1.0) -> "CoefficientFunction":
        return cls("constant", (float(value),), (), float(horizon))

    def __call__(self, t):
        return eval_coefficient(self, t)

    def to_config(self):
        if self.kind == "constant":
            return float(self.values[0])
        key = "breakpoints" if self.kind == "piecewise" else "times"
        return {
            "kind": self.kind,
            key: [float(v) for v in self.breakpoints],
            "values": [float(v) for v in self.values],
        }


def _eval_scalar(f: CoefficientFunction, t: float) -> float:
    if not 0.0 <= t <= f.horizon:
        raise ValueError(f"time {t!r} outside [0, {f.horizon}]")
    if f.kind == "constant":
        return float(f.values[0])
    bps, vals = f.breakpoints, f.values
    i = bisect.bisect_right(bps, t) - 1
    if f.kind == "piecewise":
        return float(vals[i])
    i = min(i, len(bps) - 2)
    if i < 0:
        return float(vals[0])
    w = (t - bps[i]) / (bps[i + 1] - bps[i])
    return float(vals[i] + w * (vals[i + 1] - vals[i]))


def eval_coefficient(f: CoefficientFunction, t):
    """Evaluate ``f`` at scalar or array time ``t`` in ``[0, T]``."""
    if isinstance(t, (float, int)):
        return _eval_scalar(f, float(t))
    ta = np.asarray(t, dtype=float)
    if np.any(ta < 0.0) or np.any(ta > f.horizon) or np.any(np.isnan(ta)):
        raise ValueError(f"time {t!r} outside [0, {f.horizon}]")
    if f.kind == "constant":
        out = np.full(ta.shape, f.values[0])
    elif f.kind == "piecewise":
        idx = np.searchsorted(np.asarray(f.breakpoints), ta, side="right") - 1
        out = np.asarray(f.values, dtype=float)[idx]
    else:
        out = np.interp(ta, f.breakpoints, f.values)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = k dt`` on ``[0, T]``."""

    T: float
    n_steps: int

    def __post_init__(self):
        if self.T <= 0:
            raise ConfigError("horizon must be positive")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ConfigError("steps must be a positive integer")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_steps + 1)


class Coeffs(NamedTuple):
    """All coefficients frozen at one time.  Arrays are indexed 0..3."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    e: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    G: np.ndarray


@dataclass(frozen=True)
class AssumptionFlags:
    A1: bool
    A3: bool
    A4: bool
    messages: tuple = ()


@dataclass(frozen=True)
class ModelCoefficients:
    """Coefficient functions of the game plus ``x0`` and the horizon ``T``."""

    a: tuple
    b: tuple
    c: tuple
    d: tuple
    e: tuple
    Q: tuple
    R: tuple
    G: tuple
    x0: float
    T: float
    info: InformationStructure = field(default_factory=InformationStructure)

    def __post_init__(self):
        if not self.T > 0:
            raise ConfigError("horizon must be positive")
        for name in STATE_NAMES + ("Q", "R"):
            fs = getattr(self, name)
            if len(fs) != 4:
                raise ConfigError(f"{name} needs four entries")
        if len(self.G) != 4:
            raise ConfigError("G needs four entries")

    @classmethod
    def from_constants(
        cls,
        a=(0, 0, 0, 0),
        b=(0, 0, 0, 0),
        c=(0, 0, 0, 0),
        d=(0, 0, 0, 0),
        e=(0, 0, 0, 0),
        Q=(0, 0, 0, 0),
        R=(1, 1, 1, 1),
        G=(0, 0, 0, 0),
        x0=1.0,
        T=1.0,
    ) -> "ModelCoefficients":
        def wrap(vals):
            return tuple(CoefficientFunction.constant(v, T) for v in vals)

        return cls(
            a=wrap(a), b=wrap(b), c=wrap(c), d=wrap(d), e=wrap(e),
            Q=wrap(Q), R=wrap(R), G=tuple(float(g) for g in G),
            x0=float(x0), T=float(T),
        )

    def replace(self, **changes) -> "ModelCoefficients":
        """Return a copy with some fields swapped.  Plain numbers are wrapped."""
        kw = {n: getattr(self, n) for n in STATE_NAMES + ("Q", "R", "G", "x0", "T")}
        for name, val in changes.items():
            if name in STATE_NAMES + ("Q", "R"):
                val = tuple(
                    v if isinstance(v, CoefficientFunction)
                    else CoefficientFunction.constant(v, self.T)
                    for v in val
                )
            elif name == "G":
                val = tuple(float(g) for g in val)
            kw[name] = val
        return ModelCoefficients(**kw)

    def at(self, t: float) -> Coeffs:
        t = float(t)
        if not 0.0 <= t <= self.T:
            raise ValueError(f"time {t!r} outside [0, {self.T}]")

        def ev(fs):
            return np.array([f.values[0] if f.kind == "constant" else eval_coefficient(f, t)
                             for f in fs])

        return Coeffs(
            ev(self.a), ev(self.b), ev(self.c), ev(self.d), ev(self.e),
            ev(self.Q), ev(self.R), np.asarray(self.G, dtype=float),
        )

    def sample(self, grid: TimeGrid) -> dict:
        """Every coefficient sampled on the grid nodes, keyed ``a0``, ``Q3`` ..."""
        t = grid.nodes
        out = {}
        for name in STATE_NAMES:
            for i, f in enumerate(getattr(self, name)):
                out[f"{name}{i}"] = np.broadcast_to(eval_coefficient(f, t), t.shape).copy()
        for name in ("Q", "R"):
            for j, f in enumerate(getattr(self, name)):
                out[f"{name}{j + 1}"] = np.broadcast_to(eval_coefficient(f, t), t.shape).copy()
        return out

    def flags(self, grid: TimeGrid | None = None) -> AssumptionFlags:
        return assumption_flags(self, grid or TimeGrid(self.T, 200))


def assumption_flags(model: ModelCoefficients, grid: TimeGrid) -> AssumptionFlags:
    """Check the sign and symmetry assumptions on the grid nodes."""
    s = model.sample(grid)
    msgs = []
    a1 = True
    for j in (1, 2):
        for name in ("Q", "R"):
            if np.any(s[f"{name}{j}"] < 0):
                a1 = False
                msgs.append(f"Assumption A1 violated: {name}{j}(t) < 0")
        if model.G[j - 1] < 0:
            a1 = False
            msgs.append(f"Assumption A1 violated: G{j} < 0")
    a4 = True
    for j in (3, 4):
        if np.any(s[f"Q{j}"] < 0):
            a4 = False
            msgs.append(f"Assumption A4 violated: Q{j}(t) < 0")
        if np.any(s[f"R{j}"] <= 0):
            a4 = False
            msgs.append(f"Assumption A4 violated: R{j}(t) <= 0")
        if model.G[j - 1] < 0:
            a4 = False
            msgs.append(f"Assumption A4 violated: G{j} < 0")
    a3 = bool(np.array_equal(s["R1"], s["R2"])) and all(
        np.array_equal(s[f"b{i}"], s[f"c{i}"]) for i in range(4)
    )
    if a3:
        msgs.append("Assumption A3 holds")
    return AssumptionFlags(A1=a1, A3=a3, A4=a4, messages=tuple(msgs))


# ---------------------------------------------------------------- config I/O

def _parse_coefficient(raw, T: float, where: str) -> CoefficientFunction:
    if isinstance(raw, bool):
        raise ConfigError(f"{where}: expected a number or table")
    if isinstance(raw, (int, float)):
        return CoefficientFunction.constant(raw, T)
    if isinstance(raw, dict):
        kind = raw.get("kind")
        if kind == "constant":
            return CoefficientFunction.constant(raw["value"], T)
        if kind in ("piecewise", "grid"):
            key = "breakpoints" if kind == "piecewise" else "times"
            if key not in raw or "values" not in raw:
                raise ConfigError(f"{where}: {kind} needs '{key}' and 'values'")
            try:
                return CoefficientFunction(
                    kind, tuple(float(v) for v in raw["values"]),
                    tuple(float(v) for v in raw[key]), T,
                )
            except ConfigError as exc:
                raise ConfigError(f"{where}: {exc}") from None
        raise ConfigError(f"{where}: unknown kind {kind!r}")
    raise ConfigError(f"{where}: expected a number or table")


def load_model(config_text: str, strict: bool = True):
    """Parse TOML text into ``(ModelCoefficients, TimeGrid)``.

    Top-level keys ``horizon``, ``x0`` and ``steps`` and the four tables
    ``[cost.playerK]`` with ``Q``, ``R``, ``G`` are required.  Tables
    ``[a]`` .. ``[e]`` are optional; missing keys ``i0`` .. ``i3`` mean 0.

    With ``strict`` set, negative weights raise :class:`ConfigError` naming
    the assumption.  A nonpositive leader ``R`` is only flagged, since the
    followers' stage does not need it.
    """
    try:
        raw = tomllib.loads(config_text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"parse error: {exc}") from None
    for key in ("horizon", "x0", "steps"):
        if key not in raw:
            raise ConfigError(f"missing required key '{key}'")
    T = raw["horizon"]
    if not isinstance(T, (int, float)) or isinstance(T, bool) or not T > 0:
        raise ConfigError("'horizon' must be a positive number")
    T = float(T)
    steps = raw["steps"]
    if not isinstance(steps, int) or isinstance(steps, bool) or steps < 1:
        raise ConfigError("'steps' must be a positive integer")
    fields = {}
    for name in STATE_NAMES:
        table = raw.get(name, {})
        if not isinstance(table, dict):
            raise ConfigError(f"[{name}] must be a table")
        unknown = set(table) - {f"i{i}" for i in range(4)}
        if unknown:
            raise ConfigError(f"[{name}] has unknown keys {sorted(unknown)}")
        fields[name] = tuple(
            _parse_coefficient(table.get(f"i{i}", 0.0), T, f"{name}.i{i}") for i in range(4)
        )
    cost = raw.get("cost")
    if not isinstance(cost, dict):
        raise ConfigError("missing required table [cost.player1]")
    Qs, Rs, Gs = [], [], []
    for j in range(1, 5):
        tab = cost.get(f"player{j}")
        if not isinstance(tab, dict):
            raise ConfigError(f"missing required table [cost.player{j}]")
        for key in ("Q", "R", "G"):
            if key not in tab:
                raise ConfigError(f"missing required key 'cost.player{j}.{key}'")
        Qs.append(_parse_coefficient(tab["Q"], T, f"cost.player{j}.Q"))
        Rs.append(_parse_coefficient(tab["R"], T, f"cost.player{j}.R"))
        g = tab["G"]
        if not isinstance(g, (int, float)) or isinstance(g, bool):
            raise ConfigError(f"cost.player{j}.G must be a number")
        Gs.append(float(g))
    x0 = raw["x0"]
    if not isinstance(x0, (int, float)) or isinstance(x0, bool):
        raise ConfigError("'x0' must be a number")
    model = ModelCoefficients(
        Q=tuple(Qs), R=tuple(Rs), G=tuple(Gs), x0=float(x0), T=T, **fields
    )
    grid = TimeGrid(T, steps)
    if strict:
        flags = assumption_flags(model, grid)
        hard = [m for m in flags.messages if "violated" in m and "R3(t) <= 0" not in m
                and "R4(t) <= 0" not in m]
        if hard:
            raise ConfigError(hard[0])
    return model, grid


def dump_model(model: ModelCoefficients, grid: TimeGrid) -> str:
    """Serialise to TOML text that :func:`load_model` reads back exactly."""
    import tomlkit

    doc = tomlkit.document()
    doc["horizon"] = float(model.T)
    doc["x0"] = float(model.x0)
    doc["steps"] = int(grid.n_steps)
    for name in STATE_NAMES:
        tab = tomlkit.table()
        for i, f in enumerate(getattr(model, name)):
            cfg = f.to_config()
            tab[f"i{i}"] = tomlkit.inline_table() if isinstance(cfg, dict) else cfg
            if isinstance(cfg, dict):
                tab[f"i{i}"].update(cfg)
        doc[name] = tab
    cost = tomlkit.table(is_super_table=True)
    for j in range(4):
        tab = tomlkit.table()
        for key, f in (("Q", model.Q[j]), ("R", model.R[j])):
            cfg = f.to_config()
            if isinstance(cfg, dict):
                it = tomlkit.inline_table()
                it.update(cfg)
                cfg = it
            tab[key] = cfg
        tab["G"] = float(model.G[j])
        cost[f"player{j + 1}"] = tab
    doc["cost"] = cost
    return tomlkit.dumps(doc)


def coefficients_csv(model: ModelCoefficients, grid: TimeGrid) -> str:
    """Long-format CSV with columns ``t,name,value``."""
    lines = ["t,name,value"]
    samples = model.sample(grid)
    for name, vals in samples.items():
        for t, v in zip(grid.nodes, vals):
            lines.append(f"{float(t)!r},{name},{float(v)!r}")
    return "\n".join(lines) + "\n"

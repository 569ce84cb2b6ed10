"""Time integration of the Galerkin mode system.

Each mode obeys u_k'' + u_k' + lambda_k u_k = (p(t, u), e_k).  The engine
advances many independent rows (ensemble members, hull phases, eps values)
at once, which keeps the per-step cost in a few matrix products.  Two
schemes are offered: classical RK4, and an exponential midpoint rule that
propagates the linear 2x2 block of every mode exactly.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import BlowUpError, ConfigurationError, DomainError, EvaluationError, ShapeError
from .spectral import Basis, PhaseState, SpectralField, energy_norms
from .symbols import Symbol

METHODS = ("rk4", "exp_mode")
CHUNK_ROWS = 256
_WORKERS = 1


def set_workers(n: int) -> None:
    """Number of threads used for independent row chunks (results do not depend on it)."""
    global _WORKERS
    if int(n) < 1:
        raise ConfigurationError("thread count must be positive", key="threads")
    _WORKERS = int(n)


def parallel_map(fn, items):
    items = list(items)
    if _WORKERS == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=_WORKERS) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 0.005
    method: str = "rk4"
    nl_quad_points: int | None = None
    record_every: int = 1
    blowup_ceiling: float = 1e6

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigurationError(f"dt must be positive, got {self.dt}", key="dt")
        if self.method not in METHODS:
            raise ConfigurationError(f"method must be one of {METHODS}, got {self.method!r}", key="method")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise ConfigurationError("record_every must be a positive integer", key="record_every")
        if not self.blowup_ceiling > 0:
            raise ConfigurationError("blowup_ceiling must be positive", key="blowup_ceiling")
        if self.nl_quad_points is not None and self.nl_quad_points < 1:
            raise ConfigurationError("nl_quad_points must be positive", key="nl_quad_points")

    @property
    def order(self) -> int:
        return 4 if self.method == "rk4" else 2

    @property
    def tolerance(self) -> float:
        """Nominal global error scale dt^order used for set tolerances."""
        return self.dt**self.order


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Recorded solution on a uniform time grid plus the exact final state."""

    times: np.ndarray
    U: np.ndarray
    V: np.ndarray
    basis: Basis
    symbol: Symbol | None
    config: SolverConfig
    final_time: float
    final_U: np.ndarray
    final_V: np.ndarray
    cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for name in ("times", "U", "V", "final_U", "final_V"):
            getattr(self, name).setflags(write=False)
        if self.U.shape != (len(self.times), self.basis.N) or self.V.shape != self.U.shape:
            raise ShapeError("trajectory arrays do not match the time grid and basis")

    def __len__(self):
        return len(self.times)

    @property
    def record_dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def state(self, i: int) -> PhaseState:
        return PhaseState.from_coeffs(self.basis, self.U[i], self.V[i])

    @property
    def states(self) -> list[PhaseState]:
        return [self.state(i) for i in range(len(self.times))]

    @property
    def initial_state(self) -> PhaseState:
        return self.state(0)

    @property
    def final_state(self) -> PhaseState:
        return PhaseState.from_coeffs(self.basis, self.final_U, self.final_V)

    def energy_norms(self, s: float = 0.0) -> np.ndarray:
        key = ("E", s)
        if key not in self.cache:
            self.cache[key] = energy_norms(self.basis.lambdas, self.U, self.V, s)
        return self.cache[key]

    def u_values(self) -> np.ndarray:
        """Grid samples of u at every recorded time, shape (n_times, Q)."""
        if "u_values" not in self.cache:
            self.cache["u_values"] = self.U @ self.basis.modes
        return self.cache["u_values"]

    def window(self, t0: float, t1: float) -> slice:
        """Index slice of the recorded times within [t0, t1]."""
        tol = 1e-9 * max(1.0, abs(t1))
        if t0 < self.times[0] - tol or t1 > self.times[-1] + tol or t1 < t0:
            raise DomainError(f"window [{t0}, {t1}] outside [{self.times[0]}, {self.times[-1]}]")
        lo = int(np.searchsorted(self.times, t0 - tol))
        hi = int(np.searchsorted(self.times, t1 + tol))
        return slice(lo, hi)


# -- exact linear propagator --------------------------------------------------


def _cs(lam: np.ndarray, h: float):
    """cos-like and sin(omega h)/omega-like factors for omega^2 = lambda - 1/4."""
    w2 = lam - 0.25
    c = np.empty_like(lam)
    s = np.empty_like(lam)
    pos, neg, zero = w2 > 0, w2 < 0, w2 == 0
    w = np.sqrt(np.abs(w2))
    c[pos], s[pos] = np.cos(w[pos] * h), np.sin(w[pos] * h) / w[pos]
    c[neg], s[neg] = np.cosh(w[neg] * h), np.sinh(w[neg] * h) / w[neg]
    c[zero], s[zero] = 1.0, h
    return c, s


def propagator(lam, h: float) -> np.ndarray:
    """exp(h A) for A = [[0, 1], [-lambda, -1]] per mode, shape (N, 2, 2)."""
    lam = np.asarray(lam, dtype=float)
    c, s = _cs(lam, h)
    d = math.exp(-0.5 * h)
    E = np.empty(lam.shape + (2, 2))
    E[..., 0, 0] = d * (c + 0.5 * s)
    E[..., 0, 1] = d * s
    E[..., 1, 0] = -d * lam * s
    E[..., 1, 1] = d * (c - 0.5 * s)
    return E


def forcing_response(lam, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Response at time h to a unit constant force from zero data: A^-1 (exp(hA) - I) (0, 1)."""
    lam = np.asarray(lam, dtype=float)
    E = propagator(lam, h)
    ru = (1.0 - E[..., 0, 1] - E[..., 1, 1]) / lam
    rv = E[..., 0, 1]
    return ru, rv


def propagate_free(lam, U, V, h: float):
    """Exact free evolution of coefficient arrays (..., N) over time h."""
    E = propagator(lam, h)
    return E[:, 0, 0] * U + E[:, 0, 1] * V, E[:, 1, 0] * U + E[:, 1, 1] * V


# -- batched engine -----------------------------------------------------------


class _Nonlinearity:
    """Per-row evaluation of P_N p_r(t, u_r) for rows sharing f0 and b."""

    def __init__(self, symbols: Sequence[Symbol | None], basis: Basis, R: int):
        self.basis = basis
        if len(symbols) == 1 and R > 1:
            symbols = list(symbols) * R
        if len(symbols) != R:
            raise ShapeError(f"{len(symbols)} symbols for {R} rows")
        active = [s for s in symbols if s is not None]
        self.active = bool(active)
        if not active:
            return
        if len(active) != R:
            raise ConfigurationError("rows must either all carry a symbol or none")
        ref = active[0]
        for s in active[1:]:
            if s.f0 != ref.f0 or (s.eps and ref.eps and s.b != ref.b):
                raise ConfigurationError("batched rows must share f0 and b")
        self.f0 = ref.f0
        perturbed = [s for s in active if s.eps]
        self.b = perturbed[0].b if perturbed else None
        self.eps = np.array([s.eps for s in active])
        self.phase = np.array([s.phase_value for s in active])
        kinds = np.array([s.a.kind for s in active])
        self.groups = [(k, kinds == k) for k in sorted(set(kinds.tolist())) if self.b is not None]
        self.temporal = {s.a.kind: s.a for s in active}
        self.autonomous = self.b is None

    def coefficient(self, t: float) -> np.ndarray:
        c = np.zeros(self.eps.shape)
        for kind, mask in self.groups:
            c[mask] = self.eps[mask] * self.temporal[kind](t + self.phase[mask])
        return c

    def __call__(self, t: float, U: np.ndarray) -> np.ndarray:
        u = U @ self.basis.modes
        val = self.f0(u)
        if not self.autonomous:
            val = val + self.coefficient(t)[:, None] * self.b(u)
        if not np.all(np.isfinite(val)):
            bad = np.argwhere(~np.isfinite(val))[0]
            x = self.basis.points[bad[-1]]
            raise EvaluationError("non-finite nonlinearity sample", t=float(t), x=x.tolist())
        return val @ self.basis.weighted_modes


def _nl_basis(basis: Basis, cfg: SolverConfig) -> Basis:
    if cfg.nl_quad_points is None:
        return basis
    from .spectral import Domain, build_basis

    d = basis.domain
    return build_basis(Domain(d.dim, d.lengths, (cfg.nl_quad_points,) * d.dim), basis.N)


def integrate_rows(
    U0,
    V0,
    t0: float,
    t1: float,
    symbols: Sequence[Symbol | None],
    basis: Basis,
    cfg: SolverConfig,
    forcing: Callable[[float], np.ndarray] | None = None,
    offset: Callable[[float], np.ndarray] | None = None,
    backward: bool = False,
):
    """Advance R rows of the mode system from t0 to t1.

    ``forcing(t)`` adds coefficients (N,) or (R, N) to the acceleration;
    ``offset(t)`` shifts the u-argument of the nonlinearity, which is how the
    remainder of a linear/nonlinear splitting is driven.  With ``backward``
    the system is run in reverse time when t1 < t0 (the mode ODE is
    reversible, though the damping then amplifies).  Returns
    (times, U_rec, V_rec, U_final, V_final) with recorded arrays of shape
    (n_rec, R, N).
    """
    U = np.array(U0, dtype=float, ndmin=2)
    V = np.array(V0, dtype=float, ndmin=2)
    if U.shape != V.shape or U.shape[1] != basis.N:
        raise ShapeError(f"initial arrays {U.shape}, {V.shape} do not match N={basis.N}")
    span = float(t1) - float(t0)
    if span < 0 and not backward:
        raise DomainError("t1 must not precede t0")
    R = U.shape[0]
    lam = basis.lambdas
    nl = _Nonlinearity(list(symbols), _nl_basis(basis, cfg), R)
    n_steps = int(math.ceil(abs(span) / cfg.dt - 1e-9)) if span != 0 else 0
    h = span / n_steps if n_steps else 0.0
    stride = cfg.record_every
    ceiling2 = cfg.blowup_ceiling**2

    def accel(t, Uc, Vc):
        a = -Vc - lam * Uc
        if nl.active:
            arg = Uc if offset is None else Uc + offset(t)
            a = a + nl(t, arg)
        if forcing is not None:
            a = a + forcing(t)
        return a

    if cfg.method == "exp_mode" and n_steps:
        E = propagator(lam, h)
        Eh = propagator(lam, 0.5 * h)
        ru, rv = forcing_response(lam, h)
        ruh, rvh = forcing_response(lam, 0.5 * h)

        def forced(t, Uc, Vc):
            return accel(t, Uc, Vc) + Vc + lam * Uc

    n_rec = n_steps // stride + 1
    times = t0 + h * stride * np.arange(n_rec)
    U_rec = np.empty((n_rec, R, basis.N))
    V_rec = np.empty((n_rec, R, basis.N))
    U_rec[0], V_rec[0] = U, V

    for n in range(n_steps):
        t = t0 + n * h
        if cfg.method == "rk4":
            k1u, k1v = V, accel(t, U, V)
            u2, v2 = U + 0.5 * h * k1u, V + 0.5 * h * k1v
            k2u, k2v = v2, accel(t + 0.5 * h, u2, v2)
            u3, v3 = U + 0.5 * h * k2u, V + 0.5 * h * k2v
            k3u, k3v = v3, accel(t + 0.5 * h, u3, v3)
            u4, v4 = U + h * k3u, V + h * k3v
            k4u, k4v = v4, accel(t + h, u4, v4)
            U = U + (h / 6.0) * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
            V = V + (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        else:
            g = forced(t, U, V)
            uh = Eh[:, 0, 0] * U + Eh[:, 0, 1] * V + ruh * g
            vh = Eh[:, 1, 0] * U + Eh[:, 1, 1] * V + rvh * g
            g = forced(t + 0.5 * h, uh, vh)
            U, V = E[:, 0, 0] * U + E[:, 0, 1] * V + ru * g, E[:, 1, 0] * U + E[:, 1, 1] * V + rv * g
        e2 = np.sum(lam * U * U, axis=1) + np.sum(V * V, axis=1)
        worst = float(np.max(e2)) if R else 0.0
        if not worst <= ceiling2:
            raise BlowUpError(t + h, math.sqrt(worst) if math.isfinite(worst) else math.inf, cfg.blowup_ceiling)
        if (n + 1) % stride == 0:
            U_rec[(n + 1) // stride] = U
            V_rec[(n + 1) // stride] = V
    return times, U_rec, V_rec, U, V


def _initial_arrays(initial: PhaseState | Sequence[PhaseState]):
    states = [initial] if isinstance(initial, PhaseState) else list(initial)
    basis = states[0].basis
    for s in states:
        if s.basis != basis:
            raise ShapeError("initial states live in different bases")
    return basis, np.array([s.u.coeffs for s in states]), np.array([s.ut.coeffs for s in states])


def _trajectories(times, U_rec, V_rec, Uf, Vf, basis, symbols, cfg, t1):
    out = []
    for r in range(U_rec.shape[1]):
        out.append(
            Trajectory(
                times=times.copy(),
                U=np.ascontiguousarray(U_rec[:, r]),
                V=np.ascontiguousarray(V_rec[:, r]),
                basis=basis,
                symbol=symbols[r] if symbols is not None else None,
                config=cfg,
                final_time=float(t1),
                final_U=Uf[r].copy(),
                final_V=Vf[r].copy(),
            )
        )
    return out


# -- public operations --------------------------------------------------------


def rhs(state: PhaseState, t: float, p: Symbol, basis: Basis | None = None) -> PhaseState:
    """Time derivative (u_t, -u_t - lambda u + P_N p(t, u)) of a Galerkin state."""
    basis = state.basis if basis is None else basis
    if basis != state.basis:
        raise ShapeError("state and basis differ")
    U = state.u.coeffs[None, :]
    V = state.ut.coeffs[None, :]
    a = -V - basis.lambdas * U + _Nonlinearity([p], basis, 1)(t, U)
    return PhaseState.from_coeffs(basis, V[0], a[0])


def integrate(initial: PhaseState, t0: float, t1: float, p: Symbol, cfg: SolverConfig) -> Trajectory:
    """Solve the Galerkin system driven by p on [t0, t1]."""
    if not t1 > t0:
        raise DomainError("t1 must exceed t0")
    basis, U0, V0 = _initial_arrays(initial)
    res = integrate_rows(U0, V0, t0, t1, [p], basis, cfg)
    return _trajectories(*res, basis, [p], cfg, t1)[0]


def integrate_ensemble(
    initials: Sequence[PhaseState],
    t0: float,
    t1: float,
    symbols: Sequence[Symbol],
    cfg: SolverConfig,
) -> list[Trajectory]:
    """Integrate every (initial state, symbol) pair in one batched run.

    ``symbols`` has one entry per initial state, or a single shared symbol.
    Rows whose symbols differ in f0 or b are split into separate batches.
    """
    basis, U0, V0 = _initial_arrays(initials)
    R = U0.shape[0]
    syms = list(symbols) * R if len(symbols) == 1 else list(symbols)
    if len(syms) != R:
        raise ShapeError(f"{len(syms)} symbols for {R} initial states")
    groups: dict = {}
    for r, s in enumerate(syms):
        key = next((k for k in groups if k.f0 == s.f0 and (k.eps == 0 or s.eps == 0 or k.b == s.b)), None)
        if key is None:
            groups[s] = [r]
        else:
            groups[key].append(r)
    out: list[Trajectory | None] = [None] * R
    chunks = [rows[i : i + CHUNK_ROWS] for rows in groups.values() for i in range(0, len(rows), CHUNK_ROWS)]

    def run(rows):
        idx = np.array(rows)
        res = integrate_rows(U0[idx], V0[idx], t0, t1, [syms[r] for r in rows], basis, cfg)
        return _trajectories(*res, basis, [syms[r] for r in rows], cfg, t1)

    for rows, trs in zip(chunks, parallel_map(run, chunks)):
        for r, tr in zip(rows, trs):
            out[r] = tr
    return out


def _forcing_fn(forcing, basis: Basis):
    if forcing is None:
        return None
    if callable(forcing):
        def g(t):
            val = forcing(t)
            val = val.coeffs if isinstance(val, SpectralField) else np.asarray(val, dtype=float)
            if not np.all(np.isfinite(val)):
                raise EvaluationError("non-finite forcing", t=float(t))
            return val
        return g
    const = forcing.coeffs if isinstance(forcing, SpectralField) else np.asarray(forcing, dtype=float)
    if const.shape[-1] != basis.N:
        raise ShapeError("forcing does not match the basis")
    return lambda t: const


def solve_linear(initial: PhaseState, forcing, t0: float, t1: float, cfg: SolverConfig) -> Trajectory:
    """Linear problem u'' + u' - Laplacian u = G(t).

    ``forcing`` is None, a constant SpectralField / coefficient array, or a
    callable t -> SpectralField or coefficients.  Without forcing the exact
    per-mode propagator is evaluated at every recorded time.
    """
    if not t1 > t0:
        raise DomainError("t1 must exceed t0")
    basis, U0, V0 = _initial_arrays(initial)
    lam = basis.lambdas
    if forcing is None:
        n_steps = int(math.ceil((t1 - t0) / cfg.dt - 1e-9))
        h = (t1 - t0) / n_steps
        n_rec = n_steps // cfg.record_every + 1
        times = t0 + h * cfg.record_every * np.arange(n_rec)
        U_rec = np.empty((n_rec, 1, basis.N))
        V_rec = np.empty((n_rec, 1, basis.N))
        for i, t in enumerate(times):
            U_rec[i], V_rec[i] = propagate_free(lam, U0, V0, t - t0)
        Uf, Vf = propagate_free(lam, U0, V0, t1 - t0)
        return _trajectories(times, U_rec, V_rec, Uf, Vf, basis, None, cfg, t1)[0]
    res = integrate_rows(U0, V0, t0, t1, [None], basis, cfg, forcing=_forcing_fn(forcing, basis))
    return _trajectories(*res, basis, None, cfg, t1)[0]


def cocycle(initial: PhaseState, t: float, p: Symbol, cfg: SolverConfig) -> PhaseState:
    """Solution operator: state after time t for the dynamics driven by p from time 0."""
    if t < 0:
        raise DomainError("cocycle time must be nonnegative")
    if t == 0:
        return initial
    return integrate(initial, 0.0, t, p, cfg).final_state


def cocycle_rows(U0, V0, t: float, symbols: Sequence[Symbol], basis: Basis, cfg: SolverConfig):
    """Batched cocycle on coefficient arrays; returns final (U, V)."""
    if t == 0:
        return np.array(U0, dtype=float), np.array(V0, dtype=float)
    big = replace(cfg, record_every=max(1, int(math.ceil(t / cfg.dt))) + 1)
    *_, Uf, Vf = integrate_rows(U0, V0, 0.0, t, symbols, basis, big)
    return Uf, Vf

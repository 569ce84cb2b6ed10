"""Splitting u = v + w into a free decaying part and a forced remainder.

v solves the homogeneous linear problem with the data of u and is computed
with the exact propagator.  w starts from zero and solves the linear problem
forced by p(t, v + w), which is integrated with the same scheme and step as
u itself so that v + w reproduces u up to the scheme's own error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diagnostics import DecayFit, linear_decay_fit
from .errors import DomainError, FitError
from .solver import SolverConfig, Trajectory, _trajectories, integrate_rows, propagate_free, solve_linear
from .spectral import energy_norms, time_integral
from .symbols import Symbol

LADDER_CAP = 0.45


def ladder(alpha1: float = 0.18, tol: float = 1e-12) -> list[float]:
    """Regularity exponents 0, alpha1, (5/2) alpha1, ... capped at 9/20, then 1."""
    if not 0.0 < alpha1 <= LADDER_CAP + tol:
        raise DomainError(f"alpha1 must lie in (0, 9/20], got {alpha1}")
    out = [0.0, float(alpha1)]
    while out[-1] < LADDER_CAP - tol:
        nxt = 2.5 * out[-1]
        out.append(LADDER_CAP if nxt >= LADDER_CAP - tol else nxt)
    if abs(out[-1] - LADDER_CAP) <= tol:
        out[-1] = LADDER_CAP
    out.append(1.0)
    return out


@dataclass
class SplitResult:
    v_traj: Trajectory
    w_traj: Trajectory
    ladder: list[float]
    v_decay: list[DecayFit | None]
    w_bounds: list[float]
    consistency: float
    tolerance: float

    @property
    def consistent(self) -> bool:
        return self.consistency <= self.tolerance


def split(traj: Trajectory, p: Symbol | None = None, cfg: SolverConfig | None = None, alpha1: float = 0.18) -> SplitResult:
    """Decompose a Galerkin trajectory into its free part v and forced remainder w."""
    p = traj.symbol if p is None else p
    cfg = traj.config if cfg is None else cfg
    basis = traj.basis
    lam = basis.lambdas
    t0, t1 = float(traj.times[0]), float(traj.final_time)
    U0, V0 = traj.U[0], traj.V[0]

    v = solve_linear(traj.initial_state, None, t0, t1, cfg)

    def offset(t):
        return np.array(propagate_free(lam, U0, V0, t - t0)[0], ndmin=2)

    zero = np.zeros((1, basis.N))
    res = integrate_rows(zero, zero, t0, t1, [p], basis, cfg, offset=offset)
    w = _trajectories(*res, basis, [p], cfg, t1)[0]

    gap = energy_norms(lam, v.U + w.U - traj.U, v.V + w.V - traj.V)
    rungs = ladder(alpha1)
    fits: list[DecayFit | None] = []
    for a in rungs:
        try:
            fits.append(linear_decay_fit(v, s=a))
        except FitError:
            fits.append(None)
    bounds = [float(np.max(w.energy_norms(a))) for a in rungs]
    return SplitResult(v, w, rungs, fits, bounds, float(np.max(gap)), 10.0 * cfg.tolerance)


def ladder_norms(result: SplitResult, growth_limit: float = 0.01) -> list[dict]:
    """Per rung: decay of v in E_{alpha_i} and sup of w in E_{alpha_{i+1}}.

    A rung is flagged when log ||w||_{E_{alpha_{i+1}}} grows faster than
    ``growth_limit`` over the second half of the horizon.
    """
    rows = []
    w = result.w_traj
    half = len(w) // 2
    for i, a in enumerate(result.ladder):
        nxt = result.ladder[min(i + 1, len(result.ladder) - 1)]
        wn = w.energy_norms(nxt)
        tail = wn[half:]
        slope = 0.0
        if tail.size >= 2 and np.all(tail > 0):
            slope = float(np.polyfit(w.times[half:], np.log(tail), 1)[0])
        fit = result.v_decay[i]
        rows.append(
            {
                "alpha": a,
                "alpha_next": nxt,
                "w_sup": float(np.max(wn)),
                "w_growth_slope": slope,
                "w_flagged": slope > growth_limit,
                "v_rate": None if fit is None else fit.rate,
                "v_prefactor": None if fit is None else fit.prefactor,
            }
        )
    return rows


def forcing_fractional_norm(traj: Trajectory, p: Symbol | None, s: float, t0: float, h: float) -> float:
    """int_{t0}^{t0+h} ||P_N p(t, u(t))||_{H^s} dt over the recorded samples."""
    if not 0.0 <= s <= 1.0:
        raise DomainError(f"s must lie in [0, 1], got {s}")
    p = traj.symbol if p is None else p
    sl = traj.window(t0, t0 + h)
    if p is None:
        return 0.0
    t = traj.times[sl]
    vals = p.eval(t[:, None], traj.u_values()[sl])
    coeffs = vals @ traj.basis.weighted_modes
    norms = np.sqrt(np.sum(traj.basis.lambdas**s * coeffs * coeffs, axis=1))
    return float(time_integral(norms, traj.record_dt))

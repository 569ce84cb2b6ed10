"""Scalar functionals and inequality checks on trajectories.

Every inequality with an unspecified constant is checked by fitting the
smallest admissible constant and reporting it, never by assuming a value.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize
from scipy.integrate import solve_ivp

from .errors import DomainError, FitError, NonAbsorptionError, ShapeError
from .solver import Trajectory
from .spectral import energy_norms, lp_space_norm, time_integral
from .symbols import Symbol, antiderivative_F0

DISSIPATION_GRID = np.logspace(-3.0, 3.0, 61)


@dataclass
class CheckReport:
    """Uniform JSON-ready record of one check."""

    name: str
    inputs: dict = field(default_factory=dict)
    fitted: dict = field(default_factory=dict)
    worst_residual: float = 0.0
    passed: bool = True

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    return obj


# -- energy functional --------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EnergyBreakdown:
    """I = |u_t|^2 + |u|^2/2 + |grad u|^2 + (u_t, u) - 2 int F0(u), per recorded time."""

    times: np.ndarray
    I1: np.ndarray
    I2: np.ndarray
    I3: np.ndarray
    I4: np.ndarray
    I5: np.ndarray

    @property
    def I(self) -> np.ndarray:
        return self.I1 + self.I2 + self.I3 + self.I4 + self.I5

    def as_columns(self) -> dict:
        return {"I": self.I, "I1": self.I1, "I2": self.I2, "I3": self.I3, "I4": self.I4, "I5": self.I5}


def energy_breakdown(traj: Trajectory, p: Symbol | None = None) -> EnergyBreakdown:
    if len(traj) == 0:
        raise ShapeError("empty trajectory")
    p = traj.symbol if p is None else p
    U, V, lam = traj.U, traj.V, traj.basis.lambdas
    if p is None:
        I5 = np.zeros(len(traj))
    else:
        F0 = antiderivative_F0(p, traj.u_values())
        I5 = -2.0 * (np.asarray(F0) @ traj.basis.weights)
    return EnergyBreakdown(
        times=traj.times,
        I1=np.sum(V * V, axis=1),
        I2=0.5 * np.sum(U * U, axis=1),
        I3=np.sum(lam * U * U, axis=1),
        I4=np.sum(U * V, axis=1),
        I5=I5,
    )


def coercivity_offset(traj: Trajectory, breakdown: EnergyBreakdown, c: float = 0.5) -> float:
    """Smallest C with I >= c ||(u, u_t)||_E0^2 - C along the trajectory."""
    e2 = traj.energy_norms(0.0) ** 2
    return float(max(0.0, np.max(c * e2 - breakdown.I)))


@dataclass
class DissipationFit:
    C_decay: float
    C_src: float
    worst_residual: float
    slack: float
    feasible: bool
    samples: int

    def report(self) -> CheckReport:
        return CheckReport(
            "dissipation_residual",
            {"samples": self.samples, "slack": self.slack},
            {"C_decay": self.C_decay, "C_src": self.C_src},
            self.worst_residual,
            self.feasible,
        )


def dissipation_samples(traj: Trajectory, p: Symbol | None = None):
    """Centered-difference dI/dt and the dissipated quantity |u_t|^2 + |grad u|^2 at interior times."""
    if len(traj) < 3:
        raise ShapeError("need at least three recorded times")
    eb = energy_breakdown(traj, p)
    I = eb.I
    h = traj.record_dt
    dI = (I[2:] - I[:-2]) / (2.0 * h)
    D = eb.I1[1:-1] + eb.I3[1:-1]
    return dI, D, h


def fit_dissipation(dI: np.ndarray, D: np.ndarray, slack: float, grid: np.ndarray = DISSIPATION_GRID) -> DissipationFit:
    """Smallest grid pair with dI/dt <= -C_decay D + C_src + slack at every sample.

    Among feasible pairs the one with the smallest C_src / C_decay is chosen,
    ties going to the largest C_decay.
    """
    dI = np.asarray(dI, dtype=float).ravel()
    D = np.asarray(D, dtype=float).ravel()
    src_grid = np.concatenate([[0.0], grid])
    best = None
    for cd in grid:
        need = float(np.max(dI + cd * D - slack))
        k = int(np.searchsorted(src_grid, need - 1e-15 * max(1.0, abs(need))))
        if k >= src_grid.size:
            continue
        cs = src_grid[k]
        key = (cs / cd, -cd)
        if best is None or key < best[0]:
            best = (key, cd, cs)
    if best is None:
        cd, cs = grid[0], src_grid[-1]
        feasible = False
    else:
        _, cd, cs = best
        feasible = True
    worst = float(np.max(dI + cd * D - cs - slack))
    return DissipationFit(float(cd), float(cs), worst, float(slack), feasible, int(dI.size))


def dissipation_residual(trajs, p: Symbol | None = None) -> DissipationFit:
    """One (C_decay, C_src) pair valid across every given trajectory."""
    trajs = [trajs] if isinstance(trajs, Trajectory) else list(trajs)
    parts = [dissipation_samples(tr, p) for tr in trajs]
    slack = max(10.0 * h * h for _, _, h in parts)
    return fit_dissipation(np.concatenate([d for d, _, _ in parts]), np.concatenate([D for _, D, _ in parts]), slack)


# -- Gronwall-type bound --------------------------------------------------------


@dataclass(frozen=True)
class GronwallSpec:
    A: tuple[float, ...]
    B: tuple[float, ...]
    alpha: tuple[float, ...]
    I0: float
    eta: float

    def __post_init__(self):
        A, B, al = (tuple(float(x) for x in v) for v in (self.A, self.B, self.alpha))
        if not (len(A) == len(B) == len(al) >= 1):
            raise DomainError("A, B, alpha must have one common positive length")
        if min(A + B + al) <= 0 or not self.eta > 0:
            raise DomainError("all constants and eta must be positive")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "alpha", al)
        object.__setattr__(self, "I0", float(self.I0))
        object.__setattr__(self, "eta", float(self.eta))


@dataclass(frozen=True)
class GronwallResult:
    bound: float
    t0: float
    delta: float
    rate: float

    @property
    def level(self) -> float:
        return self.bound


def gronwall_bound(spec: GronwallSpec) -> GronwallResult:
    """Bound sum (B_i/A_i)^(1/alpha_i) + eta and a certified entry time.

    While I exceeds the bound, some component satisfies
    I_i^alpha_i > B_i/A_i + delta with delta solving
    sum (B_i/A_i + delta)^(1/alpha_i) = bound, so I decreases at rate at
    least min(A_i) * delta.
    """
    A, B, al = map(np.asarray, (spec.A, spec.B, spec.alpha))
    base = float(np.sum((B / A) ** (1.0 / al)))
    target = base + spec.eta

    def excess(d):
        return float(np.sum((B / A + d) ** (1.0 / al))) - target

    hi = 1.0
    while excess(hi) < 0:
        hi *= 2.0
    delta = optimize.brentq(excess, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    # a slightly smaller delta keeps the certificate on the safe side of rounding
    delta *= 1.0 - 1e-12
    rate = float(np.min(A)) * delta
    t0 = max(0.0, (spec.I0 - target) / rate)
    return GronwallResult(bound=target, t0=t0, delta=delta, rate=rate)


def gronwall_comparison(spec: GronwallSpec, t_end: float, n: int = 400):
    """Worst-case solution of I' = c(I) allowed by the hypotheses, sampled on [0, t_end].

    c(I) is the largest right-hand side compatible with the per-component
    inequalities when I splits into nonnegative parts.
    """
    A, B, al = map(np.asarray, (spec.A, spec.B, spec.alpha))
    bmin = float(np.min(B))

    def h(c):
        return float(np.sum(((B - c) / A) ** (1.0 / al)))

    def rate(I):
        if I <= h(bmin):
            return bmin
        lo = bmin - 1.0
        while h(lo) < I:
            lo = bmin - 2.0 * (bmin - lo)
        return optimize.brentq(lambda c: h(c) - I, lo, bmin, xtol=1e-14)

    sol = solve_ivp(lambda t, y: [rate(y[0])], (0.0, t_end), [spec.I0], rtol=1e-10, atol=1e-12,
                    t_eval=np.linspace(0.0, t_end, n))
    return sol.t, sol.y[0]


# -- absorbing ball -----------------------------------------------------------


@dataclass
class AbsorbingEntry:
    radius: float
    entry_times: list[float]
    max_entry: float
    per_symbol_max: list[float]
    spread: float

    def report(self, limit: float = 0.2) -> CheckReport:
        return CheckReport(
            "absorbing_entry",
            {"radius": self.radius, "members": len(self.entry_times)},
            {"max_entry": self.max_entry, "spread": self.spread},
            self.spread,
            self.spread <= limit,
        )


def entry_time(times: np.ndarray, norms: np.ndarray, radius: float) -> float | None:
    """First recorded time after which the norm stays within radius; None if it never does."""
    outside = np.nonzero(norms > radius)[0]
    if outside.size == 0:
        return float(times[0])
    last = int(outside[-1])
    if last == len(norms) - 1:
        return None
    return float(times[last + 1])


def absorbing_entry(trajs: Sequence[Trajectory], radius: float, groups: Sequence | None = None) -> AbsorbingEntry:
    """Per-member entry times into the E0 ball and their spread across symbols.

    ``groups`` labels each member with its driving symbol (defaults to the
    trajectory's own symbol).  The spread is (max - min) / max of the
    per-symbol latest entry times.
    """
    if radius <= 0:
        raise DomainError("radius must be positive")
    entries = []
    for m, tr in enumerate(trajs):
        t = entry_time(tr.times, tr.energy_norms(0.0), radius)
        if t is None:
            raise NonAbsorptionError(m, f"norm {tr.energy_norms(0.0)[-1]:.3g} > {radius:.3g} at the horizon")
        entries.append(t - float(tr.times[0]))
    return summarize_entries(entries, radius, [tr.symbol for tr in trajs] if groups is None else list(groups))


def summarize_entries(entries: Sequence[float], radius: float, groups: Sequence) -> AbsorbingEntry:
    per: dict = {}
    keys: list = []
    for e, g in zip(entries, groups):
        k = next((x for x in keys if x == g), None)
        if k is None:
            keys.append(g)
            per[len(keys) - 1] = e
        else:
            i = keys.index(k)
            per[i] = max(per[i], e)
    maxes = [per[i] for i in range(len(keys))]
    top = max(maxes) if maxes else 0.0
    spread = (top - min(maxes)) / top if top > 0 else 0.0
    return AbsorbingEntry(float(radius), [float(e) for e in entries], float(max(entries, default=0.0)), maxes, float(spread))


def fit_absorbing_radius(norm_series: Sequence[np.ndarray], margin: float = 1.5) -> float:
    """Margin times the largest E0 norm seen over the second half of any run."""
    worst = 0.0
    for s in norm_series:
        s = np.asarray(s)
        worst = max(worst, float(np.max(s[len(s) // 2 :])))
    return margin * worst


# -- space-time norms ------------------------------------------------------------


def strichartz_norm(traj: Trajectory, t0: float, h: float, q: float = 4.0, p: float = 12.0) -> float:
    """||u||_{L^q(t0, t0+h; L^p)} from the recorded samples (composite Simpson in time)."""
    if h <= 0:
        raise DomainError("window length must be positive")
    sl = traj.window(t0, t0 + h)
    vals = traj.u_values()[sl]
    if vals.shape[0] < 2:
        raise DomainError("window holds fewer than two recorded times")
    space = lp_space_norm(vals, p, traj.basis)
    return float(time_integral(space**q, traj.record_dt)) ** (1.0 / q)


def strichartz_windows(traj: Trajectory, h: float, step: float | None = None, q: float = 4.0, p: float = 12.0):
    """Sliding-window norms; returns (window starts, norms)."""
    step = h if step is None else step
    t_first, t_last = float(traj.times[0]), float(traj.times[-1])
    n = int(math.floor((t_last - t_first - h) / step + 1e-9)) + 1
    if n < 1:
        raise DomainError("trajectory shorter than one window")
    starts = t_first + step * np.arange(n)
    space = lp_space_norm(traj.u_values(), p, traj.basis) ** q
    out = np.empty(n)
    for i, s in enumerate(starts):
        sl = traj.window(s, s + h)
        out[i] = float(time_integral(space[sl], traj.record_dt)) ** (1.0 / q)
    return starts, out


def nonlinear_forcing_l2(traj: Trajectory, p: Symbol | None = None) -> np.ndarray:
    """||P_N p(t, u(t))||_{L^2} at every recorded time."""
    p = traj.symbol if p is None else p
    if p is None:
        return np.zeros(len(traj))
    vals = p.eval(traj.times[:, None], traj.u_values())
    coeffs = vals @ traj.basis.weighted_modes
    return np.sqrt(np.sum(coeffs * coeffs, axis=1))


def required_strichartz_constant(trajs: Sequence[Trajectory], h: float, starts: Sequence[float]) -> float:
    """Largest ratio ||u||_{L^4 L^12} / (||(u, u_t)(t0)||_E0 + ||G||_{L^1 L^2}) over runs and windows.

    Each run is read as a linear problem forced by G = P_N p(t, u(t)).
    """
    worst = 0.0
    for tr in trajs:
        e0 = tr.energy_norms(0.0)
        g = nonlinear_forcing_l2(tr)
        space = lp_space_norm(tr.u_values(), 12.0, tr.basis) ** 4
        for s in starts:
            sl = tr.window(s, s + h)
            num = float(time_integral(space[sl], tr.record_dt)) ** 0.25
            den = float(e0[sl.start]) + float(time_integral(g[sl], tr.record_dt))
            if den > 0:
                worst = max(worst, num / den)
    return worst


def interpolation_check(traj: Trajectory, t: float | None = None, t0: float | None = None) -> tuple[float, float]:
    """Both sides of ||u||_{L^5 L^10} <= ||u||_{L^4 L^12}^(4/5) * sup ||grad u||^(1/5) on [t0, t]."""
    t0 = float(traj.times[0]) if t0 is None else t0
    t = float(traj.times[-1]) if t is None else t
    if t <= t0:
        return 0.0, 0.0
    lhs = strichartz_norm(traj, t0, t - t0, q=5.0, p=10.0)
    l4 = strichartz_norm(traj, t0, t - t0, q=4.0, p=12.0)
    sl = traj.window(t0, t)
    grad = float(np.max(np.sqrt(np.sum(traj.basis.lambdas * traj.U[sl] ** 2, axis=1))))
    return lhs, l4**0.8 * grad**0.2


# -- linear decay ---------------------------------------------------------------


@dataclass
class DecayFit:
    rate: float
    prefactor: float
    residual: float
    s: float = 0.0

    def report(self) -> CheckReport:
        return CheckReport(
            "linear_decay_fit",
            {"s": self.s},
            {"alpha": self.rate, "C": self.prefactor},
            self.residual,
            0.4 <= self.rate <= 0.5 + 1e-9 and self.residual < 0.1,
        )


def adapted_norms(lambdas, U, V, s: float = 0.0) -> np.ndarray:
    """E_s-equivalent norm built from lambda u^2 + u v + v^2 per mode.

    For lambda > 1/4 this quadratic form equals |v - conj(r) u|^2 with r a
    characteristic root, so it decays exactly like exp(-t) along free
    motion.  Modes with lambda <= 1/4 keep the plain energy weight.
    """
    lam = np.asarray(lambdas)
    w = lam**s
    osc = lam > 0.25
    q = np.where(osc, lam * U * U + U * V + V * V, lam * U * U + V * V)
    return np.sqrt(np.sum(w * q, axis=-1))


def linear_decay_fit(traj: Trajectory, s: float = 0.0, max_residual: float = 0.1) -> DecayFit:
    """Fit ||(u, u_t)(t)|| ~ C ||(u, u_t)(0)|| exp(-alpha t) on a free linear trajectory.

    The rate is the least-squares slope of the log of the adapted norm; the
    prefactor is the smallest C for which the plain E_s norm obeys the
    envelope at every recorded time.
    """
    lam = traj.basis.lambdas
    a = adapted_norms(lam, traj.U, traj.V, s)
    raw = energy_norms(lam, traj.U, traj.V, s)
    ok = a > 1e-300
    if raw[0] == 0 or np.count_nonzero(ok) < 2:
        raise FitError("nothing to fit: trajectory is zero")
    t = traj.times[ok] - traj.times[0]
    y = np.log(a[ok])
    slope, icpt = np.polyfit(t, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * t + icpt)) ** 2)))
    if not resid < max_residual:
        raise FitError(f"log-residual {resid:.3g} exceeds {max_residual}")
    alpha = -float(slope)
    env = raw[0] * np.exp(-alpha * (traj.times - traj.times[0]))
    C = float(np.max(raw / env))
    return DecayFit(alpha, C, resid, s)


# -- continuation horizon and continuous dependence ------------------------------


def tmax_bound(R: float, C: float, C1: float, kappa: float) -> float:
    """Continuation horizon (min{1 / (2 C R^(1/5) ((C1 R)^(4 - 4 kappa/5) + 2)), 1})^(5/kappa)."""
    if min(R, C, C1) <= 0:
        raise DomainError("R, C and C1 must be positive")
    if not 0 < kappa < 4:
        raise DomainError("kappa must lie in (0, 4)")
    inner = 1.0 / (2.0 * C * R**0.2 * ((C1 * R) ** (4.0 - 0.8 * kappa) + 2.0))
    return min(inner, 1.0) ** (5.0 / kappa)


@dataclass
class DependenceFit:
    delta: float
    constant: float
    worst_ratio: float

    def report(self) -> CheckReport:
        return CheckReport("continuous_dependence", {"delta": self.delta}, {"C": self.constant}, self.worst_ratio,
                           bool(math.isfinite(self.constant)))


def continuous_dependence(a: Trajectory, b: Trajectory) -> DependenceFit:
    """Smallest C with |a(t) - b(t)|_E0 <= delta exp(C (t + int |u_a|_12^4 + |u_b|_12^4))."""
    if len(a) != len(b) or not np.array_equal(a.times, b.times):
        raise ShapeError("trajectories must share a time grid")
    sep = energy_norms(a.basis.lambdas, a.U - b.U, a.V - b.V)
    delta = float(sep[0])
    if delta == 0:
        return DependenceFit(0.0, 0.0, 0.0)
    w = lp_space_norm(a.u_values(), 12.0, a.basis) ** 4 + lp_space_norm(b.u_values(), 12.0, b.basis) ** 4
    dt = a.record_dt
    cum = np.concatenate([[0.0], np.cumsum(0.5 * dt * (w[1:] + w[:-1]))])
    phi = (a.times - a.times[0]) + cum
    mask = phi > 0
    logs = np.log(np.maximum(sep[mask], 1e-300) / delta) / phi[mask]
    C = max(0.0, float(np.max(logs))) if logs.size else 0.0
    ratio = float(np.max(sep / (delta * np.exp(C * phi))))
    return DependenceFit(delta, C, ratio)

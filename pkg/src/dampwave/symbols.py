"""Time-dependent nonlinearities p(t, u) = f0(u) + eps * a(t + phase) * b(u).

The family is closed under time translation: shifting only moves the phase,
so the hull of a periodic member is a circle of phases and hull sampling is
finite dimensional.  Phases are kept as exact rationals so the translation
group law holds bit for bit.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy import integrate as spi

from .errors import ConfigurationError, DomainError, EvaluationError

SQRT2 = math.sqrt(2.0)
TWO_PI = Fraction(2.0 * math.pi)


# -- scalar functions of u ----------------------------------------------------


class ScalarFunction:
    """Vectorized u -> value with derivative and optional closed-form antiderivative."""

    name = "scalar"

    def __call__(self, u):
        raise NotImplementedError

    def du(self, u):
        raise NotImplementedError

    def antiderivative(self, u):
        """Closed-form integral from 0 to u, or None when not available."""
        return None

    def params(self) -> dict:
        return {}


@dataclass(frozen=True)
class PowerDissipation(ScalarFunction):
    """u -> -u |u|^(4 - kappa)."""

    kappa: float = 1.0
    name = "power"

    def __post_init__(self):
        if not 0.0 < self.kappa < 4.0:
            raise ConfigurationError(f"kappa must lie in (0, 4), got {self.kappa}", key="kappa")

    def _abs_power(self, u):
        a = np.abs(u)
        q = 4.0 - self.kappa
        if q == 3.0:  # kappa = 1; repeated products are much faster than pow
            return a * a * a
        if q == 2.0:
            return a * a
        return a**q

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        return -u * self._abs_power(u)

    def du(self, u):
        u = np.asarray(u, dtype=float)
        return -(5.0 - self.kappa) * self._abs_power(u)

    def antiderivative(self, u):
        u = np.asarray(u, dtype=float)
        q = 6.0 - self.kappa
        return -np.abs(u) ** q / q

    def params(self):
        return {"kappa": self.kappa}


@dataclass(frozen=True)
class Polynomial(ScalarFunction):
    """sum_i c_i u^i with ascending coefficients, degree at most 3."""

    coeffs: tuple[float, ...] = (0.0,)
    name = "poly"

    def __post_init__(self):
        c = tuple(float(x) for x in self.coeffs)
        if len(c) == 0:
            c = (0.0,)
        if len(c) > 4 and any(x != 0.0 for x in c[4:]):
            raise ConfigurationError("polynomial g must have degree at most 3", key="g")
        object.__setattr__(self, "coeffs", c[:4])

    def __call__(self, u):
        return np.polynomial.polynomial.polyval(np.asarray(u, dtype=float), self.coeffs)

    def du(self, u):
        d = np.polynomial.polynomial.polyder(self.coeffs)
        return np.polynomial.polynomial.polyval(np.asarray(u, dtype=float), d) + 0.0 * np.asarray(u, dtype=float)

    def antiderivative(self, u):
        return np.polynomial.polynomial.polyval(
            np.asarray(u, dtype=float), np.polynomial.polynomial.polyint(self.coeffs)
        )

    def params(self):
        return {"coeffs": list(self.coeffs)}


@dataclass(frozen=True)
class Constant(Polynomial):
    """u -> c."""

    name = "const"

    def __init__(self, c: float = 0.0):
        object.__setattr__(self, "coeffs", (float(c),))

    @property
    def c(self) -> float:
        return self.coeffs[0]

    def params(self):
        return {"c": self.c}


@dataclass(frozen=True)
class SinCube(ScalarFunction):
    """u -> sin(u^3)."""

    name = "sin_cube"

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        return np.sin(u * u * u)

    def du(self, u):
        u = np.asarray(u, dtype=float)
        return 3.0 * u * u * np.cos(u * u * u)


@dataclass(frozen=True, eq=False)
class UserFunction(ScalarFunction):
    """User-supplied function; must carry its own derivative."""

    fn: Callable
    dfn: Callable
    label: str = "user"
    antideriv: Callable | None = None
    name = "user"

    def __post_init__(self):
        if not callable(self.fn) or not callable(self.dfn):
            raise ConfigurationError("a user function needs callable value and derivative", key="g")

    def __call__(self, u):
        return np.asarray(self.fn(np.asarray(u, dtype=float)), dtype=float)

    def du(self, u):
        return np.asarray(self.dfn(np.asarray(u, dtype=float)), dtype=float)

    def antiderivative(self, u):
        if self.antideriv is None:
            return None
        return np.asarray(self.antideriv(np.asarray(u, dtype=float)), dtype=float)

    def params(self):
        return {"label": self.label}


@dataclass(frozen=True)
class Sum(ScalarFunction):
    """Pointwise sum of scalar functions."""

    parts: tuple[ScalarFunction, ...]
    name = "sum"

    def __call__(self, u):
        return sum(p(u) for p in self.parts)

    def du(self, u):
        return sum(p.du(u) for p in self.parts)

    def antiderivative(self, u):
        vals = [p.antiderivative(u) for p in self.parts]
        if any(v is None for v in vals):
            return None
        return sum(vals)

    def params(self):
        return {"parts": [{"name": p.name, **p.params()} for p in self.parts]}


# -- temporal parts -----------------------------------------------------------


@dataclass(frozen=True)
class Temporal:
    """t -> a(t) with known period (None when not periodic)."""

    kind: str = "sin"

    def __post_init__(self):
        if self.kind not in TEMPORAL_KINDS:
            raise ConfigurationError(f"unknown temporal part {self.kind!r}", key="a")

    @property
    def period(self) -> Fraction | None:
        return None if self.kind == "quasiperiodic" else TWO_PI

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "sin":
            return np.sin(t)
        if self.kind == "cos":
            return np.cos(t)
        return np.sin(t) + np.sin(SQRT2 * t)

    @property
    def sup(self) -> float:
        return 2.0 if self.kind == "quasiperiodic" else 1.0


TEMPORAL_KINDS = ("sin", "cos", "quasiperiodic")


def _fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    x = float(x)
    if not math.isfinite(x):
        raise DomainError("phase must be finite")
    return Fraction(x)


# -- symbols ------------------------------------------------------------------


@dataclass(frozen=True)
class Symbol:
    """p(t, u) = f0(u) + eps * a(t + phase) * b(u)."""

    f0: ScalarFunction = field(default_factory=lambda: PowerDissipation(1.0))
    eps: float = 0.0
    a: Temporal = field(default_factory=Temporal)
    b: ScalarFunction = field(default_factory=SinCube)
    phase: Fraction = Fraction(0)

    def __post_init__(self):
        eps = float(self.eps)
        if not 0.0 <= eps <= 1.0:
            raise ConfigurationError(f"eps must lie in [0, 1], got {eps}", key="eps")
        object.__setattr__(self, "eps", eps)
        object.__setattr__(self, "phase", _fraction(self.phase))

    # constructors
    @classmethod
    def zero(cls) -> "Symbol":
        return cls(f0=Constant(0.0))

    @classmethod
    def constant(cls, c: float) -> "Symbol":
        return cls(f0=Constant(c))

    @property
    def kind(self) -> str:
        return "autonomous" if self.eps == 0.0 else "shifted perturbation"

    @property
    def is_autonomous(self) -> bool:
        return self.eps == 0.0

    @cached_property
    def phase_value(self) -> float:
        """Phase as a float, reduced modulo the period of a when it has one."""
        T = self.a.period
        return float(self.phase % T) if T is not None else float(self.phase)

    def coefficient(self, t):
        """Time factor eps * a(t + phase) multiplying b(u)."""
        if self.eps == 0.0:
            return np.zeros_like(np.asarray(t, dtype=float))
        return self.eps * self.a(np.asarray(t, dtype=float) + self.phase_value)

    def _checked(self, value, t, u, what: str):
        value = np.asarray(value, dtype=float)
        if not np.all(np.isfinite(value)):
            bad = np.unravel_index(np.argmax(~np.isfinite(value)), value.shape) if value.ndim else ()
            ub = np.broadcast_to(np.asarray(u, dtype=float), value.shape)[bad] if value.ndim else u
            tb = np.broadcast_to(np.asarray(t, dtype=float), value.shape)[bad] if value.ndim else t
            raise EvaluationError(f"non-finite {what}", t=float(tb), x=float(ub))
        return value if value.ndim else float(value)

    def eval(self, t, u):
        """p(t, u), broadcasting over t and u."""
        u = np.asarray(u, dtype=float)
        val = self.f0(u)
        if self.eps != 0.0:
            val = val + self.coefficient(t) * self.b(u)
        return self._checked(val, t, u, "nonlinearity")

    def eval_du(self, t, u):
        """Partial derivative of p with respect to u."""
        u = np.asarray(u, dtype=float)
        val = self.f0.du(u)
        if self.eps != 0.0:
            val = val + self.coefficient(t) * self.b.du(u)
        return self._checked(val, t, u, "derivative")

    def shift(self, t) -> "Symbol":
        """Time translate: (shift(p, t))(s, u) = p(s + t, u)."""
        return replace(self, phase=self.phase + _fraction(t))

    def with_eps(self, eps: float) -> "Symbol":
        return replace(self, eps=eps)

    def shares_spatial_parts(self, other: "Symbol") -> bool:
        """True when both symbols differ only in their time factor."""
        return self.f0 == other.f0 and (self.b == other.b or self.eps == 0.0 or other.eps == 0.0)

    def describe(self) -> dict:
        return {
            "f0": {"name": self.f0.name, **self.f0.params()},
            "eps": self.eps,
            "a": self.a.kind,
            "b": {"name": self.b.name, **self.b.params()},
            "phase": float(self.phase),
        }


def builtin_f0(kappa: float = 1.0, g_coeffs: Sequence[float] | None = None) -> ScalarFunction:
    """f0(u) = -u|u|^(4-kappa) + g(u) with polynomial g (g = 0 by default)."""
    power = PowerDissipation(kappa)
    if g_coeffs is None or all(c == 0.0 for c in g_coeffs):
        return power
    return Sum((power, Polynomial(tuple(g_coeffs))))


@dataclass(frozen=True)
class SymbolFamily:
    """eps -> f0(u) + eps * a(t + phase) * sin(u^3) with f0 = -u|u|^(4-kappa) + g(u)."""

    kappa: float = 1.0
    g_coeffs: tuple[float, ...] = ()
    a: str = "sin"
    phase: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "g_coeffs", tuple(float(c) for c in self.g_coeffs))
        builtin_f0(self.kappa, self.g_coeffs)
        Temporal(self.a)

    @cached_property
    def f0(self) -> ScalarFunction:
        return builtin_f0(self.kappa, self.g_coeffs)

    def __call__(self, eps: float) -> Symbol:
        return Symbol(f0=self.f0, eps=eps, a=Temporal(self.a), b=SinCube(), phase=self.phase)


def shift(p: Symbol, t) -> Symbol:
    return p.shift(t)


def hull_sample(p: Symbol, shifts: Sequence[float]) -> list[Symbol]:
    """Translates of p by each shift; phases reduced modulo the period of a."""
    shifts = list(shifts)
    if not shifts:
        raise DomainError("hull_sample needs at least one shift")
    out = []
    T = p.a.period
    for s in shifts:
        phase = p.phase + _fraction(s)
        if T is not None:
            phase = phase % T
        out.append(replace(p, phase=phase))
    return out


def default_hull_shifts(p: Symbol, count: int | None = None) -> list[float]:
    """Equispaced phases over one period, or low-discrepancy shifts when aperiodic."""
    if p.a.period is not None:
        n = 8 if count is None else count
        return [2.0 * math.pi * k / n for k in range(n)]
    n = 16 if count is None else count
    golden = (math.sqrt(5.0) - 1.0) / 2.0
    # Kronecker sequence spread over a window of length 100
    return [100.0 * ((k * golden) % 1.0) for k in range(n)]


# -- the C(R; C^1(R)) metric --------------------------------------------------


@dataclass(frozen=True)
class MetricResult:
    value: float
    grid_uncertainty: float
    truncation_bound: float
    i_max: int
    n_grid: int

    @property
    def uncertainty(self) -> float:
        return self.grid_uncertainty + self.truncation_bound

    def __float__(self):
        return self.value

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "grid_uncertainty": self.grid_uncertainty,
            "truncation_bound": self.truncation_bound,
            "i_max": self.i_max,
            "n_grid": self.n_grid,
        }


def _components(g1: Symbol, g2: Symbol):
    """Write g1 - g2 as sum_m c_m(t) phi_m(u); returns (time factors, spatial functions)."""
    times, spaces = [], []
    if g1.f0 != g2.f0:
        times += [lambda t: np.ones_like(t), lambda t: -np.ones_like(t)]
        spaces += [g1.f0, g2.f0]
    if g1.eps and g2.eps and g1.b == g2.b:
        times.append(lambda t: g1.coefficient(t) - g2.coefficient(t))
        spaces.append(g1.b)
    else:
        if g1.eps:
            times.append(g1.coefficient)
            spaces.append(g1.b)
        if g2.eps:
            times.append(lambda t: -g2.coefficient(t))
            spaces.append(g2.b)
    return times, spaces


def _metric_series(g1: Symbol, g2: Symbol, i_max: int, j_max: int, n_u: int, t_per_unit: int) -> float:
    times, spaces = _components(g1, g2)
    if not spaces:
        return 0.0
    t_max = float(i_max)
    n_t = 2 * i_max * t_per_unit + 1
    t = np.linspace(-t_max, t_max, n_t)
    if g1.is_autonomous and g2.is_autonomous:
        t = np.zeros(1)
    C = np.column_stack([np.broadcast_to(np.asarray(c(t), dtype=float), t.shape) for c in times])
    inner = np.zeros(t.shape[0])
    for j in range(1, j_max + 1):
        u = np.linspace(-float(j), float(j), n_u)
        phi = np.vstack([f(u) * np.ones_like(u) for f in spaces])
        dphi = np.vstack([f.du(u) * np.ones_like(u) for f in spaces])
        if len(spaces) == 1:
            norm = np.abs(C[:, 0]) * (np.max(np.abs(phi)) + np.max(np.abs(dphi)))
        else:
            norm = np.empty(t.shape[0])
            for lo in range(0, t.shape[0], 512):
                blk = C[lo : lo + 512]
                norm[lo : lo + 512] = np.max(np.abs(blk @ phi), axis=1) + np.max(np.abs(blk @ dphi), axis=1)
        if not np.all(np.isfinite(norm)):
            raise EvaluationError("non-finite C1 distance", t=None)
        inner += 2.0**-j * norm / (1.0 + norm)
    total = 0.0
    for i in range(1, i_max + 1):
        window = inner if t.shape[0] == 1 else inner[np.abs(t) <= i + 1e-12]
        s = float(np.max(window))
        total += 2.0**-i * s / (1.0 + s)
    return total


def c1_metric(
    g1: Symbol,
    g2: Symbol,
    i_max: int = 20,
    grid: int = 2048,
    t_per_unit: int = 32,
    j_max: int | None = None,
) -> MetricResult:
    """Truncated distance in C(R; C^1(R)).

    Outer series over time windows [-i, i] of the sup of the inner C^1 series
    sum_j 2^-j ||g1(t) - g2(t)||_{C^1[-j, j]} / (1 + ...), with the u-sup taken
    on ``grid`` uniform points per window.  The grid uncertainty is the change
    from a half-resolution evaluation; the truncation bound covers the dropped
    tails of both series.
    """
    if i_max < 1:
        raise DomainError("i_max must be >= 1")
    j_max = i_max if j_max is None else j_max
    fine = _metric_series(g1, g2, i_max, j_max, grid, t_per_unit)
    coarse = _metric_series(g1, g2, i_max, j_max, grid // 2, max(1, t_per_unit // 2))
    trunc = 2.0**-i_max + 2.0**-j_max * (1.0 - 2.0**-i_max)
    return MetricResult(fine, abs(fine - coarse), trunc, i_max, grid)


# -- assumption checks ---------------------------------------------------------


@dataclass
class AssumptionReport:
    eps_grid: list[float]
    sup_deviation: list[float]
    deviation_pass: bool
    uniform_bound: float
    bound_worst: tuple[float, float, float]
    bound_pass: bool
    dissipation_limsup: float
    dissipation_margin: float
    dissipation_worst_u: float
    dissipation_pass: bool
    growth_constant: float
    growth_lsq_constant: float
    growth_exponent: float
    growth_worst_u: float
    growth_pass: bool
    continuity_modulus: list[tuple[float, float, float]]
    continuity_pass: bool

    @property
    def passed(self) -> bool:
        return self.deviation_pass and self.bound_pass and self.dissipation_pass and self.growth_pass and self.continuity_pass

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["bound_worst"] = list(self.bound_worst)
        d["continuity_modulus"] = [list(x) for x in self.continuity_modulus]
        d["passed"] = self.passed
        return d


def _exponent_of(p: Symbol) -> float | None:
    f0 = p.f0
    parts = f0.parts if isinstance(f0, Sum) else (f0,)
    for part in parts:
        if isinstance(part, PowerDissipation):
            return 4.0 - part.kappa
    return None


def check_assumptions(
    family: Callable[[float], Symbol],
    eps_grid: Sequence[float],
    t_grid: Sequence[float],
    u_grid: Sequence[float],
    lambda1: float = 1.0,
    exponent: float | None = None,
) -> AssumptionReport:
    """Sample-based estimates for the standing hypotheses on the family."""
    eps_grid = [float(e) for e in eps_grid]
    t = np.asarray(t_grid, dtype=float)
    u = np.asarray(u_grid, dtype=float)
    if not eps_grid or t.size == 0 or u.size == 0:
        raise DomainError("grids must be nonempty")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(u))):
        raise DomainError("grids must be bounded")
    T, U = np.meshgrid(t, u, indexing="ij")
    base = family(0.0)
    f0u = np.asarray(base.f0(u), dtype=float)

    # deviation from the autonomous limit, per eps
    devs, K, worst = [], 0.0, (0.0, float(t[0]), float(u[0]))
    du_max = np.zeros_like(u)
    symbols = []
    for e in eps_grid:
        p = family(e)
        symbols.append(p)
        dev = np.abs(p.eval(T, U) - f0u[None, :])
        k = np.unravel_index(np.argmax(dev), dev.shape)
        devs.append(float(dev[k]))
        if dev[k] > K:
            K, worst = float(dev[k]), (e, float(t[k[0]]), float(u[k[1]]))
        du_max = np.maximum(du_max, np.max(np.abs(p.eval_du(T, U)), axis=0))
    order = np.argsort(eps_grid)[::-1]
    devs_sorted = [devs[i] for i in order]
    deviation_pass = all(b <= a + 1e-12 for a, b in zip(devs_sorted, devs_sorted[1:]))
    if 0.0 in eps_grid:
        deviation_pass = deviation_pass and devs[eps_grid.index(0.0)] == 0.0

    # limsup f0(u)/u over the outer half of the sampled range
    nz = np.abs(u) > 0
    umax = np.max(np.abs(u))
    tail = nz & (np.abs(u) >= 0.5 * umax)
    if not np.any(tail):
        tail = nz
    ratio = f0u[tail] / u[tail]
    k = int(np.argmax(ratio))
    dissipation_limsup = float(ratio[k])

    # growth of the u-derivative
    q = _exponent_of(base) if exponent is None else exponent
    if q is None:
        raise ConfigurationError("growth exponent unknown; pass exponent explicitly", key="exponent")
    weight = 1.0 + np.abs(u) ** q
    ratios = du_max / weight
    kk = int(np.argmax(ratios))
    c_sup = float(ratios[kk])
    c_lsq = float(np.dot(weight, du_max) / np.dot(weight, weight))

    # moduli of continuity in t over the sampled range
    mod = []
    if t.size > 1:
        dt = float(np.min(np.diff(np.sort(t))))
        F = [family(e) for e in eps_grid]
        for lag in (1, 2, 4, 8):
            if lag >= t.size:
                break
            wf = wd = 0.0
            for p in F:
                vals = p.eval(T, U)
                ders = p.eval_du(T, U)
                wf = max(wf, float(np.max(np.abs(vals[lag:] - vals[:-lag]))))
                wd = max(wd, float(np.max(np.abs(ders[lag:] - ders[:-lag]))))
            mod.append((lag * dt, wf, wd))
    continuity_pass = all(np.isfinite(x).all() for x in np.asarray(mod, dtype=float).reshape(-1, 3)) and all(
        b[1] >= a[1] - 1e-12 and b[2] >= a[2] - 1e-12 for a, b in zip(mod, mod[1:])
    )
    if len(mod) >= 2:
        # a uniformly continuous sampled map has modulus shrinking with the lag
        d0, dl = mod[0], mod[-1]
        scale = dl[0] / d0[0]
        continuity_pass = continuity_pass and d0[1] <= dl[1] + 1e-12 and d0[1] * scale >= dl[1] / 4.0 - 1e-12

    return AssumptionReport(
        eps_grid=eps_grid,
        sup_deviation=devs,
        deviation_pass=bool(deviation_pass),
        uniform_bound=K,
        bound_worst=worst,
        bound_pass=bool(np.isfinite(K)),
        dissipation_limsup=dissipation_limsup,
        dissipation_margin=float(lambda1 - dissipation_limsup),
        dissipation_worst_u=float(u[tail][k]),
        dissipation_pass=bool(dissipation_limsup < lambda1),
        growth_constant=c_sup,
        growth_lsq_constant=c_lsq,
        growth_exponent=float(q),
        growth_worst_u=float(u[kk]),
        growth_pass=bool(np.isfinite(c_sup)),
        continuity_modulus=mod,
        continuity_pass=bool(continuity_pass),
    )


# -- primitive of f0 -----------------------------------------------------------


def antiderivative_F0(p: Symbol, u):
    """F0(u) = integral of f0 from 0 to u; closed form when known, else adaptive quadrature."""
    closed = p.f0.antiderivative(u)
    if closed is not None:
        val = np.asarray(closed, dtype=float)
        return val if val.ndim else float(val)
    uu = np.asarray(u, dtype=float)
    out = np.empty(uu.shape)
    f = lambda v: float(p.f0(v))
    for idx, x in np.ndenumerate(uu):
        with warnings.catch_warnings():
            warnings.simplefilter("error", spi.IntegrationWarning)
            try:
                val, _ = spi.quad(f, 0.0, float(x), epsabs=1e-10, epsrel=1e-12, limit=200)
            except spi.IntegrationWarning as exc:
                raise EvaluationError(f"quadrature for F0 did not converge: {exc}", x=float(x)) from exc
        if not math.isfinite(val):
            raise EvaluationError("non-finite F0", x=float(x))
        out[idx] = val
    return out if out.ndim else float(out)

"""Dirichlet eigenbasis on 1D/2D boxes, spectral transforms and norms.

Every field is stored by its coefficients in the L2-orthonormal eigenbasis
of the Dirichlet Laplacian, so the fractional spaces H^s and the energy
spaces E_s reduce to weighted Euclidean norms of coefficient vectors.
Spatial integrals (L^p norms, projections of nonlinear terms) use a
composite Gauss-Legendre rule on a tensor grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.integrate import simpson

from .errors import ConfigurationError, DomainError, ShapeError

PANEL_ORDER = 32
MIN_QUAD_POINTS = 32


def _as_tuple(value, dim: int, name: str) -> tuple:
    if value is None:
        return None
    if np.isscalar(value):
        return (value,) * dim
    value = tuple(value)
    if len(value) != dim:
        raise ConfigurationError(f"{name} needs {dim} entries, got {len(value)}", key=name)
    return value


@dataclass(frozen=True)
class Domain:
    """Box (0, L_1) x ... x (0, L_dim) with per-axis quadrature node counts.

    ``quad_points=None`` lets :func:`build_basis` pick ``max(4 m, 32)`` nodes
    per axis, where ``m`` is the highest retained mode index on that axis.
    """

    dim: int = 1
    lengths: tuple[float, ...] = (math.pi,)
    quad_points: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ConfigurationError(f"dim must be 1 or 2, got {self.dim}", key="dim")
        lengths = _as_tuple(self.lengths, self.dim, "lengths")
        if any(not (float(x) > 0 and math.isfinite(float(x))) for x in lengths):
            raise ConfigurationError(f"lengths must be positive, got {lengths}", key="lengths")
        object.__setattr__(self, "lengths", tuple(float(x) for x in lengths))
        qp = _as_tuple(self.quad_points, self.dim, "quad_points")
        if qp is not None:
            if any(int(q) < 1 for q in qp):
                raise ConfigurationError("quad_points must be positive", key="quad_points")
            qp = tuple(int(q) for q in qp)
        object.__setattr__(self, "quad_points", qp)

    @classmethod
    def interval(cls, length: float = math.pi, quad_points: int | None = None) -> "Domain":
        return cls(1, (length,), None if quad_points is None else (quad_points,))

    @classmethod
    def rectangle(cls, lx: float = math.pi, ly: float = math.pi, quad_points=None) -> "Domain":
        return cls(2, (lx, ly), quad_points)


def gauss_legendre_composite(n: int, length: float, order: int = PANEL_ORDER):
    """Composite Gauss-Legendre nodes and weights on (0, length) with at least n nodes."""
    order = min(order, n)
    panels = -(-n // order)
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, length, panels + 1)
    half = 0.5 * np.diff(edges)
    nodes = (edges[:-1, None] + half[:, None] * (x[None, :] + 1.0)).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


@dataclass(frozen=True, eq=False)
class Basis:
    """First N Dirichlet eigenpairs of -Laplacian on a box, sorted by eigenvalue."""

    domain: Domain
    N: int
    lambdas: np.ndarray
    mode_indices: tuple[tuple[int, ...], ...]
    axis_nodes: tuple[np.ndarray, ...]
    points: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    modes: np.ndarray = field(repr=False)

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return tuple(len(x) for x in self.axis_nodes)

    @property
    def n_quad(self) -> int:
        return self.weights.shape[0]

    @cached_property
    def weighted_modes(self) -> np.ndarray:
        # (Q, N) matrix: samples @ weighted_modes is the quadrature projection
        return np.ascontiguousarray((self.modes * self.weights[None, :]).T)

    @cached_property
    def _key(self):
        return (self.domain.dim, self.domain.lengths, self.N, self.grid_shape)

    def __eq__(self, other):
        if not isinstance(other, Basis):
            return NotImplemented
        return self is other or self._key == other._key

    def __hash__(self):
        return hash(self._key)

    def eigenfunctions(self, points) -> np.ndarray:
        """Values e_k(x) at arbitrary points, shape (N, P)."""
        pts = np.asarray(points, dtype=float)
        if self.domain.dim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2 or pts.shape[1] != self.domain.dim:
            raise ShapeError(f"points must have shape (P, {self.domain.dim})")
        out = np.ones((self.N, pts.shape[0]))
        idx = np.asarray(self.mode_indices)
        for axis, L in enumerate(self.domain.lengths):
            out *= math.sqrt(2.0 / L) * np.sin(np.outer(idx[:, axis] * math.pi / L, pts[:, axis]))
        return out

    def zeros(self) -> "SpectralField":
        return SpectralField(self, np.zeros(self.N))

    def mode(self, k: int, value: float = 1.0) -> "SpectralField":
        """Field with a single nonzero coefficient at 1-based mode position k."""
        c = np.zeros(self.N)
        c[k - 1] = value
        return SpectralField(self, c)


def build_basis(domain: Domain, N: int) -> Basis:
    """Sorted Dirichlet eigenpairs on the box.

    In 1D on (0, L): lambda_k = (k pi / L)^2 and e_k = sqrt(2/L) sin(k pi x / L).
    In 2D the tensor products are sorted by eigenvalue, ties broken by the
    lexicographic order of the multi-index.
    """
    if int(N) != N or N < 1:
        raise ConfigurationError(f"N must be a positive integer, got {N}", key="N")
    N = int(N)
    if not isinstance(domain, Domain):
        raise ConfigurationError("domain must be a Domain")
    lengths = domain.lengths
    if domain.dim == 1:
        indices = [(k,) for k in range(1, N + 1)]
    else:
        cand = [(j, k) for j in range(1, N + 1) for k in range(1, N + 1)]
        lam = np.array([(j * math.pi / lengths[0]) ** 2 + (k * math.pi / lengths[1]) ** 2 for j, k in cand])
        # round so that analytically equal eigenvalues tie exactly
        keys = np.round(lam, 10)
        order = sorted(range(len(cand)), key=lambda i: (keys[i], cand[i]))
        indices = [cand[i] for i in order[:N]]
    idx = np.asarray(indices)
    lambdas = sum((idx[:, a] * math.pi / lengths[a]) ** 2 for a in range(domain.dim)).astype(float)

    axis_nodes, axis_weights = [], []
    for a in range(domain.dim):
        m = int(idx[:, a].max())
        if domain.quad_points is not None:
            q = domain.quad_points[a]
            if q < 4 * m:
                raise ConfigurationError(
                    f"quad_points[{a}]={q} is below 4 x highest mode index {m}", key="quad_points"
                )
        else:
            q = max(4 * m, MIN_QUAD_POINTS)
        x, w = gauss_legendre_composite(q, lengths[a])
        axis_nodes.append(x)
        axis_weights.append(w)

    if domain.dim == 1:
        points = axis_nodes[0][:, None]
        weights = axis_weights[0]
    else:
        X, Y = np.meshgrid(axis_nodes[0], axis_nodes[1], indexing="ij")
        points = np.column_stack([X.ravel(), Y.ravel()])
        weights = np.outer(axis_weights[0], axis_weights[1]).ravel()

    modes = np.ones((N, points.shape[0]))
    for a, L in enumerate(lengths):
        modes *= math.sqrt(2.0 / L) * np.sin(np.outer(idx[:, a] * math.pi / L, points[:, a]))

    for arr in (lambdas, points, weights, modes):
        arr.setflags(write=False)
    return Basis(
        domain=domain,
        N=N,
        lambdas=lambdas,
        mode_indices=tuple(tuple(int(i) for i in row) for row in indices),
        axis_nodes=tuple(axis_nodes),
        points=points,
        weights=weights,
        modes=modes,
    )


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Coefficients u_k = (u, e_k) of a function in a Dirichlet eigenbasis."""

    basis: Basis
    coeffs: np.ndarray

    def __post_init__(self):
        c = _frozen(self.coeffs)
        if c.shape != (self.basis.N,):
            raise ShapeError(f"expected {self.basis.N} coefficients, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise DomainError("coefficients must be finite")
        object.__setattr__(self, "coeffs", c)

    def __eq__(self, other):
        if not isinstance(other, SpectralField):
            return NotImplemented
        return self.basis == other.basis and np.array_equal(self.coeffs, other.coeffs)

    __hash__ = None

    def _check(self, other: "SpectralField"):
        if self.basis != other.basis:
            raise ShapeError("fields live in different bases")

    def __add__(self, other):
        self._check(other)
        return SpectralField(self.basis, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check(other)
        return SpectralField(self.basis, self.coeffs - other.coeffs)

    def __mul__(self, scalar: float):
        return SpectralField(self.basis, self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(self.basis, -self.coeffs)


@dataclass(frozen=True, eq=False)
class PhaseState:
    """A point (u, u_t) of the energy space."""

    u: SpectralField
    ut: SpectralField

    def __post_init__(self):
        if self.u.basis != self.ut.basis:
            raise ShapeError("u and ut must share one basis")

    @property
    def basis(self) -> Basis:
        return self.u.basis

    @classmethod
    def from_coeffs(cls, basis: Basis, u, ut=None) -> "PhaseState":
        ut = np.zeros(basis.N) if ut is None else ut
        return cls(SpectralField(basis, u), SpectralField(basis, ut))

    @classmethod
    def zero(cls, basis: Basis) -> "PhaseState":
        return cls(basis.zeros(), basis.zeros())

    def __eq__(self, other):
        if not isinstance(other, PhaseState):
            return NotImplemented
        return self.u == other.u and self.ut == other.ut

    __hash__ = None

    def __add__(self, other):
        return PhaseState(self.u + other.u, self.ut + other.ut)

    def __sub__(self, other):
        return PhaseState(self.u - other.u, self.ut - other.ut)

    def __mul__(self, scalar: float):
        return PhaseState(self.u * scalar, self.ut * scalar)

    __rmul__ = __mul__


# -- transforms ---------------------------------------------------------------


def _samples(values, basis: Basis) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    q = basis.n_quad
    if arr.shape[-1:] == (q,):
        return arr
    gs = basis.grid_shape
    if len(gs) > 1 and arr.shape[-len(gs):] == gs:
        return arr.reshape(arr.shape[: -len(gs)] + (q,))
    raise ShapeError(f"samples of shape {arr.shape} do not match the quadrature grid {gs}")


def project_array(values, basis: Basis) -> np.ndarray:
    """Quadrature projection of grid samples (..., Q) to coefficients (..., N)."""
    return _samples(values, basis) @ basis.weighted_modes


def synthesize_array(coeffs, basis: Basis) -> np.ndarray:
    """Grid samples (..., Q) of coefficient arrays (..., N)."""
    return np.asarray(coeffs, dtype=float) @ basis.modes


def project(values, basis: Basis) -> SpectralField:
    """Coefficients (u, e_k) computed by quadrature from samples on the basis grid."""
    return SpectralField(basis, project_array(values, basis))


def evaluate(field: SpectralField, points=None) -> np.ndarray:
    """Pointwise synthesis sum_k u_k e_k(x); defaults to the quadrature grid."""
    if points is None:
        return synthesize_array(field.coeffs, field.basis)
    return field.coeffs @ field.basis.eigenfunctions(points)


# -- norms --------------------------------------------------------------------


def sobolev_norm(field: SpectralField, s: float) -> float:
    """Spectral H^s norm sqrt(sum lambda_k^s u_k^2)."""
    if s < 0:
        raise DomainError(f"s must be nonnegative, got {s}")
    return float(np.sqrt(np.sum(field.basis.lambdas**s * field.coeffs**2)))


def energy_norms(lambdas, U, V, s: float = 0.0) -> np.ndarray:
    """E_s norms of coefficient arrays U, V of shape (..., N)."""
    lam = np.asarray(lambdas)
    w = lam**s
    return np.sqrt(np.sum(w * lam * U**2, axis=-1) + np.sum(w * V**2, axis=-1))


def energy_norm(state: PhaseState, s: float = 0.0) -> float:
    """||(u, v)||_{E_s}^2 = ||u||_{H^{s+1}}^2 + ||v||_{H^s}^2."""
    if not 0.0 <= s <= 1.0:
        raise DomainError(f"s must lie in [0, 1], got {s}")
    return float(energy_norms(state.basis.lambdas, state.u.coeffs, state.ut.coeffs, s))


def lp_space_norm(values, p: float, basis: Basis) -> float | np.ndarray:
    """(int |u|^p dx)^(1/p) by the basis quadrature; batched over leading axes."""
    if p < 1:
        raise DomainError(f"p must be >= 1, got {p}")
    u = np.abs(_samples(values, basis))
    return (u**p @ basis.weights) ** (1.0 / p)


def time_integral(samples, dt: float, axis: int = 0):
    """Composite Simpson integral of uniformly spaced time samples."""
    samples = np.asarray(samples, dtype=float)
    if samples.shape[axis] < 2:
        return np.zeros(np.delete(samples.shape, axis)) if samples.ndim > 1 else 0.0
    return simpson(samples, dx=dt, axis=axis)


def lpt_norm(values_t, q: float, p: float, basis: Basis, dt: float) -> float:
    """(int ||u(t)||_{L^p}^q dt)^(1/q) for samples of shape (n_times, Q) on a uniform time grid."""
    if q < 1 or p < 1:
        raise DomainError(f"p and q must be >= 1, got p={p}, q={q}")
    space = lp_space_norm(values_t, p, basis)
    return float(time_integral(np.asarray(space) ** q, dt)) ** (1.0 / q)


def state_from_functions(basis: Basis, u0, u1=None) -> PhaseState:
    """Galerkin initial data: project callables u0(x), u1(x) onto the basis."""
    pts = basis.points if basis.domain.dim > 1 else basis.points[:, 0]
    def samples(fn):
        if fn is None:
            return np.zeros(basis.n_quad)
        return np.broadcast_to(np.asarray(fn(pts) if basis.domain.dim == 1 else fn(pts[:, 0], pts[:, 1]), dtype=float), (basis.n_quad,))
    return PhaseState(project(samples(u0), basis), project(samples(u1), basis))


def check_same_basis(fields: Sequence[SpectralField]) -> Basis:
    basis = fields[0].basis
    for f in fields[1:]:
        if f.basis != basis:
            raise ShapeError("fields live in different bases")
    return basis

"""Finite approximations of pullback sections and uniform attractors.

A pullback section A(p) is approximated by evolving a fixed ensemble of
initial states from time -T to time 0 under p, which is the same as running
the shifted symbol shift(p, -T) forward on [0, T].  The horizon is accepted
only when the sections at T and 2T agree (one-sided Hausdorff semidistance
below a tolerance).  All set comparisons use the E0 norm.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import BlowUpError, DomainError, HorizonTooShortError, NonAbsorptionError, ShapeError
from .solver import CHUNK_ROWS, SolverConfig, integrate_rows, parallel_map
from .spectral import Basis, PhaseState, energy_norms
from .symbols import Symbol, default_hull_shifts, hull_sample

SAMPLINGS = ("grid", "sphere")


@dataclass(frozen=True)
class EnsembleSpec:
    """Initial states on the E0 sphere of the given radius, spread over the leading modes."""

    count: int = 64
    sampling: str = "grid"
    radius: float = 5.0
    seed: int = 42
    modes: int = 8

    def __post_init__(self):
        if int(self.count) != self.count or self.count < 1:
            raise DomainError("ensemble count must be a positive integer")
        if self.sampling not in SAMPLINGS:
            raise DomainError(f"sampling must be one of {SAMPLINGS}")
        if not self.radius >= 0:
            raise DomainError("radius must be nonnegative")
        if self.modes < 1:
            raise DomainError("modes must be positive")

    def directions(self, dims: int) -> np.ndarray:
        """Unit vectors in R^dims, deterministic given the seed."""
        rng = np.random.default_rng(self.seed)
        if self.sampling == "sphere":
            g = rng.standard_normal((self.count, dims))
            return g / np.linalg.norm(g, axis=1, keepdims=True)
        # lattice {-1, 0, 1}^dims by increasing support size, shuffled within each size
        out: list[np.ndarray] = []
        for size in range(1, dims + 1):
            level = []
            for support in itertools.combinations(range(dims), size):
                for signs in itertools.product((1.0, -1.0), repeat=size):
                    v = np.zeros(dims)
                    v[list(support)] = signs
                    level.append(v / math.sqrt(size))
            order = rng.permutation(len(level))
            out.extend(level[i] for i in order[: self.count - len(out)])
            if len(out) >= self.count:
                break
        if len(out) < self.count:  # lattice exhausted in low dimension
            g = rng.standard_normal((self.count - len(out), dims))
            out.extend(g / np.linalg.norm(g, axis=1, keepdims=True))
        return np.array(out[: self.count])

    def arrays(self, basis: Basis) -> tuple[np.ndarray, np.ndarray]:
        """Coefficient arrays (count, N) of u and u_t for the ensemble."""
        m = min(self.modes, basis.N)
        x = self.directions(2 * m) * self.radius
        U = np.zeros((self.count, basis.N))
        V = np.zeros((self.count, basis.N))
        U[:, :m] = x[:, :m] / np.sqrt(basis.lambdas[:m])
        V[:, :m] = x[:, m:]
        return U, V

    def states(self, basis: Basis) -> list[PhaseState]:
        U, V = self.arrays(basis)
        return [PhaseState.from_coeffs(basis, u, v) for u, v in zip(U, V)]


@dataclass(eq=False)
class AttractorApprox:
    """Finite set of states approximating a section or a uniform attractor."""

    U: np.ndarray
    V: np.ndarray
    basis: Basis
    symbols: list[Symbol]
    membership: np.ndarray
    epsilon: float | None
    T: float
    dt: float
    seed: int | None
    cauchy_gap: float = 0.0
    solver_tol: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.U = np.array(self.U, dtype=float, ndmin=2)
        self.V = np.array(self.V, dtype=float, ndmin=2)
        self.membership = np.asarray(self.membership, dtype=int)
        if self.U.shape != self.V.shape or self.U.shape[1] != self.basis.N:
            raise ShapeError("state arrays do not match the basis")

    @classmethod
    def from_states(cls, states: Sequence[PhaseState], **kw) -> "AttractorApprox":
        if not states:
            raise DomainError("empty state list")
        basis = states[0].basis
        U = np.array([s.u.coeffs for s in states])
        V = np.array([s.ut.coeffs for s in states])
        kw.setdefault("symbols", [])
        kw.setdefault("membership", np.zeros(len(states), dtype=int))
        kw.setdefault("epsilon", None)
        kw.setdefault("T", 0.0)
        kw.setdefault("dt", 0.0)
        kw.setdefault("seed", None)
        return cls(U, V, basis, **kw)

    def __len__(self):
        return self.U.shape[0]

    @property
    def N(self) -> int:
        return self.basis.N

    @property
    def states(self) -> list[PhaseState]:
        return [PhaseState.from_coeffs(self.basis, u, v) for u, v in zip(self.U, self.V)]

    @property
    def tolerance(self) -> float:
        """Set tolerance max(Cauchy gap, 10 x solver tolerance)."""
        return max(self.cauchy_gap, 10.0 * self.solver_tol)

    def norms(self, s: float = 0.0) -> np.ndarray:
        return energy_norms(self.basis.lambdas, self.U, self.V, s)

    def section(self, k: int) -> "AttractorApprox":
        """States that came from the k-th symbol."""
        mask = self.membership == k
        gap = self.meta.get("section_gaps", [self.cauchy_gap] * (k + 1))[k]
        return replace(
            self,
            U=self.U[mask],
            V=self.V[mask],
            symbols=[self.symbols[k]] if self.symbols else [],
            membership=np.zeros(int(mask.sum()), dtype=int),
            cauchy_gap=gap,
            meta={},
        )

    def metadata(self) -> dict:
        return {
            "count": len(self),
            "N": self.N,
            "domain": {"dim": self.basis.domain.dim, "lengths": list(self.basis.domain.lengths)},
            "epsilon": self.epsilon,
            "T": self.T,
            "dt": self.dt,
            "seed": self.seed,
            "cauchy_gap": self.cauchy_gap,
            "solver_tol": self.solver_tol,
            "tolerance": self.tolerance,
            "symbols": [s.describe() for s in self.symbols],
            **{k: v for k, v in self.meta.items()},
        }

    def save(self, stem, n_coeffs: int = 16) -> tuple[Path, Path]:
        """Write ``stem.csv`` (one row per state) and ``stem.json`` (metadata)."""
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        k = min(n_coeffs, self.N)
        e0, e1 = self.norms(0.0), self.norms(1.0)
        csv_path, json_path = stem.with_suffix(".csv"), stem.with_suffix(".json")
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "section"] + [f"u_{i+1}" for i in range(k)] + [f"ut_{i+1}" for i in range(k)] + ["E0", "E1"])
            for i in range(len(self)):
                row = [i, int(self.membership[i])] + [repr(float(x)) for x in self.U[i, :k]]
                row += [repr(float(x)) for x in self.V[i, :k]] + [repr(float(e0[i])), repr(float(e1[i]))]
                w.writerow(row)
        with open(json_path, "w") as fh:
            json.dump(_plain(self.metadata()), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return csv_path, json_path


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# -- set distance ---------------------------------------------------------------


def _points(A) -> np.ndarray:
    """Rows scaled so that Euclidean distance equals the E0 distance."""
    if isinstance(A, AttractorApprox):
        U, V, lam = A.U, A.V, A.basis.lambdas
    else:
        states = list(A)
        if not states:
            raise DomainError("empty set")
        lam = states[0].basis.lambdas
        U = np.array([s.u.coeffs for s in states])
        V = np.array([s.ut.coeffs for s in states])
    if U.shape[0] == 0:
        raise DomainError("empty set")
    return np.hstack([np.sqrt(lam) * U, V])


def hausdorff_semidist(A, B) -> float:
    """sup over a in A of the E0 distance from a to B (not symmetric)."""
    if isinstance(A, AttractorApprox) and isinstance(B, AttractorApprox) and A.basis != B.basis:
        raise ShapeError("sets live in different bases")
    PA, PB = _points(A), _points(B)
    if PA.shape[1] != PB.shape[1]:
        raise ShapeError("sets live in different bases")
    return float(np.max(np.min(cdist(PA, PB), axis=1)))


# -- batched evolution ------------------------------------------------------------


def _evolve(U0, V0, symbols: Sequence[Symbol], span: float, basis: Basis, cfg: SolverConfig, backward: bool = False):
    """Final (U, V) after time span for rows with per-row symbols; rows batched by shared f0 and b."""
    U0 = np.asarray(U0, dtype=float)
    V0 = np.asarray(V0, dtype=float)
    if span == 0:
        return U0.copy(), V0.copy()
    big = replace(cfg, record_every=int(math.ceil(abs(span) / cfg.dt)) + 1)
    groups: list[tuple[Symbol, list[int]]] = []
    for r, s in enumerate(symbols):
        for ref, rows in groups:
            if ref.f0 == s.f0 and (ref.eps == 0 or s.eps == 0 or ref.b == s.b):
                rows.append(r)
                break
        else:
            groups.append((s, [r]))
    U = np.empty_like(U0)
    V = np.empty_like(V0)
    chunks = [np.array(rows[i : i + CHUNK_ROWS]) for _, rows in groups for i in range(0, len(rows), CHUNK_ROWS)]

    def run(idx):
        *_, Uf, Vf = integrate_rows(U0[idx], V0[idx], 0.0, -span if backward else span,
                                    [symbols[r] for r in idx], basis, big, backward=backward)
        return Uf, Vf

    # chunk boundaries do not depend on the worker count, so results are identical for any count
    for idx, (Uf, Vf) in zip(chunks, parallel_map(run, chunks)):
        U[idx], V[idx] = Uf, Vf
    return U, V


def _check_absorbed(U, V, basis: Basis, radius: float | None, offset: int = 0):
    if radius is None:
        return
    n = energy_norms(basis.lambdas, U, V)
    bad = np.nonzero(n > radius)[0]
    if bad.size:
        raise NonAbsorptionError(int(bad[0]) + offset, f"final norm {n[bad[0]]:.4g} exceeds radius {radius:.4g}")


def pullback_sections(
    symbols: Sequence[Symbol],
    ensemble: EnsembleSpec,
    T: float,
    cfg: SolverConfig,
    basis: Basis,
    cauchy_tol: float | None = 1e-3,
    radius: float | None = None,
) -> list[AttractorApprox]:
    """Sections for several symbols computed in one batched run per horizon."""
    if not T > 0:
        raise DomainError("horizon T must be positive")
    symbols = list(symbols)
    U0, V0 = ensemble.arrays(basis)
    M, S = U0.shape[0], len(symbols)
    radius = ensemble.radius if radius is None else radius
    Ut, Vt = np.tile(U0, (S, 1)), np.tile(V0, (S, 1))
    rows_T = [s.shift(-T) for s in symbols for _ in range(M)]
    rows_2T = [s.shift(-2 * T) for s in symbols for _ in range(M)]
    UT, VT = _evolve(Ut, Vt, rows_T, T, basis, cfg)
    U2, V2 = _evolve(Ut, Vt, rows_2T, 2 * T, basis, cfg)
    _check_absorbed(UT, VT, basis, radius)
    out = []
    for k, s in enumerate(symbols):
        sl = slice(k * M, (k + 1) * M)
        a = AttractorApprox(UT[sl], VT[sl], basis, [s], np.zeros(M, dtype=int), s.eps, T, cfg.dt, ensemble.seed,
                            solver_tol=cfg.tolerance)
        b = AttractorApprox(U2[sl], V2[sl], basis, [s], np.zeros(M, dtype=int), s.eps, 2 * T, cfg.dt, ensemble.seed)
        a.cauchy_gap = hausdorff_semidist(a, b)
        a.meta["cauchy_gap_reverse"] = hausdorff_semidist(b, a)
        if cauchy_tol is not None and a.cauchy_gap > cauchy_tol:
            raise HorizonTooShortError(a.cauchy_gap, cauchy_tol)
        out.append(a)
    return out


def pullback_section(
    p: Symbol,
    ensemble: EnsembleSpec,
    T: float,
    cfg: SolverConfig,
    basis: Basis,
    cauchy_tol: float | None = 1e-3,
    radius: float | None = None,
) -> AttractorApprox:
    """Ensemble states at time 0 after starting at time -T under p; Cauchy-checked against -2T."""
    return pullback_sections([p], ensemble, T, cfg, basis, cauchy_tol, radius)[0]


def union(sections: Sequence[AttractorApprox], epsilon: float | None = None) -> AttractorApprox:
    """Union of sections with per-state membership labels."""
    if not sections:
        raise DomainError("no sections")
    first = sections[0]
    gaps = [s.cauchy_gap for s in sections]
    return AttractorApprox(
        np.vstack([s.U for s in sections]),
        np.vstack([s.V for s in sections]),
        first.basis,
        [s.symbols[0] for s in sections],
        np.concatenate([np.full(len(s), k) for k, s in enumerate(sections)]),
        first.epsilon if epsilon is None else epsilon,
        first.T,
        first.dt,
        first.seed,
        cauchy_gap=max(gaps),
        solver_tol=max(s.solver_tol for s in sections),
        meta={"section_gaps": gaps},
    )


def uniform_attractor(
    hull: Sequence[Symbol],
    ensemble: EnsembleSpec,
    T: float,
    cfg: SolverConfig,
    basis: Basis,
    cauchy_tol: float | None = 1e-3,
    radius: float | None = None,
) -> AttractorApprox:
    """Union of pullback sections over a hull sample.

    An autonomous hull (every member with eps = 0) is a single point, so only
    one section is computed.
    """
    hull = list(hull)
    if not hull:
        raise DomainError("empty hull sample")
    if all(s.is_autonomous for s in hull):
        hull = hull[:1]
    return union(pullback_sections(hull, ensemble, T, cfg, basis, cauchy_tol, radius))


def hull_for(p: Symbol, count: int | None = None) -> list[Symbol]:
    return hull_sample(p, default_hull_shifts(p, count))


# -- invariance -------------------------------------------------------------------


@dataclass
class InvarianceResult:
    residual: float
    forward: float
    backward: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.residual <= self.tolerance


def evolve_set(A: AttractorApprox, t: float, p: Symbol, cfg: SolverConfig) -> AttractorApprox:
    """Image of every state under the solution operator of p over time t."""
    U, V = _evolve(A.U, A.V, [p] * len(A), t, A.basis, cfg)
    return replace(A, U=U, V=V, meta=dict(A.meta))


def invariance_check(p: Symbol, section: AttractorApprox, t: float, cfg: SolverConfig,
                     shifted: AttractorApprox) -> InvarianceResult:
    """Two-sided distance between phi(t, p) A(p) and A(shift(p, t))."""
    moved = evolve_set(section, t, p, cfg)
    fwd = hausdorff_semidist(moved, shifted)
    bwd = hausdorff_semidist(shifted, moved)
    tol = section.cauchy_gap + shifted.cauchy_gap + 10.0 * cfg.tolerance
    return InvarianceResult(max(fwd, bwd), fwd, bwd, tol)


# -- lifted invariance ---------------------------------------------------------------


@dataclass
class ProbeResult:
    found: bool
    landing_error: float
    sup_norm: float
    kind: str
    symbol_index: int
    tolerance: float
    radius: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _orbit_sup(U0, V0, symbols, span, basis, cfg, backward):
    """Largest E0 norm along each row's orbit plus the end state; rows that blow up get +inf."""
    rec = max(1, int(round(0.1 / cfg.dt)))
    step = replace(cfg, record_every=rec)
    sups = np.full(U0.shape[0], np.inf)
    ends = np.full(U0.shape, np.nan), np.full(V0.shape, np.nan)
    for r in range(U0.shape[0]):
        try:
            _, Ur, Vr, Uf, Vf = integrate_rows(U0[r:r + 1], V0[r:r + 1], 0.0, -span if backward else span,
                                               [symbols[r]], basis, step, backward=backward)
        except BlowUpError:
            continue
        n = energy_norms(basis.lambdas, Ur[:, 0], Vr[:, 0])
        sups[r] = max(float(np.max(n)), float(energy_norms(basis.lambdas, Uf[0], Vf[0])))
        ends[0][r], ends[1][r] = Uf[0], Vf[0]
    return sups, ends


def lifted_invariance_probe(
    x: PhaseState,
    hull: Sequence[Symbol],
    T_back: float,
    cfg: SolverConfig,
    ensemble: EnsembleSpec | None = None,
    radius: float | None = None,
    tolerance: float = 1e-3,
) -> ProbeResult:
    """Look for a symbol and an orbit on [-T_back, 0] that ends at x and stays in the absorbing ball.

    Candidates are the backward orbit of x under each hull symbol (exact
    landing) and the forward orbits of ensemble members started at -T_back.
    The best admissible candidate is the one with the smallest landing error.
    """
    basis = x.basis
    hull = list(hull)
    ensemble = EnsembleSpec() if ensemble is None else ensemble
    radius = ensemble.radius if radius is None else radius
    ux, vx = x.u.coeffs, x.ut.coeffs
    best = ProbeResult(False, math.inf, math.inf, "none", -1, tolerance, radius)

    bcfg = replace(cfg, blowup_ceiling=min(cfg.blowup_ceiling, 10.0 * max(radius, 1e-300)))
    sups, _ = _orbit_sup(np.tile(ux, (len(hull), 1)), np.tile(vx, (len(hull), 1)), hull, T_back, basis, bcfg, True)
    admissible = [k for k, s in enumerate(sups) if s <= radius]
    if admissible:
        k = min(admissible, key=lambda i: sups[i])
        return ProbeResult(True, 0.0, float(sups[k]), "backward", k, tolerance, radius)

    U0, V0 = ensemble.arrays(basis)
    M = U0.shape[0]
    syms = [h.shift(-T_back) for h in hull for _ in range(M)]
    U, V = _evolve(np.tile(U0, (len(hull), 1)), np.tile(V0, (len(hull), 1)), syms, T_back, basis, cfg)
    err = energy_norms(basis.lambdas, U - ux, V - vx)
    start = energy_norms(basis.lambdas, U0, V0)
    order = np.argsort(err, kind="stable")
    for r in order[:8]:
        sup, _ = _orbit_sup(np.tile(U0[r % M], (1, 1)), np.tile(V0[r % M], (1, 1)), [syms[r]], T_back, basis, cfg, False)
        s = max(float(sup[0]), float(start[r % M]))
        if s <= radius and err[r] < best.landing_error:
            best = ProbeResult(bool(err[r] <= tolerance), float(err[r]), s, "pullback", int(r // M), tolerance, radius)
    return best


# -- bounds and semicontinuity ---------------------------------------------------------


def e1_bound(A: AttractorApprox) -> float:
    if len(A) == 0:
        raise DomainError("empty set")
    return float(np.max(A.norms(1.0)))


@dataclass
class SemicontinuityRow:
    eps: float
    dist: float
    cauchy_gap: float
    e1: float


@dataclass
class SemicontinuityResult:
    rows: list[SemicontinuityRow]
    attractors: dict

    def table(self) -> list[dict]:
        return [dict(r.__dict__) for r in self.rows]

    @property
    def decreasing(self) -> bool:
        d = [r.dist for r in self.rows if r.eps > 0]
        return all(b < a for a, b in zip(d, d[1:]))


def semicontinuity_study(
    family: Callable[[float], Symbol],
    eps_grid: Sequence[float],
    ensemble: EnsembleSpec,
    T: float,
    cfg: SolverConfig,
    basis: Basis,
    hull_count: int | None = 4,
    cauchy_tol: float | None = 1e-3,
    radius: float | None = None,
) -> SemicontinuityResult:
    """dist(A_eps, A_0) along a grid of eps values; every section is computed in one batch."""
    eps_grid = [float(e) for e in eps_grid]
    if 0.0 not in eps_grid:
        raise DomainError("eps grid must contain 0")
    hulls = {}
    for e in eps_grid:
        p = family(e)
        hulls[e] = [p] if p.is_autonomous else hull_for(p, hull_count)
    flat = [s for e in eps_grid for s in hulls[e]]
    sections = pullback_sections(flat, ensemble, T, cfg, basis, cauchy_tol, radius)
    atts, k = {}, 0
    for e in eps_grid:
        n = len(hulls[e])
        atts[e] = union(sections[k : k + n], epsilon=e)
        k += n
    base = atts[0.0]
    rows = [SemicontinuityRow(e, hausdorff_semidist(atts[e], base), atts[e].cauchy_gap, e1_bound(atts[e])) for e in eps_grid]
    return SemicontinuityResult(rows, atts)

"""Command-line experiment driver.

    dampwave run CONFIG [--out-dir DIR] [--seed N] [--threads N]
    dampwave replay MANIFEST [--seed N] [--threads N]
    dampwave list-experiments

A run writes ``config.ini`` (verbatim input), ``manifest.json`` (config hash,
seed, versions, file hashes), ``report.json`` (every check with its fitted
constants and pass flag) and CSV series.  The exit status is nonzero iff a
check fails.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import platform
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .attractor import (
    EnsembleSpec,
    e1_bound,
    hausdorff_semidist,
    hull_for,
    invariance_check,
    pullback_sections,
    semicontinuity_study,
    union,
)
from .config import EXPERIMENTS, ExperimentConfig, parse_config
from .diagnostics import (
    CheckReport,
    _jsonable,
    absorbing_entry,
    dissipation_residual,
    energy_breakdown,
    fit_absorbing_radius,
    interpolation_check,
    linear_decay_fit,
    required_strichartz_constant,
    strichartz_windows,
)
from .errors import ConfigurationError, DampwaveError, ReproducibilityError
from .solver import SolverConfig, Trajectory, integrate, integrate_ensemble, set_workers, solve_linear
from .spectral import Basis, Domain, PhaseState, build_basis
from .splitting import ladder_norms, split
from .symbols import Symbol, SymbolFamily, c1_metric

ENV_OUT_DIR = "DAMPWAVE_OUT_DIR"
SERIES_COEFFS = 16

EXPERIMENT_HELP = {
    "simulate": "integrate the Galerkin system from the configured data for every (eps, phase)",
    "diagnose": "ensemble runs: absorbing ball, dissipation fit, space-time norms, linear decay",
    "split": "free/forced splitting of one trajectory with the regularity ladder",
    "attractor": "uniform attractors over a hull sample: union structure, invariance, E1 bound",
    "semicontinuity": "distance of each eps-attractor to the eps = 0 attractor",
    "metric": "pairwise C(R; C^1(R)) distances between the configured symbols",
}


# -- building blocks -----------------------------------------------------------------


def make_basis(cfg: ExperimentConfig) -> Basis:
    d = cfg.domain
    domain = Domain(d.dim, tuple(d.lengths))
    basis = build_basis(domain, d.N)
    if d.quad_oversample != 4:
        idx = np.asarray(basis.mode_indices)
        q = tuple(max(d.quad_oversample * int(idx[:, a].max()), 32) for a in range(d.dim))
        basis = build_basis(Domain(d.dim, tuple(d.lengths), q), d.N)
    return basis


def make_family(cfg: ExperimentConfig):
    f = cfg.family
    if f.name == "zero":
        return lambda eps: Symbol.zero()
    if f.name == "constant":
        return lambda eps: Symbol.constant(f.constant)
    return SymbolFamily(kappa=f.kappa, g_coeffs=tuple(f.g), a=f.a)


def make_symbols(cfg: ExperimentConfig) -> list[Symbol]:
    """One symbol per (eps, phase); autonomous symbols appear once."""
    fam = make_family(cfg)
    out: list[Symbol] = []
    for e in cfg.family.eps:
        base = fam(e)
        if base.is_autonomous:
            if base not in out:
                out.append(base)
            continue
        out.extend(base.shift(ph) for ph in cfg.family.phases)
    return out


def solver_config(cfg: ExperimentConfig) -> SolverConfig:
    s = cfg.solver
    return SolverConfig(dt=s.dt, method=s.method, record_every=s.record_every, blowup_ceiling=s.blowup_ceiling)


def ensemble_spec(cfg: ExperimentConfig) -> EnsembleSpec:
    e = cfg.experiment
    return EnsembleSpec(e.ensemble_count, e.ensemble_sampling, e.ensemble_radius, e.seed, e.ensemble_modes)


def initial_state(cfg: ExperimentConfig, basis: Basis) -> PhaseState:
    u = np.zeros(basis.N)
    v = np.zeros(basis.N)
    u[: len(cfg.experiment.u0)] = cfg.experiment.u0
    v[: len(cfg.experiment.u1)] = cfg.experiment.u1
    return PhaseState.from_coeffs(basis, u, v)


# -- output --------------------------------------------------------------------------


def _num(x) -> str:
    return repr(float(x))


def series_rows(traj: Trajectory, p: Symbol | None):
    eb = energy_breakdown(traj, p)
    k = min(SERIES_COEFFS, traj.basis.N)
    pad = [0.0] * (SERIES_COEFFS - k)
    e0, e1 = traj.energy_norms(0.0), traj.energy_norms(1.0)
    header = (
        ["time"] + [f"u_{i+1}" for i in range(SERIES_COEFFS)] + [f"ut_{i+1}" for i in range(SERIES_COEFFS)]
        + ["E0", "E1", "I", "I1", "I2", "I3", "I4", "I5"]
    )
    rows = []
    for i, t in enumerate(traj.times):
        row = [t] + list(traj.U[i, :k]) + pad + list(traj.V[i, :k]) + pad
        row += [e0[i], e1[i], eb.I[i], eb.I1[i], eb.I2[i], eb.I3[i], eb.I4[i], eb.I5[i]]
        rows.append([_num(x) for x in row])
    return header, rows


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=",", lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_table(path: Path, table: list[dict]) -> None:
    if not table:
        write_csv(path, [], [])
        return
    header = list(table[0])
    rows = [[_num(r[k]) if isinstance(r[k], (int, float, np.floating)) and not isinstance(r[k], bool) else str(r[k])
             for k in header] for r in table]
    write_csv(path, header, rows)


class ExperimentError(RuntimeError):
    """A module error surfaced with the experiment that raised it."""

    def __init__(self, experiment: str, cause: Exception):
        super().__init__(f"experiment {experiment!r} failed: {type(cause).__name__}: {cause}")
        self.experiment = experiment
        self.cause = cause


@dataclass
class Outcome:
    checks: list[CheckReport]
    tables: dict
    files: list[str]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


# -- experiments ---------------------------------------------------------------------


def run_simulate(cfg: ExperimentConfig, out: Path) -> Outcome:
    basis, scfg = make_basis(cfg), solver_config(cfg)
    x0 = initial_state(cfg, basis)
    checks, files, finals = [], [], []
    for i, p in enumerate(make_symbols(cfg)):
        tr = integrate(x0, 0.0, cfg.solver.horizon, p, scfg)
        header, rows = series_rows(tr, p)
        name = f"series_{i}.csv"
        write_csv(out / name, header, rows)
        files.append(name)
        eb = energy_breakdown(tr, p)
        parts = eb.I1 + eb.I2 + eb.I3 + eb.I4 + eb.I5
        checks.append(CheckReport("energy_additivity", {"run": i}, {}, float(np.max(np.abs(eb.I - parts))),
                                  bool(np.max(np.abs(eb.I - parts)) <= 1e-10)))
        finals.append({"run": i, "eps": p.eps, "phase": float(p.phase), "final_E0": float(tr.energy_norms(0.0)[-1])})
    return Outcome(checks, {"runs": finals}, files)


def run_diagnose(cfg: ExperimentConfig, out: Path) -> Outcome:
    basis, scfg = make_basis(cfg), solver_config(cfg)
    ens = ensemble_spec(cfg)
    states = ens.states(basis)
    symbols = make_symbols(cfg)
    T = cfg.solver.horizon
    initials = [x for _ in symbols for x in states]
    per_row = [p for p in symbols for _ in states]
    trajs = integrate_ensemble(initials, 0.0, T, per_row, scfg)
    checks = []

    R0 = fit_absorbing_radius([tr.energy_norms(0.0) for tr in trajs])
    entry = absorbing_entry(trajs, R0, groups=[k for k in range(len(symbols)) for _ in states])
    checks.append(entry.report())
    diss = dissipation_residual(trajs)
    checks.append(diss.report())

    hs = sorted(cfg.experiment.strichartz_h)
    starts = np.arange(0.0, T - hs[-1] + 1e-9, 0.5) if T > hs[-1] else np.array([0.0])
    req = [required_strichartz_constant(trajs, h, starts) for h in hs]
    mono = all(b >= a for a, b in zip(req, req[1:]))
    checks.append(CheckReport("strichartz_required_constant", {"h": hs}, {"C_h": req}, 0.0, mono))
    sups, worst_slack = [], math.inf
    for h in hs:
        if h > T:
            continue
        sups.append(max(float(np.max(strichartz_windows(tr, h)[1])) for tr in trajs))
        for tr in trajs:
            for s in starts:
                lhs, rhs = interpolation_check(tr, s + h, s)
                worst_slack = min(worst_slack, rhs * (1 + 1e-6) - lhs)
    checks.append(CheckReport("strichartz_windows", {"h": hs}, {"sup": sups}, 0.0, all(math.isfinite(v) for v in sups)))
    checks.append(CheckReport("interpolation", {"windows": len(starts)}, {}, float(worst_slack), worst_slack >= 0))

    free = solve_linear(states[0], None, 0.0, T, scfg)
    fit = linear_decay_fit(free)
    checks.append(fit.report())

    table = [{"run": k, "eps": p.eps, "phase": float(p.phase), "max_entry": m}
             for k, (p, m) in enumerate(zip(symbols, entry.per_symbol_max))]
    write_table(out / "entry_times.csv", table)
    return Outcome(checks, {"absorbing_radius": R0, "entry": table}, ["entry_times.csv"])


def run_split(cfg: ExperimentConfig, out: Path) -> Outcome:
    basis, scfg = make_basis(cfg), solver_config(cfg)
    p = make_symbols(cfg)[0]
    tr = integrate(initial_state(cfg, basis), 0.0, cfg.solver.horizon, p, scfg)
    res = split(tr, p, alpha1=cfg.experiment.alpha1)
    rows = ladder_norms(res)
    checks = [
        CheckReport("split_consistency", {"tolerance": res.tolerance}, {}, res.consistency, res.consistent),
        CheckReport("v_decay", {"ladder": res.ladder}, {"rates": [r["v_rate"] for r in rows]}, 0.0,
                    all(r["v_rate"] is not None and r["v_rate"] >= 0.4 for r in rows)),
        CheckReport("w_bounded", {"ladder": res.ladder}, {"w_sup": [r["w_sup"] for r in rows]},
                    max(r["w_growth_slope"] for r in rows), not any(r["w_flagged"] for r in rows)),
    ]
    write_table(out / "ladder.csv", rows)
    for name, t in (("series_u.csv", tr), ("series_v.csv", res.v_traj), ("series_w.csv", res.w_traj)):
        write_csv(out / name, *series_rows(t, p if name == "series_u.csv" else None))
    return Outcome(checks, {"ladder": rows}, ["ladder.csv", "series_u.csv", "series_v.csv", "series_w.csv"])


def run_attractor(cfg: ExperimentConfig, out: Path) -> Outcome:
    basis, scfg = make_basis(cfg), solver_config(cfg)
    ens, T, e = ensemble_spec(cfg), cfg.solver.horizon, cfg.experiment
    fam = make_family(cfg)
    checks, files, e1s, table = [], [], [], []
    for i, eps in enumerate(cfg.family.eps):
        p = fam(eps).shift(cfg.family.phases[0])
        hull = [p] if p.is_autonomous else hull_for(p, e.hull_count)
        sections = pullback_sections(hull, ens, T, scfg, basis, e.cauchy_tol)
        att = union(sections, epsilon=eps)
        stem = f"attractor_{i}"
        att.save(out / stem)
        files += [stem + ".csv", stem + ".json"]
        worst_union = max(hausdorff_semidist(s, att) for s in sections)
        checks.append(CheckReport("union_structure", {"eps": eps}, {}, worst_union, worst_union <= att.tolerance))
        for t in e.invariance_t:
            shifted = pullback_sections([s.shift(t) for s in hull], ens, T, scfg, basis, e.cauchy_tol)
            for k, (sec, sh) in enumerate(zip(sections, shifted)):
                res = invariance_check(hull[k], sec, t, scfg, sh)
                ok = res.residual <= 5.0 * sec.cauchy_gap
                checks.append(CheckReport("invariance", {"eps": eps, "t": t, "section": k},
                                          {"cauchy_gap": sec.cauchy_gap}, res.residual, ok))
        e1s.append(e1_bound(att))
        table.append({"eps": eps, "sections": len(sections), "states": len(att), "cauchy_gap": att.cauchy_gap,
                      "e1_bound": e1s[-1]})
    ratio = max(e1s) / min(e1s) if min(e1s) > 0 else (1.0 if max(e1s) == 0 else math.inf)
    checks.append(CheckReport("e1_bound_ratio", {"eps": list(cfg.family.eps)}, {"e1": e1s}, ratio, ratio < 3.0))
    write_table(out / "attractors.csv", table)
    return Outcome(checks, {"attractors": table}, files + ["attractors.csv"])


def run_semicontinuity(cfg: ExperimentConfig, out: Path) -> Outcome:
    basis, scfg = make_basis(cfg), solver_config(cfg)
    e = cfg.experiment
    grid = sorted(cfg.family.eps, reverse=True)
    res = semicontinuity_study(make_family(cfg), grid, ensemble_spec(cfg), cfg.solver.horizon, scfg, basis,
                               hull_count=e.hull_count, cauchy_tol=e.cauchy_tol)
    table = res.table()
    positive = [r for r in res.rows if r.eps > 0]
    last = positive[-1] if positive else res.rows[-1]
    checks = [
        CheckReport("semicontinuity_trend", {"eps": grid}, {"dist": [r.dist for r in res.rows]}, 0.0,
                    res.decreasing or all(r.dist == 0.0 for r in positive)),
        CheckReport("semicontinuity_floor", {"eps": last.eps}, {"cauchy_gap": last.cauchy_gap}, last.dist,
                    last.dist <= 2.0 * last.cauchy_gap),
    ]
    write_table(out / "semicontinuity.csv", table)
    return Outcome(checks, {"semicontinuity": table}, ["semicontinuity.csv"])


def run_metric(cfg: ExperimentConfig, out: Path) -> Outcome:
    e = cfg.experiment
    fam = make_family(cfg)
    symbols = [fam(eps).shift(ph) for eps in cfg.family.eps for ph in cfg.family.phases]
    n = len(symbols)
    D = np.zeros((n, n))
    U = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            r = c1_metric(symbols[i], symbols[j], i_max=e.metric_i_max, grid=e.metric_grid)
            D[i, j], U[i, j] = r.value, r.uncertainty
    unc = float(np.max(U)) if n else 0.0
    diag = float(np.max(np.abs(np.diag(D)))) if n else 0.0
    asym = float(np.max(np.abs(D - D.T))) if n else 0.0
    tri = 0.0
    for i in range(n):
        for j in range(n):
            for k in range(n):
                tri = max(tri, D[i, k] - D[i, j] - D[j, k])
    checks = [
        CheckReport("metric_identity", {}, {}, diag, diag == 0.0),
        CheckReport("metric_symmetry", {}, {}, asym, asym <= 1e-12),
        CheckReport("metric_triangle", {"uncertainty": unc}, {}, tri, tri <= unc),
    ]
    table = [{"i": i, "j": j, "distance": D[i, j], "uncertainty": U[i, j]} for i in range(n) for j in range(n)]
    write_table(out / "metric.csv", table)
    return Outcome(checks, {"distances": D.tolist()}, ["metric.csv"])


RUNNERS = {
    "simulate": run_simulate,
    "diagnose": run_diagnose,
    "split": run_split,
    "attractor": run_attractor,
    "semicontinuity": run_semicontinuity,
    "metric": run_metric,
}
assert tuple(RUNNERS) == EXPERIMENTS


# -- run / replay ------------------------------------------------------------------------


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def versions() -> dict:
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "dampwave": __version__}


def run(config_text: str, out_dir: Path, seed: int | None = None) -> int:
    """Execute one experiment; returns 0 when every check passes, 1 otherwise."""
    cfg = parse_config(config_text)
    if seed is not None:
        cfg = cfg.with_seed(seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.ini").write_text(config_text)
    kind = cfg.experiment.kind
    try:
        outcome = RUNNERS[kind](cfg, out_dir)
    except DampwaveError as exc:
        raise ExperimentError(kind, exc) from exc
    report = {
        "experiment": kind,
        "seed": cfg.experiment.seed,
        "passed": outcome.passed,
        "checks": [c.to_dict() for c in outcome.checks],
        "tables": _jsonable(outcome.tables),
    }
    with open(out_dir / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    files = sorted(set(outcome.files) | {"report.json"})
    manifest = {
        "experiment": kind,
        "seed": cfg.experiment.seed,
        "config_file": "config.ini",
        "config_sha256": sha256_bytes(config_text.encode()),
        "versions": versions(),
        "files": {name: sha256_bytes((out_dir / name).read_bytes()) for name in files},
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0 if outcome.passed else 1


def _first_divergence(a: bytes, b: bytes) -> str:
    la, lb = a.decode().splitlines(), b.decode().splitlines()
    for n, (x, y) in enumerate(zip(la, lb), start=1):
        if x != y:
            fa, fb = x.split(","), y.split(",")
            for k, (p, q) in enumerate(zip(fa, fb)):
                if p != q:
                    return f"line {n}, field {k}: {p.strip()!r} != {q.strip()!r}"
            return f"line {n}: {x!r} != {y!r}"
    return f"length differs ({len(la)} vs {len(lb)} lines)"


@dataclass
class ReplayResult:
    status: str  # "identical" or "different-run"
    message: str


def replay(manifest_path: Path, seed: int | None = None, work_dir: Path | None = None) -> ReplayResult:
    """Re-run the experiment of a manifest and compare every emitted file byte for byte."""
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    config_path = manifest_path.parent / manifest["config_file"]
    text = config_path.read_text()
    if sha256_bytes(text.encode()) != manifest["config_sha256"]:
        raise ReproducibilityError(f"config hash mismatch: {config_path} differs from the manifest; replay rejected")
    if seed is not None and int(seed) != int(manifest["seed"]):
        return ReplayResult("different-run", f"seed {seed} differs from recorded seed {manifest['seed']}; not compared")
    cfg_seed = parse_config(text).experiment.seed
    override = None if int(manifest["seed"]) == cfg_seed else int(manifest["seed"])
    with tempfile.TemporaryDirectory(dir=work_dir) as tmp:
        tmp = Path(tmp)
        run(text, tmp, override)
        for name, digest in sorted(manifest["files"].items()):
            new = (tmp / name).read_bytes() if (tmp / name).exists() else b""
            if sha256_bytes(new) != digest:
                old_path = manifest_path.parent / name
                old = old_path.read_bytes() if old_path.exists() else b""
                where = _first_divergence(old, new) if old else "original file missing"
                raise ReproducibilityError(f"{name} diverged at {where}")
    return ReplayResult("identical", f"{len(manifest['files'])} files reproduced bit for bit")


# -- argparse ------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dampwave", description="Damped wave Galerkin experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the experiment described by a config file")
    r.add_argument("config")
    r.add_argument("--out-dir", default=None, help=f"output directory (default: ${ENV_OUT_DIR} or [output] directory)")
    r.add_argument("--seed", type=int, default=None, help="override the config seed")
    r.add_argument("--threads", type=int, default=1)
    p = sub.add_parser("replay", help="re-run a manifest and check bit-identical outputs")
    p.add_argument("manifest")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)
    sub.add_parser("list-experiments", help="list experiment kinds")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-experiments":
        for name in EXPERIMENTS:
            print(f"{name:15s} {EXPERIMENT_HELP[name]}")
        return 0
    try:
        set_workers(args.threads)
        if args.command == "run":
            text = Path(args.config).read_text()
            cfg = parse_config(text)
            out = args.out_dir or os.environ.get(ENV_OUT_DIR) or cfg.output.directory
            status = run(text, Path(out), args.seed)
            print(f"{cfg.experiment.kind}: {'pass' if status == 0 else 'FAIL'} -> {out}")
            return status
        res = replay(Path(args.manifest), args.seed)
        print(f"replay {res.status}: {res.message}")
        return 0 if res.status == "identical" else 4
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ReproducibilityError as exc:
        print(f"reproducibility error: {exc}", file=sys.stderr)
        return 1
    except (ExperimentError, DampwaveError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

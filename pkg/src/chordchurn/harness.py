"""Reproducible experiments: default grids per figure, CSV results, acceptance checks.

A results file starts with two comment lines, a schema line and a timestamp
line, followed by a fixed header row and one row per (grid point, source).
Everything except the timestamp line is a deterministic function of the
experiment spec, so two runs of the same config can be compared byte for
byte after dropping line two.  Comment lines start with ``#`` so the files
load directly in gnuplot (``set datafile separator ','``) and pandas
(``comment='#'``).

Grid points are dispatched to a process pool whose size is capped by the
``CCL_THREADS`` environment variable; results come back in submission order
and a single writer produces the file.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import io
import json
import logging
import math
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .lookup import CostTable, nochurn_asymptotic, scaling_form, solve_nochurn, solve_with_churn
from .ring import DomainError, RingParams
from .steady_state import (
    MaintenanceConfig,
    SolverError,
    coc_death_fraction,
    periodic_death_fraction,
    solve_coc,
)

__all__ = [
    "FIGURE_IDS",
    "ADHOC_IDS",
    "COLUMNS",
    "SCHEMA",
    "ExperimentSpec",
    "ResultRow",
    "Check",
    "ExperimentResult",
    "Report",
    "GridMismatchError",
    "default_spec",
    "load_config",
    "run_experiment",
    "evaluate",
    "write_rows",
    "read_rows",
    "compare_report",
    "collect_rows",
    "worker_count",
]

logger = logging.getLogger(__name__)

SCHEMA = "ccl-results/1"

FIGURE_IDS = (
    "fig1_theory_vs_sim",
    "fig2_vary_N",
    "fig3_scaled_collapse",
    "fig4_vary_base",
    "fig5_coc_vs_periodic",
    "fig6_vary_a",
    "figA_nochurn",
    "figA_cost_profile",
)
# ids for the single-purpose CLI subcommands; they share the machinery but
# carry no acceptance checks
ADHOC_IDS = ("analytic-nochurn", "analytic-churn", "steady-state", "simulate")

_N_FAMILY = (1000, 2000, 4000, 8000, 16000)
_WIDE_R = (5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0, 1000.0)

# Default grid per figure.  Strategy "periodic" uses beta; "coc" uses alpha,
# every a in a_grid and c (None meaning the fair split c = 1 - a).
_DEFAULTS: dict[str, dict] = {
    "fig1_theory_vs_sim": dict(
        keyspace_bits=20, nodes=(1000,), r_grid=(50.0, 100.0, 200.0, 400.0),
        beta=0.5, strategies=("periodic",), model="recursion", simulate=True,
        seeds=(1, 2, 3, 4, 5),
    ),
    "fig2_vary_N": dict(
        keyspace_bits=20, nodes=_N_FAMILY,
        r_grid=(100.0, 120.0, 160.0, 240.0, 360.0, 500.0, 760.0, 1000.0),
        beta=0.5, strategies=("periodic",), model="recursion",
    ),
    "fig3_scaled_collapse": dict(
        keyspace_bits=20, nodes=_N_FAMILY,
        r_grid=(100.0, 120.0, 160.0, 240.0, 360.0, 500.0, 760.0, 1000.0),
        beta=0.5, strategies=("periodic",), model="recursion",
    ),
    "fig4_vary_base": dict(
        keyspace_bits=20, nodes=(1000,), bases=(2, 4, 16),
        r_grid=(50.0, 75.0, 100.0, 150.0, 200.0, 300.0, 500.0, 1000.0),
        beta=0.5, strategies=("periodic",), model="scaling",
    ),
    "fig5_coc_vs_periodic": dict(
        keyspace_bits=20, nodes=(1000,), r_grid=_WIDE_R, beta=0.4,
        strategies=("periodic", "coc"), a_grid=(0.0,), c=1.0, model="scaling",
    ),
    "fig6_vary_a": dict(
        keyspace_bits=20, nodes=(1000,), r_grid=_WIDE_R,
        strategies=("coc",), a_grid=(0.0, 0.1, 0.2, 0.3, 0.4, 0.5), model="scaling",
    ),
    "figA_nochurn": dict(
        keyspace_bits=14, nodes=tuple(2**j for j in range(4, 14)), r_grid=(),
        strategies=("none",), model="exact",
    ),
    "figA_cost_profile": dict(
        keyspace_bits=20, nodes=(1000,), r_grid=(100.0, 400.0), beta=0.5,
        strategies=("none", "periodic"), model="recursion",
    ),
}


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything that determines the contents of a results file."""

    figure_id: str
    keyspace_bits: int = 20
    nodes: tuple[int, ...] = (1000,)
    bases: tuple[int, ...] = (2,)
    r_grid: tuple[float, ...] = ()
    beta: float = 0.5
    alpha: float = 1.0
    a_grid: tuple[float, ...] = (0.0,)
    c: float | None = None
    strategies: tuple[str, ...] = ("periodic",)
    model: str = "recursion"
    simulate: bool = False
    analytic: bool = True
    seeds: tuple[int, ...] = (1,)
    out: str | None = None

    def __post_init__(self) -> None:
        if self.figure_id not in FIGURE_IDS + ADHOC_IDS:
            raise DomainError(f"unknown figure id {self.figure_id!r}; choose from {', '.join(FIGURE_IDS)}")
        for name in ("nodes", "bases", "a_grid", "seeds", "strategies"):
            if not getattr(self, name):
                raise DomainError(f"grid {name!r} is empty")
        if not (self.analytic or self.simulate):
            raise DomainError("nothing to compute: analytic and simulate are both off")
        if not self.r_grid and any(s != "none" for s in self.strategies):
            raise DomainError("grid 'r_grid' is empty")
        if any(r <= 0 for r in self.r_grid):
            raise DomainError("every r must be positive")
        if self.model not in ("recursion", "scaling", "exact"):
            raise DomainError(f"unknown model {self.model!r}")
        for s in self.strategies:
            if s not in ("none", "periodic", "coc"):
                raise DomainError(f"unknown strategy {s!r}")
        # validate every ring up front so a bad grid writes nothing
        for n in self.nodes:
            for b in self.bases:
                RingParams.from_bits(self.keyspace_bits, n, b)
        if not 0.0 <= self.beta <= 1.0:
            raise DomainError("beta must lie in [0, 1]")

    def with_overrides(self, **kw) -> "ExperimentSpec":
        kw = {k: v for k, v in kw.items() if v is not None}
        return dataclasses.replace(self, **kw)

    def c_for(self, a: float) -> float:
        return 1.0 - a if self.c is None else self.c


def default_spec(figure_id: str) -> ExperimentSpec:
    if figure_id not in _DEFAULTS:
        raise DomainError(f"unknown figure id {figure_id!r}; choose from {', '.join(FIGURE_IDS)}")
    return ExperimentSpec(figure_id, **_DEFAULTS[figure_id])


def load_config(path: str | os.PathLike) -> dict:
    """Read a JSON experiment config.  Lists become tuples; unknown keys are errors."""
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise DomainError("config must be a JSON object")
    names = {f.name for f in dataclasses.fields(ExperimentSpec)}
    bad = sorted(set(raw) - names)
    if bad:
        raise DomainError(f"unknown config keys: {', '.join(bad)}")
    return {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}


# --------------------------------------------------------------------------
# result rows

COLUMNS = (
    "experiment", "strategy", "N", "K", "b", "r", "beta", "alpha", "a", "c", "t",
    "source", "model", "L", "A", "f", "w1", "w1_prime", "P_S1", "reference",
    "ci_halfwidth", "runs", "seed", "converged", "note",
)
_INT_COLS = {"N", "K", "b", "t", "runs", "seed", "converged"}
_STR_COLS = {"experiment", "strategy", "source", "model", "note"}
_KEY_COLS = ("experiment", "strategy", "N", "K", "b", "r", "beta", "alpha", "a", "c", "t")


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    strategy: str
    N: int
    K: int
    b: int
    r: float | None = None
    beta: float | None = None
    alpha: float | None = None
    a: float | None = None
    c: float | None = None
    t: int | None = None
    source: str = "analytic"
    model: str = ""
    L: float | None = None
    A: float | None = None
    f: float | None = None
    w1: float | None = None
    w1_prime: float | None = None
    P_S1: float | None = None
    reference: float | None = None
    ci_halfwidth: float | None = None
    runs: int | None = None
    seed: int | None = None
    converged: int = 1
    note: str = ""

    def key(self) -> tuple:
        return tuple(getattr(self, c) for c in _KEY_COLS)

    def to_cells(self) -> list[str]:
        out = []
        for c in COLUMNS:
            v = getattr(self, c)
            if v is None:
                out.append("")
            elif isinstance(v, float):
                out.append(repr(v))
            else:
                out.append(str(v))
        return out

    @classmethod
    def from_cells(cls, cells: Sequence[str]) -> "ResultRow":
        kw = {}
        for c, v in zip(COLUMNS, cells):
            if c in _STR_COLS:
                kw[c] = v
            elif v == "":
                kw[c] = None
            elif c in _INT_COLS:
                kw[c] = int(v)
            else:
                kw[c] = float(v)
        return cls(**kw)


def write_rows(rows: Iterable[ResultRow], path: str | os.PathLike | None, timestamp: str | None = None) -> str:
    """Render rows as CSV; write to ``path`` when given.  Returns the text."""
    if timestamp is None:
        timestamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    buf = io.StringIO()
    buf.write(f"# schema={SCHEMA} columns={len(COLUMNS)}\n")
    buf.write(f"# generated={timestamp}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for row in rows:
        w.writerow(row.to_cells())
    text = buf.getvalue()
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    return text


def read_rows(path: str | os.PathLike) -> list[ResultRow]:
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# schema="):
            raise DomainError(f"{path}: missing schema line")
        schema = first.split()[1].split("=", 1)[1]
        if schema != SCHEMA:
            raise DomainError(f"{path}: schema {schema!r}, expected {SCHEMA!r}")
        pos = fh.tell()
        while fh.readline().startswith("#"):
            pos = fh.tell()
        fh.seek(pos)
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != COLUMNS:
            raise DomainError(f"{path}: header does not match schema {SCHEMA}")
        return [ResultRow.from_cells(cells) for cells in reader]


# --------------------------------------------------------------------------
# grid evaluation (runs inside workers)


@dataclass(frozen=True)
class _Point:
    experiment: str
    strategy: str
    bits: int
    N: int
    b: int
    r: float | None
    beta: float | None
    alpha: float | None
    a: float | None
    c: float | None
    model: str

    def params(self) -> RingParams:
        return RingParams.from_bits(self.bits, self.N, self.b)

    def cfg(self) -> MaintenanceConfig:
        if self.strategy == "periodic":
            return MaintenanceConfig.periodic(self.r, self.beta)
        return MaintenanceConfig.correction_on_change(self.r, self.a, self.c, self.alpha)

    def row(self, **kw) -> ResultRow:
        return ResultRow(
            self.experiment, self.strategy, self.N, 2**self.bits, self.b, self.r, self.beta,
            self.alpha, self.a, self.c, model=self.model, **kw,
        )


@lru_cache(maxsize=32)
def _churn_free(bits: int, N: int, b: int) -> CostTable:
    return solve_nochurn(RingParams.from_bits(bits, N, b))


_PROFILE_T = tuple(sorted({q << j for j in range(20) for q in (1, 3)}))


def _profile_distances(K: int) -> list[int]:
    return [t for t in _PROFILE_T if t < K]


def _analytic(pt: _Point, profile: bool) -> list[ResultRow]:
    p = pt.params()
    A = _churn_free(pt.bits, pt.N, pt.b)
    if pt.strategy == "none":
        ref = nochurn_asymptotic(p) if pt.N >= 2 else None
        if profile:
            return [pt.row(t=t, L=float(A.costs[t]), A=A.average, f=0.0) for t in _profile_distances(p.keyspace_size)]
        return [pt.row(L=A.average, A=A.average, f=0.0, reference=ref)]
    cfg = pt.cfg()
    w1 = w1p = ps1 = None
    try:
        if pt.strategy == "periodic":
            prof = periodic_death_fraction(cfg, p)
        else:
            ss = solve_coc(cfg, p)
            w1, w1p, ps1 = ss.w1, ss.w1_prime, ss.P_S1
            prof = coc_death_fraction(ss, cfg, p)
    except SolverError as exc:
        return [pt.row(A=A.average, converged=0, note=f"solver: {exc}")]
    f = prof.at(2) if len(prof) > 1 else prof.at(1)
    scaled = scaling_form(A.average, f)
    extra = dict(A=A.average, f=f, w1=w1, w1_prime=w1p, P_S1=ps1)
    if pt.model == "scaling":
        return [pt.row(L=scaled, reference=scaled, **extra)]
    table = solve_with_churn(p, prof, churn_free=A)
    note = f"truncation={table.truncation_residual:.3g}"
    if profile:
        return [pt.row(t=t, L=float(table.costs[t]), **extra) for t in _profile_distances(p.keyspace_size)]
    return [pt.row(L=table.average, reference=scaled, note=note, **extra)]


def _simulate_one(pt: _Point, seed: int):
    from .simulator import SimRun, run

    res = run(SimRun(pt.params(), pt.cfg(), seed=seed))
    return (
        res.mean_hops, res.hop_ci_halfwidth, res.mean_f, res.measured_w1,
        res.measured_w1_prime, res.measured_P_S1, res.outside_model_validity,
    )


def _do_task(task):
    kind, pt, arg = task
    if kind == "analytic":
        return _analytic(pt, profile=arg)
    return _simulate_one(pt, arg)


def _aggregate(pt: _Point, seeds: Sequence[int], outs: Sequence[tuple]) -> ResultRow:
    hops = np.array([o[0] for o in outs])
    n = hops.size
    if n > 1:
        half = float(stats.t.ppf(0.975, n - 1) * hops.std(ddof=1) / math.sqrt(n))
    else:
        half = float(outs[0][1])

    def mean(i):
        vals = [o[i] for o in outs if not math.isnan(o[i])]
        return float(np.mean(vals)) if vals else None

    flagged = [s for s, o in zip(seeds, outs) if o[6]]
    note = f"outside-model-validity seeds={flagged}" if flagged else ""
    return pt.row(
        source="simulated", L=float(hops.mean()), f=mean(2), w1=mean(3), w1_prime=mean(4),
        P_S1=mean(5), ci_halfwidth=half, runs=n, seed=int(seeds[0]), note=note,
    )


def worker_count(tasks: int | None = None) -> int:
    """Pool size: CPU count, capped by ``CCL_THREADS`` and by the task count."""
    n = os.cpu_count() or 1
    env = os.environ.get("CCL_THREADS")
    if env:
        try:
            cap = int(env)
        except ValueError:
            raise DomainError(f"CCL_THREADS must be an integer, got {env!r}") from None
        if cap < 1:
            raise DomainError("CCL_THREADS must be >= 1")
        n = min(n, cap)
    if tasks is not None:
        n = min(n, max(tasks, 1))
    return n


def _points(spec: ExperimentSpec) -> list[_Point]:
    pts = []
    for N in spec.nodes:
        for b in spec.bases:
            for strat in spec.strategies:
                if strat == "none":
                    pts.append(_Point(spec.figure_id, "none", spec.keyspace_bits, N, b, None, None, None, None, None, "exact"))
                    continue
                for r in spec.r_grid:
                    if strat == "periodic":
                        pts.append(_Point(spec.figure_id, strat, spec.keyspace_bits, N, b, float(r),
                                          spec.beta, None, None, None, spec.model))
                    else:
                        for a in spec.a_grid:
                            pts.append(_Point(spec.figure_id, strat, spec.keyspace_bits, N, b, float(r),
                                              None, spec.alpha, float(a), spec.c_for(a), spec.model))
    return pts


def _map(tasks: list, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [_do_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_do_task, tasks))


def collect_rows(spec: ExperimentSpec, workers: int | None = None) -> list[ResultRow]:
    """Evaluate every grid point of ``spec``; rows come out in grid order."""
    pts = _points(spec)
    profile = spec.figure_id == "figA_cost_profile"
    an_pts = pts if spec.analytic else []
    sim_pts = [pt for pt in pts if spec.simulate and pt.strategy != "none"]
    tasks: list = [("analytic", pt, profile) for pt in an_pts]
    for pt in sim_pts:
        tasks.extend(("simulated", pt, s) for s in spec.seeds)
    outs = _map(tasks, worker_count(len(tasks)) if workers is None else workers)
    analytic = dict(zip(an_pts, outs[: len(an_pts)]))
    sim_outs = outs[len(an_pts):]
    ns = len(spec.seeds)
    simulated = {
        pt: _aggregate(pt, spec.seeds, sim_outs[i * ns : (i + 1) * ns]) for i, pt in enumerate(sim_pts)
    }
    rows: list[ResultRow] = []
    for pt in pts:
        rows.extend(analytic.get(pt, ()))
        if pt in simulated:
            rows.append(simulated[pt])
    return rows


# --------------------------------------------------------------------------
# acceptance checks


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    rows: list[ResultRow]
    checks: list[Check]
    path: Path | None = None
    excluded: list[ResultRow] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _ok(rows: Iterable[ResultRow], source: str = "analytic") -> list[ResultRow]:
    return [r for r in rows if r.source == source and r.converged and r.L is not None]


def _check_theory_vs_sim(rows, median_tol=0.05, max_tol=0.08) -> list[Check]:
    sims = {r.key(): r for r in _ok(rows, "simulated")}
    if not sims:
        return []
    errs = [abs(r.L - sims[r.key()].L) / sims[r.key()].L for r in _ok(rows) if r.key() in sims]
    if not errs:
        return [Check("theory-vs-simulation", False, "no matching analytic rows")]
    med, mx = statistics.median(errs), max(errs)
    return [Check(
        "theory-vs-simulation", med <= median_tol and mx <= max_tol,
        f"median rel err {med:.4f} (<= {median_tol}), max {mx:.4f} (<= {max_tol}) over {len(errs)} points",
    )]


def _check_collapse(rows, f_max=0.25, tol=0.05) -> list[Check]:
    devs = [
        abs((r.L - r.A) / r.A - (r.f + 3 * r.f**2))
        for r in _ok(rows) if r.strategy != "none" and r.f is not None and r.f <= f_max
    ]
    if not devs:
        return [Check("scaling-collapse", False, f"no points with f <= {f_max}")]
    mx = max(devs)
    return [Check("scaling-collapse", mx <= tol, f"max |(L-A)/A - (f+3f^2)| = {mx:.4f} (<= {tol}) over {len(devs)} points")]


def _series(rows, key) -> dict:
    out: dict = {}
    for r in _ok(rows):
        out.setdefault(key(r), {})[r.r] = r.L
    return out


def _check_base_order(rows) -> list[Check]:
    ser = _series(rows, lambda r: r.b)
    if len(ser) < 2:
        return []
    rs = sorted(set.intersection(*(set(v) for v in ser.values())))
    big = max(ser)
    lo_r, hi_r = rs[0], rs[-1]
    at_hi_churn = max(ser, key=lambda b: ser[b][lo_r]) == big
    at_lo_churn = min(ser, key=lambda b: ser[b][hi_r]) == big
    return [Check(
        "base-crossover", at_hi_churn and at_lo_churn,
        f"b={big} highest at r={lo_r}: {at_hi_churn}; lowest at r={hi_r}: {at_lo_churn}",
    )]


def _check_strategy_crossover(rows) -> list[Check]:
    per = {r.strategy: {} for r in _ok(rows)}
    for r in _ok(rows):
        per[r.strategy][r.r] = r.L
    if set(per) != {"periodic", "coc"}:
        return []
    rs = sorted(set(per["periodic"]) & set(per["coc"]))
    lo, hi = rs[0], rs[-1]
    higher_small = per["coc"][lo] > per["periodic"][lo]
    lower_large = per["coc"][hi] < per["periodic"][hi]
    return [Check(
        "strategy-crossover", higher_small and lower_large,
        f"r={lo}: coc {per['coc'][lo]:.4f} vs periodic {per['periodic'][lo]:.4f}; "
        f"r={hi}: coc {per['coc'][hi]:.4f} vs periodic {per['periodic'][hi]:.4f}",
    )]


def _check_optimal_a(rows, target=0.2, step=0.1) -> list[Check]:
    by_a: dict[float, list[float]] = {}
    for r in _ok(rows):
        if r.strategy == "coc":
            by_a.setdefault(r.a, []).append(r.L)
    if len(by_a) < 2:
        return []
    means = {a: float(np.mean(v)) for a, v in by_a.items()}
    best = min(means, key=means.get)
    return [Check(
        "optimal-a", abs(best - target) <= step + 1e-9,
        f"r-averaged L minimal at a={best} ({means[best]:.4f}); accepted {target}+-{step}",
    )]


def _check_nochurn(rows, tol=0.05) -> list[Check]:
    errs = [abs(r.L - r.reference) / r.L for r in _ok(rows) if r.reference is not None]
    if not errs:
        return []
    return [Check("nochurn-asymptotic", max(errs) <= tol, f"max rel err {max(errs):.4f} (<= {tol}) over {len(errs)} N")]


def _check_profile(rows) -> list[Check]:
    base = {(r.N, r.t): r.L for r in _ok(rows) if r.strategy == "none"}
    worse = [r.L >= base[(r.N, r.t)] - 1e-12 for r in _ok(rows) if r.strategy != "none" and (r.N, r.t) in base]
    c1 = [abs(L - 1.0) < 1e-12 for (N, t), L in base.items() if t == 1]
    return [Check(
        "cost-profile", all(worse) and all(c1) and bool(worse),
        f"C_1 = 1: {all(c1)}; churn costs >= churn-free at {sum(worse)}/{len(worse)} distances",
    )]


_CHECKS = {
    "fig1_theory_vs_sim": (_check_theory_vs_sim,),
    "fig2_vary_N": (_check_collapse, _check_theory_vs_sim),
    "fig3_scaled_collapse": (_check_collapse, _check_theory_vs_sim),
    "fig4_vary_base": (_check_base_order,),
    "fig5_coc_vs_periodic": (_check_strategy_crossover, _check_theory_vs_sim),
    "fig6_vary_a": (_check_optimal_a,),
    "figA_nochurn": (_check_nochurn,),
    "figA_cost_profile": (_check_profile,),
}


def evaluate(figure_id: str, rows: Sequence[ResultRow]) -> list[Check]:
    checks = []
    for fn in _CHECKS.get(figure_id, ()):
        checks.extend(fn(rows))
    flagged = [r for r in rows if not r.converged]
    if flagged:
        checks.append(Check("converged", True, f"{len(flagged)} row(s) flagged non-converged and excluded"))
    return checks


def run_experiment(spec: ExperimentSpec, workers: int | None = None) -> ExperimentResult:
    """Evaluate the grid, write the CSV (if ``spec.out``) and score it."""
    rows = collect_rows(spec, workers)
    path = None
    if spec.out:
        path = Path(spec.out)
        write_rows(rows, path)
    excluded = [r for r in rows if not r.converged]
    return ExperimentResult(spec, rows, evaluate(spec.figure_id, rows), path, excluded)


# --------------------------------------------------------------------------
# comparison of two result files


class GridMismatchError(DomainError):
    def __init__(self, missing: list[tuple]):
        lines = "\n  ".join(str(dict(zip(_KEY_COLS, k))) for k in missing[:20])
        more = f"\n  ... and {len(missing) - 20} more" if len(missing) > 20 else ""
        super().__init__(f"{len(missing)} grid point(s) missing from one file:\n  {lines}{more}")
        self.missing = missing


@dataclass
class Report:
    points: list[tuple[tuple, float, float, float]]  # key, L_a, L_b, relative error
    excluded: list[tuple]
    median_tol: float
    max_tol: float

    @property
    def max_error(self) -> float:
        return max((p[3] for p in self.points), default=0.0)

    @property
    def median_error(self) -> float:
        return statistics.median([p[3] for p in self.points]) if self.points else 0.0

    @property
    def passed(self) -> bool:
        return bool(self.points) and self.median_error <= self.median_tol and self.max_error <= self.max_tol

    def lines(self) -> list[str]:
        out = [
            f"points compared: {len(self.points)}",
            f"max relative error: {self.max_error:.6g} (<= {self.max_tol})",
            f"median relative error: {self.median_error:.6g} (<= {self.median_tol})",
        ]
        for k in self.excluded:
            out.append(f"excluded (flagged non-converged): {dict(zip(_KEY_COLS, k))}")
        out.append(f"{'PASS' if self.passed else 'FAIL'} comparison")
        return out

    def rows(self) -> list[ResultRow]:
        """Per-point errors as result rows (source 'comparison', L = relative error)."""
        out = []
        for key, la, lb, err in self.points:
            kw = dict(zip(_KEY_COLS, key))
            out.append(ResultRow(**kw, source="comparison", model="relative_error", L=err, reference=la, A=lb))
        return out


def _pick(rows: list[ResultRow], source: str | None) -> list[ResultRow]:
    if source is None:
        return rows
    chosen = [r for r in rows if r.source == source]
    return chosen or rows


def compare_report(
    file_a: str | os.PathLike,
    file_b: str | os.PathLike,
    source_a: str | None = "analytic",
    source_b: str | None = "simulated",
    median_tol: float = 0.05,
    max_tol: float = 0.08,
) -> Report:
    """Per-point relative error of ``L`` between two result files.

    Rows are matched on their grid key.  Each file is filtered to the given
    source when it has rows of that source; a file without such rows is used
    whole, so comparing a file with itself yields zero error.  Flagged
    (non-converged) rows on either side drop the point from the statistics
    and are listed in ``excluded``.
    """
    ra, rb = _pick(read_rows(file_a), source_a), _pick(read_rows(file_b), source_b)

    def index(rows):
        keyed: dict[tuple, ResultRow] = {}
        for r in rows:
            k = r.key()
            if k in keyed:
                k = k + (r.source,)
            keyed[k] = r
        return keyed

    ia, ib = index(ra), index(rb)
    missing = sorted(set(ia) ^ set(ib), key=repr)
    if missing:
        raise GridMismatchError(missing)
    points, excluded = [], []
    for k in ia:
        a, b = ia[k], ib[k]
        if not (a.converged and b.converged) or a.L is None or b.L is None:
            excluded.append(k)
            continue
        err = abs(a.L - b.L) / abs(b.L) if b.L else abs(a.L - b.L)
        points.append((k, a.L, b.L, err))
    return Report(points, excluded, median_tol, max_tol)

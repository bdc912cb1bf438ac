"""Experiment drivers: error growth, convergence tables, gamma traces, plot scripts.

Every driver takes a ``RunSpec`` and writes one CSV whose name is derived
from its settings, so sweeps never write to the same file twice.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import (InsufficientAsymptoticRange, MalformedCSV, RelaxationRootNotFound,
                     StepFailed)
from .hbpc import CORRECTOR_SCALINGS, QUADRATURE_SOURCES, HBPCConfig
from .problems import IVP, get_problem, reference_for
from .relaxation import Trajectory, integrate
from .tableau import builtin

FIT_WINDOW = (1e-11, 1e-1)
DT_START = {"oscillator": 0.4, "kepler": 0.2}
# The Kepler orbit is very eccentric (e = 5/6): every step size above ~2e-3
# gives O(1) errors at T = 5, so the default sweep starts 7 halvings down.
DT_SKIP = {"oscillator": 0, "kepler": 7}
DT_COUNT = 6

GROWTH_HEADER = ["t", "error", "eta"]
CONVERGENCE_HEADER = ["dt", "error", "eta_drift"]
GAMMA_HEADER = ["t", "gamma"]
TRAJECTORY_HEADER = ["t", "error", "eta", "gamma", "newton_iters"]


def default_dt_list(problem: str, count: int = DT_COUNT) -> list[float]:
    start = DT_START[problem] * 0.5 ** DT_SKIP[problem]
    return [start * 0.5**i for i in range(count)]


@dataclass
class RunSpec:
    problem: str = "oscillator"
    tableau: str = "HB-I2DRK6-3s"
    kmax: int = 4
    relaxed: bool = False
    dt: float | list | None = None
    T_end: float = 10.0
    functional: str = "default"
    corrector_scaling: str = "global"
    quadrature_source: str = "iterate-k"
    output_dir: str = "."
    backend: str = "auto"

    def __post_init__(self):
        if self.problem not in DT_START:
            raise ValueError(f"unknown problem {self.problem!r}")
        if self.kmax < 0:
            raise ValueError("kmax must be >= 0")
        if not self.T_end > 0:
            raise ValueError("T_end must be positive")
        if self.corrector_scaling not in CORRECTOR_SCALINGS:
            raise ValueError(f"corrector_scaling must be one of {CORRECTOR_SCALINGS}")
        if self.quadrature_source not in QUADRATURE_SOURCES:
            raise ValueError(f"quadrature_source must be one of {QUADRATURE_SOURCES}")
        for dt in self.dt_list() if self.dt is not None else []:
            if not dt > 0:
                raise ValueError("dt must be positive")

    @classmethod
    def from_dict(cls, doc: dict) -> "RunSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown RunSpec keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "RunSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)

    def dt_list(self) -> list[float]:
        if self.dt is None:
            return default_dt_list(self.problem)
        if isinstance(self.dt, (list, tuple)):
            return [float(x) for x in self.dt]
        return [float(self.dt)]

    def single_dt(self) -> float:
        dts = self.dt_list()
        if self.dt is None or len(dts) != 1:
            raise ValueError("this command needs exactly one dt")
        return dts[0]

    def build(self) -> tuple[IVP, HBPCConfig]:
        ivp = get_problem(self.problem, self.functional)
        cfg = HBPCConfig(builtin(self.tableau), kmax=self.kmax,
                         corrector_scaling=self.corrector_scaling,
                         quadrature_source=self.quadrature_source)
        return ivp, cfg

    def stem(self, kind: str, dt: float | None = None) -> str:
        parts = [kind, self.problem, self.tableau, f"k{self.kmax}",
                 "relaxed" if self.relaxed else "unrelaxed"]
        if self.functional != "default":
            parts.append(self.functional)
        if self.corrector_scaling != "global":
            parts.append(self.corrector_scaling)
        if self.quadrature_source != "iterate-k":
            parts.append(self.quadrature_source)
        if dt is not None:
            parts.append(f"dt{dt:g}")
        parts.append(f"T{self.T_end:g}")
        return "_".join(parts)

    def path(self, kind: str, dt: float | None = None) -> Path:
        return Path(self.output_dir) / f"{self.stem(kind, dt)}.csv"


@dataclass
class RunOutcome:
    """What a single-dt command produced; ``failure`` is set when the run aborted."""
    path: Path
    trajectory: Trajectory
    failure: Exception | None = None
    newton_failures: int = 0

    @property
    def completed(self) -> bool:
        return self.failure is None


@dataclass
class ConvergenceReport:
    rows: list  # (dt, error, eta_drift)
    p_obs: float | None
    p_expected: int
    fit_rows: list = field(default_factory=list)
    path: Path | None = None

    def summary(self) -> str:
        p = "n/a" if self.p_obs is None else f"{self.p_obs:.2f}"
        return f"observed order {p}, expected {self.p_expected} ({len(self.fit_rows)} rows fitted)"


def fit_order(dts, errors, window=FIT_WINDOW) -> tuple[float, list[int]]:
    """Least-squares slope of log(error) against log(dt) over rows inside ``window``."""
    lo, hi = window
    idx = [i for i, e in enumerate(errors) if lo <= e <= hi and math.isfinite(e)]
    if len(idx) < 3:
        raise InsufficientAsymptoticRange(
            f"only {len(idx)} of {len(errors)} errors lie in [{lo:g}, {hi:g}]")
    x = np.log([dts[i] for i in idx])
    y = np.log([errors[i] for i in idx])
    slope = np.polyfit(x, y, 1)[0]
    return float(slope), idx


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(float(x))


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])


def _run(spec: RunSpec, dt: float, errors="all", with_reference=True):
    ivp, cfg = spec.build()
    ref = reference_for(ivp, spec.T_end).eval if with_reference else None
    try:
        traj = integrate(ivp, cfg, dt, spec.T_end, relaxed=spec.relaxed, reference=ref,
                         backend=spec.backend, errors=errors)
        failure = None
    except (StepFailed, RelaxationRootNotFound) as exc:
        recs = exc.records or []
        traj = Trajectory(recs, recs[-1].t if recs else 0.0, completed=False)
        failure = exc
    nfail = sum(r.newton_failures for r in traj.records)
    return ivp, traj, failure, nfail


def write_trajectory(traj: Trajectory, path) -> Path:
    """Per-step export with header ``t,error,eta,gamma,newton_iters``."""
    path = Path(path)
    _write_csv(path, TRAJECTORY_HEADER,
               [(r.t, r.error, r.eta, r.gamma, str(r.newton_iters)) for r in traj.records])
    return path


def cmd_growth(spec: RunSpec) -> RunOutcome:
    """Error and functional against time for one dt; CSV ``t,error,eta``."""
    dt = spec.single_dt()
    ivp, traj, failure, nfail = _run(spec, dt)
    path = spec.path("growth", dt)
    _write_csv(path, GROWTH_HEADER, [(r.t, r.error, r.eta) for r in traj.records])
    return RunOutcome(path, traj, failure, nfail)


def cmd_gamma_trace(spec: RunSpec) -> RunOutcome:
    """Relaxation parameter per step; CSV ``t,gamma``.

    An aborted run ends with a marker row ``t_fail,nan``.
    """
    dt = spec.single_dt()
    spec = replace(spec, relaxed=True)
    ivp, traj, failure, nfail = _run(spec, dt, with_reference=False)
    rows = [(r.t, r.gamma) for r in traj.records]
    if failure is not None:
        rows.append((failure.t, "nan"))
    path = spec.path("gamma", dt)
    _write_csv(path, GAMMA_HEADER, rows)
    return RunOutcome(path, traj, failure, nfail)


def cmd_convergence(spec: RunSpec, min_rows: int = 4) -> ConvergenceReport:
    """Final-time error for each dt of a geometric sequence; CSV ``dt,error,eta_drift``.

    ``eta_drift`` is the largest ``|eta(w_n) - eta(w_0)|`` along the run.  A
    run that aborts contributes ``nan`` and is left out of the fit.
    """
    dts = sorted(spec.dt_list(), reverse=True)
    if len(dts) < min_rows:
        raise ValueError(f"convergence needs at least {min_rows} step sizes")
    if len(set(dts)) != len(dts):
        raise ValueError("step sizes must be distinct")
    rows = []
    for dt in dts:
        ivp, traj, failure, _ = _run(spec, dt, errors="final")
        if failure is not None or not traj.records:
            rows.append((dt, math.nan, math.nan))
            continue
        eta0 = float(ivp.eta(ivp.w0))
        drift = max(abs(r.eta - eta0) for r in traj.records)
        rows.append((dt, traj.final.error, drift))
    path = spec.path("convergence")
    _write_csv(path, CONVERGENCE_HEADER, rows)
    p_expected = min(spec.kmax + builtin(spec.tableau).m, builtin(spec.tableau).q)
    p_obs, idx = fit_order([r[0] for r in rows], [r[1] for r in rows])
    return ConvergenceReport(rows, p_obs, p_expected, [rows[i] for i in idx], path)


def tableau_dump(name: str) -> str:
    return builtin(name).to_json(indent=2)


# -- plot scripts -----------------------------------------------------------

def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Header and float data of a harness CSV; empty fields read as nan."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise MalformedCSV(f"{path}: {exc}") from exc
    if not rows or not rows[0]:
        raise MalformedCSV(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    if not body:
        raise MalformedCSV(f"{path}: no data rows")
    try:
        data = np.array([[float(v) if v.strip() else math.nan for v in r] for r in body])
    except ValueError as exc:
        raise MalformedCSV(f"{path}: {exc}") from exc
    if data.ndim != 2 or data.shape[1] != len(header):
        raise MalformedCSV(f"{path}: rows do not match the header {header}")
    return header, data


def _label(path: Path, kind: str) -> str:
    tokens = path.stem.split("_")
    if kind == "growth":
        if "relaxed" in tokens:
            return "With relaxation"
        if "unrelaxed" in tokens:
            return "Without relaxation"
    else:
        for tok in tokens:
            if tok.startswith("k") and tok[1:].isdigit():
                return f"$k_{{\\max}}={tok[1:]}$"
    return path.stem


PLOT_KINDS = {
    "growth": (GROWTH_HEADER, "t", "error", "Time $t$", "Numerical error", False),
    "convergence": (CONVERGENCE_HEADER, "dt", "error", r"$\Delta t$", "Numerical error", True),
}


def cmd_plot(paths, kind: str, out=None) -> str:
    """Emit a standalone matplotlib script that draws the given CSV files."""
    if kind not in PLOT_KINDS:
        raise ValueError(f"kind must be one of {sorted(PLOT_KINDS)}")
    header, xcol, ycol, xlabel, ylabel, loglog = PLOT_KINDS[kind]
    paths = [Path(p) for p in paths]
    if not paths:
        raise ValueError("no CSV files given")
    style, xscale = ("o-", "log") if loglog else ("-", "linear")
    curves = []
    for p in paths:
        got, _ = read_csv(p)
        if got != header:
            raise MalformedCSV(f"{p}: header {got} is not {header}")
        curves.append((str(p), _label(p, kind)))
    lines = [
        "import csv",
        "import matplotlib.pyplot as plt",
        "",
        f"CURVES = {curves!r}",
        "",
        "",
        "def load(path):",
        "    with open(path) as fh:",
        "        rows = list(csv.DictReader(fh))",
        f"    xs = [float(r[{xcol!r}]) for r in rows if r[{ycol!r}]]",
        f"    ys = [float(r[{ycol!r}]) for r in rows if r[{ycol!r}]]",
        "    return xs, ys",
        "",
        "",
        "fig, ax = plt.subplots()",
        "for path, label in CURVES:",
        "    xs, ys = load(path)",
        f"    ax.plot(xs, ys, {style!r}, label=label)",
        f"ax.set_xscale({xscale!r})",
        "ax.set_yscale(\"log\")",
        f"ax.set_xlabel({xlabel!r})",
        f"ax.set_ylabel({ylabel!r})",
        "ax.grid(True, which=\"major\")",
        "ax.legend(loc=\"upper left\")",
        f"fig.savefig({(kind + '.pdf')!r}, bbox_inches=\"tight\")",
        "",
    ]
    script = "\n".join(lines)
    if out is not None:
        Path(out).write_text(script)
    return script

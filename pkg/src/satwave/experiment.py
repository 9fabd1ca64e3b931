"""Config-driven runs: building the problem, writing run directories, sweeps."""

from __future__ import annotations

import copy
import csv
import hashlib
import itertools
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from . import __version__
from .analysis import (Trace, analysis_report, fit_decay, komornik_check,
                       multiplier_identity_residual, p_phi_identity_residual,
                       polynomial_bound_monitor, write_bound_csv, write_report)
from .elliptic import assemble_operators
from .errors import InvalidArgumentError, NonconvergenceError
from .feedback import make_feedback, nonlinearity_from_spec, validate_assumptions
from .mesh import GAMMA0, GAMMA1, build_annulus_mesh, build_unit_square_mesh, \
    check_geometric_assumptions
from .stepper import SolverConfig, State, StepRecord, Stepper, energy, make_strong_data
from .svg import line_chart

TRACE_COLUMNS = ("t", "energy", "dissipation", "kato_norm", "resolvent_iters",
                 "resolvent_residual")
PRESETS = ("zero", "eigenfunction", "radial_bump", "annulus_mode", "random_strong")
PARTITIONS = ("default", "all", "none", "outer", "inner")


class ConfigError(InvalidArgumentError):
    """Malformed or inconsistent experiment configuration."""


@dataclass
class ExperimentConfig:
    mesh: dict
    t_end: float
    nonlinearity: dict = field(default_factory=lambda: {"type": "saturation", "S": 1.0})
    initial_data: dict = field(default_factory=lambda: {"preset": "eigenfunction"})
    partition: str = "default"
    x0: list | None = None
    dt: float | None = None
    solver: dict = field(default_factory=dict)
    scheme: str = "euler"
    snapshot_every: int = 5
    output_dir: str = "run"
    r: float = 2.0

    def __post_init__(self):
        kind = self.mesh.get("type")
        if kind not in ("unit_square", "annulus"):
            raise ConfigError(f"unknown mesh type {kind!r}")
        if self.partition not in PARTITIONS:
            raise ConfigError(f"unknown partition {self.partition!r}")
        if self.initial_data.get("preset") not in PRESETS:
            raise ConfigError(f"unknown initial-data preset {self.initial_data.get('preset')!r}")
        if self.dt is not None and not self.dt > 0:
            raise ConfigError("dt must be positive")
        if not self.t_end > 0:
            raise ConfigError("t_end must be positive")
        if self.dt is not None and not self.t_end > self.dt:
            raise ConfigError("t_end must exceed dt")
        if self.snapshot_every < 0:
            raise ConfigError("snapshot_every must be >= 0")
        if self.x0 is not None and len(self.x0) != 2:
            raise ConfigError("x0 must be a 2-D point")
        try:
            SolverConfig(**self.solver)
            nonlinearity_from_spec(self.nonlinearity)
        except (TypeError, InvalidArgumentError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return asdict(self)

    def canonical(self) -> str:
        d = self.to_dict()
        d.pop("output_dir")
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(str(exc)) from exc
    return ExperimentConfig.from_dict(data)


# problem assembly -----------------------------------------------------------

@dataclass
class Problem:
    cfg: ExperimentConfig
    mesh: object
    ops: object
    fb: object
    x0: tuple
    dt: float
    n_steps: int


def build_mesh(cfg: ExperimentConfig):
    spec = cfg.mesh
    if spec["type"] == "unit_square":
        mesh = build_unit_square_mesh(spec.get("n", 16))
    else:
        mesh = build_annulus_mesh(spec.get("r_inner", 0.5), spec.get("r_outer", 1.0),
                                  spec.get("resolution", 0.05))
    if cfg.partition == "all":
        mesh = mesh.with_labels(np.full(len(mesh.edge_labels), GAMMA0))
    elif cfg.partition == "none":
        mesh = mesh.with_labels(np.full(len(mesh.edge_labels), GAMMA1))
    elif cfg.partition in ("outer", "inner"):
        if spec["type"] != "annulus":
            raise ConfigError(f"partition {cfg.partition!r} needs an annulus mesh")
        mid = 0.5 * (spec.get("r_inner", 0.5) + spec.get("r_outer", 1.0))
        outer = lambda m: np.linalg.norm(m, axis=1) > mid  # noqa: E731
        mesh = mesh.relabel(outer if cfg.partition == "outer"
                            else (lambda m: ~outer(m)))
    return mesh


def default_x0(cfg: ExperimentConfig):
    if cfg.x0 is not None:
        return tuple(float(c) for c in cfg.x0)
    return (0.5, 0.5) if cfg.mesh["type"] == "unit_square" else (0.0, 0.0)


def build_problem(cfg: ExperimentConfig) -> Problem:
    mesh = build_mesh(cfg)
    ops = assemble_operators(mesh)
    fb = make_feedback(ops, nonlinearity_from_spec(cfg.nonlinearity))
    dt = cfg.dt if cfg.dt is not None else 2.0 * mesh.h
    n_steps = int(round(cfg.t_end / dt))
    if n_steps < 1:
        raise ConfigError("t_end / dt rounds to zero steps")
    return Problem(cfg, mesh, ops, fb, default_x0(cfg), float(dt), n_steps)


def _box(mesh):
    lo, hi = mesh.nodes.min(axis=0), mesh.nodes.max(axis=0)
    return lo, hi - lo


def initial_state(prob: Problem) -> State:
    spec = dict(prob.cfg.initial_data)
    ops, fb, mesh = prob.ops, prob.fb, prob.mesh
    kind = spec.pop("preset")
    amp = float(spec.pop("amplitude", 1.0))
    target = spec.pop("energy", None)
    zero = np.zeros(ops.n)
    lo, ext = _box(mesh)
    if kind == "zero":
        return State(zero.copy(), zero.copy())
    if kind == "eigenfunction":
        m, n = int(spec.get("m", 1)), int(spec.get("n", 1))
        w = ops.interpolate(lambda x, y: np.sin(m * np.pi * (x - lo[0]) / ext[0])
                            * np.sin(n * np.pi * (y - lo[1]) / ext[1]))
        z = zero
    elif kind == "radial_bump":
        c = np.asarray(spec.get("center", [0.75, 0.0]), float)
        width = float(spec.get("width", 0.1))
        w = ops.interpolate(lambda x, y: np.exp(-((x - c[0]) ** 2 + (y - c[1]) ** 2) / width ** 2))
        z = zero
    elif kind == "annulus_mode":
        ri, ro = prob.cfg.mesh.get("r_inner", 0.5), prob.cfg.mesh.get("r_outer", 1.0)
        k = int(spec.get("k", 0))
        w = ops.interpolate(lambda x, y: np.sin(np.pi * (np.hypot(x, y) - ri) / (ro - ri))
                            * np.cos(k * np.arctan2(y, x)))
        z = zero
    else:  # random_strong
        rng = np.random.default_rng(int(spec.get("seed", 0)))
        modes = int(spec.get("modes", 4))
        cw = rng.standard_normal((modes, modes))
        cz = rng.standard_normal((modes, modes))
        X = (mesh.nodes - lo) / ext
        w = np.zeros(ops.n)
        z = np.zeros(ops.n)
        for j, k in itertools.product(range(1, modes + 1), repeat=2):
            decay = 1.0 / (j * j + k * k)
            w += cw[j - 1, k - 1] * decay * np.sin(j * np.pi * X[:, 0]) * np.sin(k * np.pi * X[:, 1])
            z += cz[j - 1, k - 1] * decay * np.cos(j * np.pi * X[:, 0]) * np.cos(k * np.pi * X[:, 1])
    w, z = amp * w, amp * z
    if target is None:
        return make_strong_data(ops, fb, w, z)
    target = float(target)

    def gap(s):
        return energy(ops, make_strong_data(ops, fb, s * w, s * z)) - target

    if gap(1.0) == -target:
        raise ConfigError("cannot normalize the energy of zero initial data")
    hi = 1.0
    while gap(hi) < 0:
        hi *= 2.0
    lo_s = 0.0
    s = brentq(gap, lo_s, hi, xtol=1e-15, rtol=1e-14)
    return make_strong_data(ops, fb, s * w, s * z)


def validate_config(cfg: ExperimentConfig) -> dict:
    """Run the geometry and nonlinearity validators; never raises on violations."""
    mesh = build_mesh(cfg)
    x0 = default_x0(cfg)
    geo = check_geometric_assumptions(mesh, x0)
    nl = nonlinearity_from_spec(cfg.nonlinearity)
    S = nl.sector.S if nl.sector is not None and np.isfinite(nl.sector.S) else 1.0
    grid = np.concatenate([np.linspace(-20 * S, 20 * S, 4001), [0.0]])
    nlr = validate_assumptions(nl, grid)
    violations = geo.violations() + nlr.violations
    return {"passed": not violations, "violations": violations,
            "geometry": geo.to_dict(), "nonlinearity": nlr.to_dict()}


# run directory ----------------------------------------------------------------

def _fmt(x) -> str:
    return f"{x:.16e}" if isinstance(x, float) else str(x)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def _row(rec: StepRecord) -> list:
    return [_fmt(float(x)) if i != 4 else str(int(x)) for i, x in enumerate(rec.as_row())]


def write_checkpoint(path, t, state: State, config_hash: str) -> None:
    with open(path, "w") as fh:
        json.dump({"t": t, "u": state.u.tolist(), "v": state.v.tolist(),
                   "config_hash": config_hash}, fh)


def load_checkpoint(path):
    with open(path) as fh:
        d = json.load(fh)
    return float(d["t"]), State(np.asarray(d["u"], float), np.asarray(d["v"], float)), d["config_hash"]


def read_trace_csv(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [StepRecord(float(r["t"]), float(r["energy"]), float(r["dissipation"]),
                       float(r["kato_norm"]), int(r["resolvent_iters"]),
                       float(r["resolvent_residual"])) for r in rows]


def summary_metrics(trace: Trace, x0, r: float) -> dict:
    out = {"final_energy": float(trace.energies[-1]), "initial_energy": float(trace.energies[0])}
    t = trace.times
    try:
        out["alpha"] = fit_decay(trace, (t[-1] / 10.0, t[-1])).alpha
    except InvalidArgumentError:
        out["alpha"] = None
    if trace.ops is not None and len(trace.snapshots) >= 2:
        out["multiplier_residual"] = float(multiplier_identity_residual(trace, 0.0, t[-1], r, x0))
        out["p_phi_residual_max"] = float(p_phi_identity_residual(trace).max())
    else:
        out["multiplier_residual"] = None
        out["p_phi_residual_max"] = None
    return out


def run_experiment(cfg: ExperimentConfig, out_dir=None, restart=None) -> dict:
    """Simulate ``cfg`` into ``out_dir`` and return the manifest.

    ``restart`` names a checkpoint file; records up to its time are taken
    over from the trace.csv that sits next to it.
    """
    started = time.perf_counter()
    out = Path(out_dir or cfg.output_dir)
    (out / "snapshots").mkdir(parents=True, exist_ok=True)
    prob = build_problem(cfg)
    chash = cfg.hash()
    with open(out / "config.json", "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)

    stepper = Stepper(prob.ops, prob.fb, prob.dt, SolverConfig(**cfg.solver), scheme=cfg.scheme)
    if restart is not None:
        t0, state, h0 = load_checkpoint(restart)
        if h0 != chash:
            raise ConfigError("checkpoint belongs to a different config")
        k0 = int(round(t0 / prob.dt))
        prior = [r for r in read_trace_csv(Path(restart).parent / "trace.csv")
                 if r.t <= t0 * (1 + 1e-12)]
    else:
        k0, state = 0, initial_state(prob)
        prior = [stepper.record(0.0, state)]

    records = list(prior)
    snaps = []
    every = cfg.snapshot_every

    def snap(k, st):
        if every and k % every == 0:
            np.savez(out / "snapshots" / f"snap_{k:06d}.npz", t=k * prob.dt, u=st.u, v=st.v)
            snaps.append((k * prob.dt, st.copy()))

    if restart is not None and every:
        src = Path(restart).parent / "snapshots"
        same = src.resolve() == (out / "snapshots").resolve()
        for f in sorted(src.glob("snap_*.npz")):
            k = int(f.stem.split("_")[1])
            if k > k0:
                continue
            with np.load(f) as z:
                t_s, u_s, v_s = float(z["t"]), z["u"].copy(), z["v"].copy()
            if not same:
                np.savez(out / "snapshots" / f.name, t=t_s, u=u_s, v=v_s)
            snaps.append((t_s, State(u_s, v_s)))
    else:
        snap(0, state)

    status, error = "ok", None
    with open(out / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for rec in records:
            w.writerow(_row(rec))
        for k in range(k0 + 1, prob.n_steps + 1):
            try:
                state, rec = stepper.step(state)
            except NonconvergenceError as exc:
                status, error = "failed", str(exc)
                break
            rec.t = k * prob.dt
            records.append(rec)
            w.writerow(_row(rec))
            snap(k, state)
        fh.flush()
    t_last = records[-1].t
    write_checkpoint(out / "checkpoint.json", t_last, state, chash)

    trace = Trace(records, snaps, prob.ops, prob.fb,
                  {"r": cfg.r, "x0": list(prob.x0), "nonlinearity": cfg.nonlinearity,
                   "dt": prob.dt})
    metrics = summary_metrics(trace, prob.x0, cfg.r) if len(records) > 1 else {}
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "config_hash": chash,
        "artifact_version": __version__,
        "status": status,
        "error": error,
        "wall_clock_s": time.perf_counter() - started,
        "dt": prob.dt,
        "n_steps": prob.n_steps,
        "n_dofs": prob.ops.n,
        "validation": validate_config(cfg),
        "files": {str(p.relative_to(out)): _sha256(p) for p in files},
        "summary": metrics,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


# analysis of a run directory ------------------------------------------------

def load_run(run_dir) -> Trace:
    run = Path(run_dir)
    if not (run / "trace.csv").is_file() or not (run / "manifest.json").is_file():
        raise InvalidArgumentError(f"{run} is not a complete run directory")
    records = read_trace_csv(run / "trace.csv")
    meta = {}
    ops = fb = None
    snaps = []
    if (run / "config.json").is_file():
        cfg = load_config(run / "config.json")
        prob = build_problem(cfg)
        ops, fb = prob.ops, prob.fb
        meta = {"r": cfg.r, "x0": list(prob.x0), "dt": prob.dt, "config": cfg.to_dict()}
        for f in sorted((run / "snapshots").glob("snap_*.npz")):
            with np.load(f) as z:
                snaps.append((float(z["t"]), State(z["u"].copy(), z["v"].copy())))
    return Trace(records, snaps, ops, fb, meta)


def _parse_interval(text):
    if text is None:
        return None
    if isinstance(text, (tuple, list)):
        return float(text[0]), float(text[1])
    a, b = text.split(":")
    return float(a), float(b)


def analyze_run(run_dir, r=None, window=None, tau=None, svg=False, out_dir=None) -> dict:
    run = Path(run_dir)
    out = Path(out_dir or run)
    out.mkdir(parents=True, exist_ok=True)
    trace = load_run(run)
    r = float(r if r is not None else trace.meta.get("r", 2.0))
    t, E = trace.times, trace.energies
    window = _parse_interval(window)
    tau = _parse_interval(tau)
    extra = {"r": r, "errors": {}}

    fit = None
    try:
        fit = fit_decay(trace, window or (max(t[-1] / 10.0, t[t > 0][0]), t[-1]))
    except InvalidArgumentError as exc:
        extra["errors"]["fit"] = str(exc)
    extra["fit_rejected"] = fit is None or fit.no_decay
    if fit is not None and fit.no_decay:
        extra["errors"]["fit"] = "no decay"

    kom = None
    try:
        kom = komornik_check(t, E, (r - 1.0) / 2.0)
    except InvalidArgumentError as exc:
        extra["errors"]["komornik"] = str(exc)

    mon = None
    try:
        mon = polynomial_bound_monitor(trace, r)
        write_bound_csv(mon, out / "bound_monitor.csv")
    except InvalidArgumentError as exc:
        extra["errors"]["bound_monitor"] = str(exc)

    mult = None
    if trace.ops is not None and len(trace.snapshots) >= 2:
        t1, t2 = tau or (trace.snapshot_times[0], trace.snapshot_times[-1])
        try:
            mult = multiplier_identity_residual(trace, t1, t2, r, trace.meta["x0"])
            extra["p_phi_residual_max"] = float(p_phi_identity_residual(trace).max())
        except InvalidArgumentError as exc:
            extra["errors"]["multiplier"] = str(exc)
    else:
        extra["errors"]["multiplier"] = "no snapshots or config in run directory"

    report = analysis_report(fit, kom, mult, mon, extra)
    write_report(report, out / "analysis.json")
    if svg:
        series = [("energy", t, E)]
        if fit is not None:
            series.append(("fit", t[t > 0], fit.c * t[t > 0] ** (-fit.alpha)))
        line_chart(series, out / "energy.svg", logx=True, logy=True,
                   title="energy", ylabel="E(t)")
    return report


# sweeps -----------------------------------------------------------------

def set_dotted(d: dict, key: str, value) -> None:
    parts = key.split(".")
    for p in parts[:-1]:
        d = d.setdefault(p, {})
    d[parts[-1]] = value


def expand_sweep(spec: dict) -> list:
    """Return a list of config dicts: explicit ``overrides`` then the ``grid`` product."""
    base = spec.get("base")
    if base is None:
        raise ConfigError("sweep config needs a 'base' config")
    if isinstance(base, str):
        with open(base) as fh:
            base = json.load(fh)
    points = [dict(o) for o in spec.get("overrides", [])]
    grid = spec.get("grid", {})
    if grid:
        keys = sorted(grid)
        for combo in itertools.product(*(grid[k] for k in keys)):
            points.append(dict(zip(keys, combo)))
    if not points:
        points = [{}]
    out = []
    for o in points:
        d = copy.deepcopy(base)
        for k, v in o.items():
            set_dotted(d, k, v)
        out.append(d)
    return out


SUMMARY_COLUMNS = ("index", "config_hash", "status", "final_energy", "alpha",
                   "multiplier_residual", "early_dissipation", "error")


def _sweep_one(args):
    idx, data, run_dir = args
    row = {"index": idx, "config_hash": "", "status": "failed", "final_energy": None,
           "alpha": None, "multiplier_residual": None, "early_dissipation": None, "error": ""}
    try:
        cfg = ExperimentConfig.from_dict(data)
        row["config_hash"] = cfg.hash()
        man = run_experiment(cfg, run_dir)
        row["status"] = man["status"]
        row["error"] = man["error"] or ""
        summ = man["summary"]
        row["final_energy"] = summ.get("final_energy")
        row["alpha"] = summ.get("alpha")
        row["multiplier_residual"] = summ.get("multiplier_residual")
        recs = read_trace_csv(Path(run_dir) / "trace.csv")
        n = max(1, len(recs) // 10)
        row["early_dissipation"] = float(np.mean([r.dissipation for r in recs[1:n + 1]]))
    except Exception as exc:  # a failing point must not stop the sweep
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def run_sweep(spec: dict, out_dir, jobs: int = 1) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    configs = expand_sweep(spec)
    tasks = [(i, c, str(out / f"run_{i:03d}")) for i, c in enumerate(configs)]
    if jobs <= 1:
        rows = [_sweep_one(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_one, tasks))
    rows.sort(key=lambda r: r["index"])
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for row in rows:
            w.writerow(["" if row[c] is None else _fmt(row[c]) for c in SUMMARY_COLUMNS])
    return rows


def default_jobs() -> int:
    return max(1, (os.cpu_count() or 1))

"""Post-processing of simulated trajectories.

Everything here is a pure function of a :class:`Trace`.  Volume integrals
that involve the multiplier field h = x - x0 are evaluated element by
element with the edge-midpoint rule, which is exact for the quadratic
integrands that P1 data produce.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .elliptic import DiscreteOperators, element_gradient, nodal_gradient
from .errors import InvalidArgumentError, NonconvergenceError
from .feedback import BoundaryFeedback, dissipation, phi
from .mesh import GAMMA0, h_dot_nu
from .stepper import SolverConfig, State, StepRecord, Stepper, energy

EPS = 1e-300


@dataclass
class Trace:
    """Step records plus optional state snapshots.

    ``snapshots`` is a list of ``(t, State)`` pairs.  ``meta`` carries run
    metadata such as ``r``, ``x0``, ``dt`` and the nonlinearity spec.
    """

    records: list
    snapshots: list = field(default_factory=list)
    ops: Optional[DiscreteOperators] = None
    fb: Optional[BoundaryFeedback] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = self.times
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise InvalidArgumentError("trace times must be strictly increasing")
        if np.any(self.energies < 0):
            raise InvalidArgumentError("trace energies must be nonnegative")

    @classmethod
    def from_arrays(cls, t, E, dissipation=None, meta=None) -> "Trace":
        t = np.asarray(t, float)
        E = np.asarray(E, float)
        d = np.zeros_like(t) if dissipation is None else np.asarray(dissipation, float)
        recs = [StepRecord(float(a), float(b), float(c), float("nan"), 0, 0.0)
                for a, b, c in zip(t, E, d)]
        return cls(recs, meta=dict(meta or {}))

    @property
    def times(self) -> np.ndarray:
        return np.array([r.t for r in self.records], dtype=float)

    @property
    def energies(self) -> np.ndarray:
        return np.array([r.energy for r in self.records], dtype=float)

    @property
    def dissipations(self) -> np.ndarray:
        return np.array([r.dissipation for r in self.records], dtype=float)

    @property
    def kato_norms(self) -> np.ndarray:
        return np.array([r.kato_norm for r in self.records], dtype=float)

    @property
    def snapshot_times(self) -> np.ndarray:
        return np.array([t for t, _ in self.snapshots], dtype=float)

    def snapshots_in(self, t1, t2):
        tol = 1e-9 * max(1.0, abs(t2))
        return [(t, s) for t, s in self.snapshots if t1 - tol <= t <= t2 + tol]


def simulate(ops: DiscreteOperators, fb: BoundaryFeedback, x0: State, dt: float,
             n_steps: int, cfg: SolverConfig | None = None, scheme: str = "euler",
             snapshot_every: int = 5, meta=None, callback=None) -> Trace:
    """Step ``n_steps`` times from ``x0`` and collect a :class:`Trace`.

    ``snapshot_every = 0`` disables snapshots.  ``callback(k, state, record)``
    is invoked after every step (used for checkpointing).
    """
    stepper = Stepper(ops, fb, dt, cfg, scheme=scheme)
    state = x0.copy()
    records = [stepper.record(0.0, state)]
    snaps = [(0.0, state.copy())] if snapshot_every else []
    meta = dict(meta or {})
    meta.setdefault("dt", float(dt))
    meta.setdefault("scheme", scheme)
    trace = Trace(records, snaps, ops, fb, meta)
    for k in range(1, n_steps + 1):
        try:
            state, rec = stepper.step(state, k * dt - dt)
        except NonconvergenceError as exc:
            exc.trace = trace
            raise
        rec.t = k * dt
        records.append(rec)
        if snapshot_every and k % snapshot_every == 0:
            snaps.append((rec.t, state.copy()))
        if callback is not None:
            callback(k, state, rec)
    trace.meta["final_state"] = state
    return trace


# p-variable -------------------------------------------------------------

def p_reconstruct(ops: DiscreteOperators, v) -> np.ndarray:
    """p = A⁻¹v with zero boundary trace."""
    return ops.solve_A(v)


def p_phi_identity_residual(trace: Trace) -> np.ndarray:
    """Per-interval ‖u^{n+½} + (p^{n+1} - p^n)/Δt + Φ^{n+½}‖ between snapshots.

    Values are relative to the largest ‖u‖ over the snapshots, so intervals
    where u passes through zero do not blow up.
    """
    if len(trace.snapshots) < 2:
        raise InvalidArgumentError("need at least two snapshots")
    ops, fb = trace.ops, trace.fb
    scale = max(ops.l2_norm(s.u) for _, s in trace.snapshots)
    if scale == 0:
        return np.zeros(len(trace.snapshots) - 1)
    out = []
    prev_t, prev = trace.snapshots[0]
    p_prev = ops.solve_A(prev.v)
    phi_prev = phi(ops, fb, prev.v)
    for t, s in trace.snapshots[1:]:
        p = ops.solve_A(s.v)
        ph = phi(ops, fb, s.v)
        r = 0.5 * (s.u + prev.u) + (p - p_prev) / (t - prev_t) + 0.5 * (ph + phi_prev)
        out.append(ops.l2_norm(r) / scale)
        prev_t, prev, p_prev, phi_prev = t, s, p, ph
    return np.array(out)


def p_prime_l2_residual(trace: Trace) -> float:
    """Time-integrated |∫|p'|² - ∫|u|² - ∫(2Φu + Φ²)| relative to ∫∫|p'|²."""
    if len(trace.snapshots) < 2:
        raise InvalidArgumentError("need at least two snapshots")
    ops, fb = trace.ops, trace.fb
    lhs = rhs = 0.0
    for (t0, a), (t1, b) in zip(trace.snapshots[:-1], trace.snapshots[1:]):
        dt = t1 - t0
        dp = (ops.solve_A(b.v) - ops.solve_A(a.v)) / dt
        um = 0.5 * (a.u + b.u)
        pm = 0.5 * (phi(ops, fb, a.v) + phi(ops, fb, b.v))
        lhs += dt * ops.l2_inner(dp, dp)
        rhs += dt * (ops.l2_inner(um, um) + 2 * ops.l2_inner(pm, um) + ops.l2_inner(pm, pm))
    return abs(lhs - rhs) / max(abs(lhs), EPS)


# multiplier ---------------------------------------------------------------

def multiplier_apply(ops: DiscreteOperators, x0, p) -> np.ndarray:
    """Nodal ℳp = 2(x - x0)·∇p + p with recovered nodal gradients (d = 2)."""
    h = ops.mesh.nodes - np.asarray(x0, dtype=float)
    return 2.0 * np.einsum("ij,ij->i", h, nodal_gradient(ops, p)) + np.asarray(p, float)


def _h_grad_integral(ops: DiscreteOperators, x0, a, b) -> float:
    """Exact ∫ a · 2h·∇b for P1 fields a, b."""
    mesh = ops.mesh
    tri = mesh.triangles
    gb = element_gradient(ops, b)
    a = np.asarray(a, float)
    total = np.zeros(len(tri))
    for i, j in ((0, 1), (1, 2), (2, 0)):
        mid = 0.5 * (mesh.nodes[tri[:, i]] + mesh.nodes[tri[:, j]]) - x0
        total += 0.5 * (a[tri[:, i]] + a[tri[:, j]]) * np.einsum("tk,tk->t", mid, gb)
    return float(2.0 * np.sum(mesh.areas / 3.0 * total))


def _edge_weighted_square(ops: DiscreteOperators, hn, values_b) -> float:
    """Σ_edges (h·ν)∫_edge w² for a boundary-nodal field w (consistent edge mass)."""
    mesh = ops.mesh
    ia = ops.boundary_index(mesh.boundary_edges[:, 0])
    ib = ops.boundary_index(mesh.boundary_edges[:, 1])
    a, b = values_b[ia], values_b[ib]
    return float(np.sum(hn * mesh.edge_lengths / 3.0 * (a * a + a * b + b * b)))


@dataclass
class MultiplierTerms:
    lhs: float
    bracket: float
    boundary_gamma: float
    boundary_gamma0: float
    volume: float
    energy_derivative: float
    residual: float

    @property
    def rhs(self) -> float:
        return (self.bracket + self.boundary_gamma + self.boundary_gamma0
                + self.volume + self.energy_derivative)


def _trapz(y, t) -> float:
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(t)))


def multiplier_identity_terms(trace: Trace, tau1: float, tau2: float, r: float,
                              x0) -> MultiplierTerms:
    if r < 2:
        raise InvalidArgumentError(f"multiplier identity needs r >= 2, got {r}")
    snaps = trace.snapshots_in(tau1, tau2)
    if len(snaps) < 2:
        raise InvalidArgumentError(f"fewer than two snapshots in [{tau1}, {tau2}]")
    ops, fb = trace.ops, trace.fb
    x0 = np.asarray(x0, dtype=float)
    hn = h_dot_nu(ops.mesh, x0)
    g = fb.nonlinearity
    hn0 = np.where(ops.mesh.edge_labels == GAMMA0, hn, 0.0)
    bmask = fb.mask

    t = np.array([s[0] for s in snaps])
    E = np.empty(len(t))
    uMp = np.empty(len(t))
    bnd_g = np.empty(len(t))
    bnd_0 = np.empty(len(t))
    vol = np.empty(len(t))
    diss = np.empty(len(t))
    for k, (_, s) in enumerate(snaps):
        p = ops.solve_A(s.v)
        E[k] = energy(ops, s)
        uMp[k] = _h_grad_integral(ops, x0, s.u, p) + ops.l2_inner(s.u, p)
        dn = -ops.dstar(s.v)          # ∂ν p
        gs = bmask * g(ops.dstar(s.v))
        bnd_g[k] = _edge_weighted_square(ops, hn, dn)
        bnd_0[k] = -_edge_weighted_square(ops, hn0, gs)
        ph = phi(ops, fb, s.v)
        vol[k] = -(3.0 * ops.l2_inner(ph, s.u) + _h_grad_integral(ops, x0, ph, s.u))
        diss[k] = dissipation(ops, fb, s.v)

    w = E ** ((r - 1) / 2)
    lhs = 2.0 * _trapz(E ** ((r + 1) / 2), t)
    bracket = w[-1] * uMp[-1] - w[0] * uMp[0]
    bg = _trapz(w * bnd_g, t)
    b0 = _trapz(w * bnd_0, t)
    with np.errstate(divide="ignore", invalid="ignore"):
        wp = np.where(E > 0, E ** ((r - 3) / 2), 0.0)
    dE = -((r - 1) / 2) * _trapz(-diss * wp * uMp, t)
    volume = _trapz(w * vol, t)
    rhs = bracket + bg + b0 + volume + dE
    res = abs(lhs - rhs) / (abs(lhs) + abs(rhs) + EPS)
    if lhs == 0 and rhs == 0:
        res = 0.0
    return MultiplierTerms(lhs, bracket, bg, b0, volume, dE, res)


def multiplier_identity_residual(trace: Trace, tau1: float, tau2: float, r: float,
                                 x0) -> float:
    """|LHS - RHS| / (|LHS| + |RHS| + ε) of the weighted multiplier identity."""
    return multiplier_identity_terms(trace, tau1, tau2, r, x0).residual


# decay fitting ------------------------------------------------------------

@dataclass
class DecayFit:
    alpha: float
    c: float
    window: tuple
    residual: float
    n_samples: int
    no_decay: bool

    def to_dict(self):
        d = asdict(self)
        d["window"] = list(self.window)
        return d


NO_DECAY_ALPHA = 1e-2


def _select(trace: Trace, window):
    t, E = trace.times, trace.energies
    if window is None:
        window = (t[t > 0][0] if np.any(t > 0) else 0.0, t[-1])
    t1, t2 = map(float, window)
    if t1 < t[0] - 1e-12 or t2 > t[-1] + 1e-12 or t1 >= t2:
        raise InvalidArgumentError(f"window {window} outside trace range [{t[0]}, {t[-1]}]")
    sel = (t >= t1) & (t <= t2) & (t > 0)
    return t[sel], E[sel], (t1, t2)


def fit_decay(trace: Trace, window=None) -> DecayFit:
    """Least-squares line through (log t, log ℰ); alpha = -slope."""
    t, E, window = _select(trace, window)
    if len(t) < 10:
        raise InvalidArgumentError(f"window holds {len(t)} samples, need >= 10")
    if np.any(E <= 0):
        raise InvalidArgumentError("nonpositive energy in fit window")
    X, Y = np.log(t), np.log(E)
    slope, icpt = np.polyfit(X, Y, 1)
    rms = float(np.sqrt(np.mean((Y - (slope * X + icpt)) ** 2)))
    alpha = -float(slope)
    return DecayFit(alpha, float(np.exp(icpt)), window, rms, int(len(t)),
                    bool(alpha < NO_DECAY_ALPHA))


# Komornik lemma -----------------------------------------------------------

@dataclass
class KomornikResult:
    T_estimate: float
    conclusion_holds: bool
    hypothesis_holds: bool
    unbounded: bool
    tail_model: dict
    T_finite_horizon: float
    worst_margin: float

    def to_dict(self):
        return asdict(self)


def _power_tail(t, E):
    """Fit E ≈ c t^{-a} on the last quarter of samples."""
    n = len(t)
    sel = slice(max(0, n - max(n // 4, 2)), n)
    ts, Es = t[sel], E[sel]
    ok = (ts > 0) & (Es > 0)
    if ok.sum() < 2:
        return {"model": "power", "a": 0.0, "c": float(E[-1])}
    slope, icpt = np.polyfit(np.log(ts[ok]), np.log(Es[ok]), 1)
    return {"model": "power", "a": float(-slope), "c": float(np.exp(icpt))}


def komornik_check(times, E, gamma: float) -> KomornikResult:
    """Estimate the smallest T for the integral hypothesis and test the conclusion.

    The tail beyond the last sample follows a power law fitted to the last
    quarter of samples; it is integrated in closed form.  A tail exponent
    that makes ∫E^{γ+1} diverge gives ``unbounded = True``.
    """
    t = np.asarray(times, float)
    E = np.asarray(E, float)
    if not gamma > 0:
        raise InvalidArgumentError("gamma must be positive")
    if len(t) < 4 or np.any(np.diff(t) <= 0):
        raise InvalidArgumentError("need >= 4 samples at increasing times")
    if np.any(np.diff(E) > 1e-10):
        raise InvalidArgumentError("samples must be nonincreasing")
    E0 = E[0]
    if not E0 > 0:
        raise InvalidArgumentError("E(0) must be positive")
    f = E ** (gamma + 1)
    seg = 0.5 * (f[1:] + f[:-1]) * np.diff(t)
    tail_int = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
    tail = _power_tail(t, E)
    expo = tail["a"] * (gamma + 1)
    T_end = t[-1]
    if expo > 1 and T_end > 0:
        extra = tail["c"] ** (gamma + 1) * T_end ** (1 - expo) / (expo - 1)
    else:
        extra = np.inf
    pos = E > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        finite_ratio = np.where(pos, tail_int / (E0 ** gamma * E), 0.0)
        ratio = np.where(pos, (tail_int + extra) / (E0 ** gamma * E), 0.0)
    T_fin = float(finite_ratio.max())
    T_est = float(ratio.max())
    unbounded = not np.isfinite(T_est)
    tail["integral_beyond_T_max"] = float(extra)
    if unbounded:
        return KomornikResult(T_est, False, False, True, tail, T_fin, float("nan"))
    bound = E0 * ((T_est + gamma * t) / (T_est + gamma * T_est)) ** (-1.0 / gamma)
    after = t >= T_est
    margin = bound[after] - E[after]
    ok = bool(np.all(margin >= -1e-12 * E0))
    worst = float(margin.min()) if margin.size else float("inf")
    return KomornikResult(T_est, ok, True, False, tail, T_fin, worst)


# polynomial bound -----------------------------------------------------------

@dataclass
class BoundMonitor:
    max_value: float
    ratio: float
    t0: float
    exponent: float
    times: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)

    def to_dict(self):
        return {"max": self.max_value, "ratio": self.ratio, "t0": self.t0,
                "exponent": self.exponent}


def polynomial_bound_monitor(trace: Trace, r: float, t0: float | None = None) -> BoundMonitor:
    """Statistics of q(t) = t^{2/(r-1)} ℰ(t) over t ≥ t0.

    ``ratio`` compares the maximum over the last quarter of [t0, t_end] with
    the maximum over the second quarter.
    """
    if r < 2:
        raise InvalidArgumentError(f"need r >= 2, got {r}")
    t, E = trace.times, trace.energies
    if t0 is None:
        t0 = t[-1] / 10.0
    if not t0 > 0 or t[-1] < 10.0 * t0 * (1 - 1e-12):
        raise InvalidArgumentError(f"trace must span a decade past t0={t0} (ends at {t[-1]})")
    sel = t >= t0
    ts, Es = t[sel], E[sel]
    k = 2.0 / (r - 1)
    q = ts ** k * Es
    edges = t0 + (ts[-1] - t0) * np.array([0.25, 0.5, 0.75])
    second = q[(ts >= edges[0]) & (ts <= edges[1])]
    last = q[ts >= edges[2]]
    if second.size == 0 or last.size == 0:
        raise InvalidArgumentError("too few samples per quarter")
    m2 = second.max()
    ratio = float(last.max() / m2) if m2 > 0 else (0.0 if last.max() == 0 else float("inf"))
    return BoundMonitor(float(q.max()), ratio, float(t0), k, ts, q)


# reports ----------------------------------------------------------------

def write_bound_csv(monitor: BoundMonitor, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "monitored"])
        for a, b in zip(monitor.times, monitor.values):
            w.writerow([f"{a:.16e}", f"{b:.16e}"])


def analysis_report(fit=None, komornik=None, multiplier=None, monitor=None, extra=None) -> dict:
    rep = {
        "fit": fit.to_dict() if fit is not None else None,
        "komornik": komornik.to_dict() if komornik is not None else None,
        "multiplier_residual": multiplier,
        "bound_monitor": monitor.to_dict() if monitor is not None else None,
    }
    if extra:
        rep.update(extra)
    return rep


def write_report(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, default=_json_default)


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj).__name__)

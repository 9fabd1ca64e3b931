"""Closed-loop generator, monotone resolvent and implicit time stepping.

The state [u, v] holds position u ∈ L²(Ω) and velocity v ∈ H⁻¹(Ω), both as
P1 coefficient vectors.  One implicit Euler step is one resolvent solve

    λ⁻¹v + D P g(D*v) + λ A⁻¹v = A⁻¹f₂ - λ⁻¹f₁,   u = λ⁻¹(f₁ + v),

with λ = 1/dt and [f₁, f₂] = λ[uⁿ, vⁿ].  Writing s = D*v reduces the
nonlinear part to the boundary: with L = λ⁻¹I + λA⁻¹ (linear, SPD in the
mass inner product) and S = D* L⁻¹ D,

    s + S P g(s) = D* L⁻¹ rhs,   v = L⁻¹(rhs - D P g(s)),

a system of boundary size that semismooth Newton solves to round-off.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .elliptic import DiscreteOperators
from .errors import InvalidArgumentError, NonconvergenceError, PreconditionError
from .feedback import BoundaryFeedback, dissipation, feedback_trace, phi

log = logging.getLogger(__name__)


@dataclass
class State:
    u: np.ndarray
    v: np.ndarray

    def copy(self) -> "State":
        return State(self.u.copy(), self.v.copy())

    def __sub__(self, other: "State") -> "State":
        return State(self.u - other.u, self.v - other.v)

    @classmethod
    def zeros(cls, n: int) -> "State":
        return cls(np.zeros(n), np.zeros(n))


@dataclass
class SolverConfig:
    """Resolvent solver settings.

    ``lam`` is normally left as None and set to 1/dt by the stepper.
    ``relaxation`` and ``acceleration`` only affect the fixed-point method;
    a relaxation of None picks the contraction-guaranteeing value from the
    measured monotonicity and Lipschitz constants.
    """

    lam: Optional[float] = None
    tol: float = 1e-10
    max_iter: int = 500
    relaxation: Optional[float] = None
    acceleration: bool = False
    method: str = "newton"

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidArgumentError("tol must be positive")
        if self.relaxation is not None and not 0 < self.relaxation <= 1:
            raise InvalidArgumentError("relaxation must lie in (0, 1]")
        if self.max_iter < 1:
            raise InvalidArgumentError("max_iter must be at least 1")
        if self.method not in ("newton", "picard"):
            raise InvalidArgumentError(f"unknown solver method {self.method!r}")

    def to_dict(self) -> dict:
        return {"tol": self.tol, "max_iter": self.max_iter, "relaxation": self.relaxation,
                "acceleration": self.acceleration, "method": self.method}


@dataclass
class StepRecord:
    t: float
    energy: float
    dissipation: float
    kato_norm: float
    iterations: int
    residual: float

    def as_row(self):
        return [self.t, self.energy, self.dissipation, self.kato_norm,
                self.iterations, self.residual]


# energy-space quantities ---------------------------------------------------

def energy(ops: DiscreteOperators, state: State) -> float:
    """½(‖u‖²_L² + ‖v‖²_H⁻¹)."""
    return 0.5 * (ops.l2_inner(state.u, state.u) + ops.hminus1_norm(state.v) ** 2)


def hnorm(ops: DiscreteOperators, state: State) -> float:
    return float(np.sqrt(2.0 * energy(ops, state)))


def hdistance(ops: DiscreteOperators, x: State, y: State) -> float:
    return hnorm(ops, x - y)


def theta_apply(ops: DiscreteOperators, fb: BoundaryFeedback, lam: float, v) -> np.ndarray:
    """Θ(v) = λ⁻¹v + DPg(D*v) + λA⁻¹v."""
    if not lam > 0:
        raise InvalidArgumentError("lambda must be positive")
    v = np.asarray(v, dtype=float)
    return v / lam + phi(ops, fb, v) + lam * ops.solve_A(v)


def domain_residual(ops: DiscreteOperators, fb: BoundaryFeedback, state: State) -> float:
    """max |trace(u + Φ(v))|; zero for states in the discrete generator domain."""
    return float(np.max(np.abs(state.u[ops.boundary] - feedback_trace(ops, fb, state.v)), initial=0.0))


def apply_generator(ops: DiscreteOperators, fb: BoundaryFeedback, state: State, tol=1e-8):
    """𝒜[u, v] = [-v, A(u + Φ(v))] and its energy-space norm."""
    w = state.u + phi(ops, fb, state.v)
    res = float(np.max(np.abs(w[ops.boundary]), initial=0.0))
    if res > tol * max(1.0, float(np.max(np.abs(state.u), initial=0.0))):
        raise PreconditionError(f"state is not in the generator domain (trace residual {res:.3e})")
    w[ops.boundary] = 0.0
    second = ops.apply_A(w)
    image = State(-state.v, second)
    kato = float(np.sqrt(ops.l2_inner(state.v, state.v) + ops.hminus1_norm(second) ** 2))
    return image, kato


def make_strong_data(ops: DiscreteOperators, fb: BoundaryFeedback, w, z) -> State:
    """Overwrite the boundary values of ``w`` so that [w, z] lies in the domain."""
    u = np.array(w, dtype=float, copy=True)
    z = np.array(z, dtype=float, copy=True)
    u[ops.boundary] = feedback_trace(ops, fb, z)
    return State(u, z)


# resolvent -----------------------------------------------------------------

class _Reduced:
    """λ-dependent pieces of the boundary-reduced resolvent equation."""

    def __init__(self, ops: DiscreteOperators, mask: np.ndarray, lam: float):
        self.ops = ops
        self.lam = lam
        self.lu = ops.shifted_solver(lam)
        self.active = np.flatnonzero(mask > 0)
        if len(self.active):
            D = ops.dirichlet_matrix[:, self.active]
            self.LinvD = self.Linv(D)
            self.S = ops.dstar_matrix(self.LinvD)
        else:
            self.LinvD = np.zeros((ops.n, 0))
            self.S = np.zeros((ops.n_boundary, 0))
        self.S00 = self.S[self.active]

    def Linv(self, y):
        """Inverse of v ↦ λ⁻¹v + λA⁻¹v."""
        ops, lam = self.ops, self.lam
        My = ops.mass @ y
        q = self.lu.solve(np.ascontiguousarray(My[ops.interior]))
        v = lam * np.asarray(y, dtype=float)
        v[ops.interior] -= lam * lam * lam * q
        return v


class ResolventSolver:
    """Solves 𝒜[u, v] + λ[u, v] = [f₁, f₂] for one operator set and feedback."""

    def __init__(self, ops: DiscreteOperators, fb: BoundaryFeedback):
        self.ops = ops
        self.fb = fb
        self._reduced = {}
        self._picard_constants = {}

    def reduced(self, lam) -> _Reduced:
        key = float(lam)
        if key not in self._reduced:
            self._reduced[key] = _Reduced(self.ops, self.fb.mask, key)
        return self._reduced[key]

    def rhs(self, lam, f1, f2) -> np.ndarray:
        return self.ops.solve_A(f2) - np.asarray(f1, float) / lam

    def solve(self, cfg: SolverConfig, f1, f2, guess=None):
        """Return (State, iterations, relative residual)."""
        lam = cfg.lam
        if lam is None or not lam > 0:
            raise InvalidArgumentError("SolverConfig.lam must be set to a positive value")
        rhs = self.rhs(lam, f1, f2)
        if cfg.method == "newton":
            v, iters = self._newton(cfg, lam, rhs, guess)
        else:
            v, iters = self._picard(cfg, lam, rhs, guess)
        res = self.residual(lam, v, rhs)
        if res > cfg.tol:
            raise NonconvergenceError(
                f"resolvent residual {res:.3e} above tol {cfg.tol:.1e}", res, iters)
        u = (np.asarray(f1, float) + v) / lam
        return State(u, v), iters, res

    def residual(self, lam, v, rhs) -> float:
        ops = self.ops
        r = theta_apply(ops, self.fb, lam, v) - rhs
        return ops.l2_norm(r) / (1.0 + ops.l2_norm(rhs))

    def _newton(self, cfg, lam, rhs, guess):
        red = self.reduced(lam)
        g = self.fb.nonlinearity
        base = red.Linv(rhs)
        if len(red.active) == 0:
            return base, 0
        b = self.ops.dstar(base)[red.active]
        w = self.ops.boundary_weights[red.active]
        s = b.copy() if guess is None else self.ops.dstar(guess)[red.active]

        def F(x):
            return x + red.S00 @ g(x) - b

        def norm(x):
            return float(np.sqrt(np.sum(w * x * x)))

        scale = 1.0 + norm(b)
        r = F(s)
        nr = norm(r)
        it = 0
        eye = np.eye(len(s))
        # iterate past tol until round-off stops the decrease; a converged
        # piecewise-linear active set makes the last step exact
        while it < cfg.max_iter and nr > 1e-3 * cfg.tol * scale:
            it += 1
            J = eye + red.S00 * g.slope(s)[None, :]
            step = sla.solve(J, -r, check_finite=False)
            t = 1.0
            while True:
                trial = s + t * step
                rt = F(trial)
                nt = norm(rt)
                if nt <= (1.0 - 1e-4 * t) * nr or t < 1e-10:
                    break
                t *= 0.5
            if nt >= nr:
                if nr <= cfg.tol * scale:
                    break
                # stalled at a kink; a relaxed fixed-point sweep moves off it
                trial = s - r / (1.0 + np.abs(red.S00).sum(axis=1).max())
                rt = F(trial)
                nt = norm(rt)
            s, r, nr = trial, rt, nt
        if nr > cfg.tol * scale:
            raise NonconvergenceError(
                f"Newton stopped after {it} iterations with residual {nr / scale:.3e}",
                nr / scale, it)
        return base - red.LinvD @ g(s), it

    def picard_relaxation(self, lam) -> float:
        """Zarantonello step m/L² for Θ, expressed as the factor multiplying λ."""
        key = float(lam)
        if key not in self._picard_constants:
            ops = self.ops
            lam1 = float(ops.dirichlet_eigenvalues(1)[0])
            c_d = ops.feedback_operator_norm(self.fb.mask)
            m = 1.0 / lam
            lip = 1.0 / lam + self.fb.nonlinearity.lipschitz_constant * c_d + lam / lam1
            self._picard_constants[key] = min(1.0, m / (lip * lip) / lam)
        return self._picard_constants[key]

    def _picard(self, cfg, lam, rhs, guess):
        """Damped fixed point v ← v - ωλ(Θ(v) - rhs), optionally Anderson-accelerated."""
        ops = self.ops
        omega = cfg.relaxation if cfg.relaxation is not None else self.picard_relaxation(lam)
        v = np.zeros(ops.n) if guess is None else np.array(guess, dtype=float)
        scale = 1.0 + ops.l2_norm(rhs)
        hist_x, hist_f = [], []
        depth = 5
        for it in range(1, cfg.max_iter + 1):
            r = theta_apply(ops, self.fb, lam, v) - rhs
            if ops.l2_norm(r) <= cfg.tol * scale:
                return v, it - 1
            fx = -omega * lam * r
            if not cfg.acceleration:
                v = v + fx
                continue
            hist_x.append(v.copy())
            hist_f.append(fx)
            if len(hist_x) > depth + 1:
                hist_x.pop(0)
                hist_f.pop(0)
            if len(hist_f) == 1:
                v = v + fx
                continue
            dF = np.column_stack([hist_f[k + 1] - hist_f[k] for k in range(len(hist_f) - 1)])
            dX = np.column_stack([hist_x[k + 1] - hist_x[k] for k in range(len(hist_x) - 1)])
            gamma, *_ = np.linalg.lstsq(dF, fx, rcond=None)
            v = v + fx - (dX + dF) @ gamma
        r = theta_apply(ops, self.fb, lam, v) - rhs
        res = ops.l2_norm(r) / scale
        if res > cfg.tol:
            raise NonconvergenceError(
                f"fixed-point iteration did not converge (residual {res:.3e})", res, cfg.max_iter)
        return v, cfg.max_iter


def solve_resolvent(ops, fb, cfg: SolverConfig, f1, f2, solver: ResolventSolver = None) -> State:
    """Solution [u, v] of 𝒜[u, v] + λ[u, v] = [f₁, f₂]."""
    solver = solver or ResolventSolver(ops, fb)
    state, _, _ = solver.solve(cfg, f1, f2)
    return state


# time stepping -------------------------------------------------------------

class Stepper:
    """Implicit Euler (``scheme='euler'``) or implicit midpoint (``'midpoint'``).

    The midpoint variant is the reflected resolvent x ↦ 2(I + dt/2 𝒜)⁻¹x - x;
    for linear feedback it is the Crank-Nicolson scheme and conserves energy
    exactly when Γ₀ is empty.
    """

    def __init__(self, ops: DiscreteOperators, fb: BoundaryFeedback, dt: float,
                 cfg: SolverConfig | None = None, scheme: str = "euler"):
        if not dt > 0:
            raise InvalidArgumentError("dt must be positive")
        if scheme not in ("euler", "midpoint"):
            raise InvalidArgumentError(f"unknown scheme {scheme!r}")
        self.ops, self.fb, self.dt, self.scheme = ops, fb, float(dt), scheme
        base = cfg or SolverConfig()
        lam = 1.0 / dt if scheme == "euler" else 2.0 / dt
        self.cfg = SolverConfig(lam=lam, tol=base.tol, max_iter=base.max_iter,
                                relaxation=base.relaxation, acceleration=base.acceleration,
                                method=base.method)
        self.solver = ResolventSolver(ops, fb)

    def step(self, state: State, t: float = 0.0):
        lam = self.cfg.lam
        nxt, iters, res = self.solver.solve(self.cfg, lam * state.u, lam * state.v, guess=state.v)
        if self.scheme == "euler":
            rec = self.record(t + self.dt, nxt, iters, res)
            return nxt, rec
        half = nxt
        nxt = State(2.0 * half.u - state.u, 2.0 * half.v - state.v)
        e = energy(self.ops, nxt)
        d = dissipation(self.ops, self.fb, half.v)
        kato = hdistance(self.ops, nxt, state) / self.dt
        return nxt, StepRecord(t + self.dt, e, d, kato, iters, res)

    def record(self, t, state, iters=0, res=0.0) -> StepRecord:
        e = energy(self.ops, state)
        d = dissipation(self.ops, self.fb, state.v)
        try:
            _, kato = apply_generator(self.ops, self.fb, state)
        except PreconditionError:
            kato = float("nan")
        return StepRecord(t, e, d, kato, iters, res)


def step(state: State, dt: float, ops, fb, cfg: SolverConfig | None = None):
    """One implicit Euler step; returns (next state, StepRecord)."""
    return Stepper(ops, fb, dt, cfg).step(state)

"""Scalar feedback maps and the boundary objects built from them.

The map g is applied nodewise to boundary traces.  Integrals against the
boundary use the lumped boundary mass, which keeps the discrete pairing
(g(a) - g(b), a - b)_Γ₀ a sum of nonnegative terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .elliptic import DiscreteOperators
from .errors import InvalidArgumentError
from .mesh import GAMMA0


@dataclass(frozen=True)
class Sector:
    S: float
    alpha1: float
    alpha2: float

    def __post_init__(self):
        if not self.S > 0:
            raise InvalidArgumentError("sector threshold S must be positive")
        if not 0 < self.alpha1 <= self.alpha2:
            raise InvalidArgumentError("sector slopes need 0 < alpha1 <= alpha2")


@dataclass(frozen=True)
class Nonlinearity:
    """A pointwise feedback map with its declared Lipschitz constant.

    ``derivative`` is optional; when given it must return an element of the
    generalized derivative and is used by the Newton resolvent solver.
    """

    func: Callable[[np.ndarray], np.ndarray]
    lipschitz_constant: float
    sector: Optional[Sector] = None
    name: str = "custom"
    derivative: Optional[Callable[[np.ndarray], np.ndarray]] = None
    spec: dict = field(default_factory=dict, compare=False)

    def __call__(self, s):
        return self.func(np.asarray(s, dtype=float))

    def slope(self, s) -> np.ndarray:
        """Generalized derivative, by finite differences if none was declared."""
        s = np.asarray(s, dtype=float)
        if self.derivative is not None:
            return self.derivative(s)
        eps = 1e-7 * np.maximum(1.0, np.abs(s))
        return (self.func(s + eps) - self.func(s - eps)) / (2 * eps)


def _sat(s, S):
    return np.clip(s, -S, S)


def make_saturation(S: float) -> Nonlinearity:
    """sat_S(s) = s for |s| <= S, S·sign(s) otherwise."""
    if not S > 0:
        raise InvalidArgumentError(f"saturation threshold must be positive, got {S}")
    S = float(S)
    return Nonlinearity(
        func=lambda s: _sat(s, S),
        lipschitz_constant=1.0,
        sector=Sector(S, 1.0, 1.0),
        name=f"sat_{S:g}",
        derivative=lambda s: (np.abs(s) <= S).astype(float),
        spec={"type": "saturation", "S": S},
    )


def make_identity() -> Nonlinearity:
    return Nonlinearity(
        func=lambda s: np.array(s, dtype=float, copy=True),
        lipschitz_constant=1.0,
        sector=Sector(np.inf, 1.0, 1.0),
        name="identity",
        derivative=lambda s: np.ones_like(s, dtype=float),
        spec={"type": "identity"},
    )


def make_scaled_saturation(S: float, slope: float) -> Nonlinearity:
    """slope · sat_S(s)."""
    if not S > 0 or not slope > 0:
        raise InvalidArgumentError("scaled saturation needs S > 0 and slope > 0")
    S, k = float(S), float(slope)
    return Nonlinearity(
        func=lambda s: k * _sat(s, S),
        lipschitz_constant=k,
        sector=Sector(S, k, k),
        name=f"{k:g}*sat_{S:g}",
        derivative=lambda s: k * (np.abs(s) <= S).astype(float),
        spec={"type": "scaled_saturation", "S": S, "slope": k},
    )


def nonlinearity_from_spec(spec: dict) -> Nonlinearity:
    kind = spec.get("type")
    if kind == "saturation":
        return make_saturation(spec.get("S", 1.0))
    if kind == "identity":
        return make_identity()
    if kind == "scaled_saturation":
        return make_scaled_saturation(spec["S"], spec["slope"])
    raise InvalidArgumentError(f"unknown nonlinearity type {kind!r}")


@dataclass
class ValidationReport:
    violations: list

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self):
        return {"passed": self.passed, "violations": list(self.violations)}


def validate_assumptions(nl: Nonlinearity, sample_grid, tol=1e-12) -> ValidationReport:
    """Refute (never prove) the monotonicity, Lipschitz, sign and sector declarations."""
    s = np.unique(np.asarray(sample_grid, dtype=float))
    if not (np.any(s == 0) and np.any(s < 0) and np.any(s > 0)):
        raise InvalidArgumentError("sample grid must contain 0 and points of both signs")
    g = nl(s)
    out = []
    if abs(g[s == 0][0]) > tol:
        out.append("Assumption 1: g(0) != 0")
    dg = np.diff(g)
    ds = np.diff(s)
    if np.any(dg < -tol):
        k = int(np.argmin(dg))
        out.append(f"Assumption 1: g decreases between {s[k]:.6g} and {s[k + 1]:.6g}")
    # the largest pairwise difference quotient is attained on neighbours
    q = np.abs(dg) / ds
    if np.any(q > nl.lipschitz_constant * (1 + 1e-9) + tol):
        out.append(f"Assumption 1: Lipschitz constant {nl.lipschitz_constant:g} "
                   f"exceeded (slope {q.max():.6g})")
    nz = s != 0
    if np.any(np.sign(g[nz]) != np.sign(s[nz])):
        bad = s[nz][np.sign(g[nz]) != np.sign(s[nz])][0]
        out.append(f"Assumption 1: sign(g(s)) != sign(s) at s = {bad:.6g}")
    if nl.sector is not None:
        sec = nl.sector
        inside = nz & (np.abs(s) <= sec.S)
        a = np.abs(s[inside])
        ga = np.abs(g[inside])
        if np.any(ga < sec.alpha1 * a - tol):
            bad = s[inside][ga < sec.alpha1 * a - tol][0]
            out.append(f"Assumption 2: |g(s)| < alpha1|s| at s = {bad:.6g}")
        if np.any(ga > sec.alpha2 * a + tol):
            bad = s[inside][ga > sec.alpha2 * a + tol][0]
            out.append(f"Assumption 2: |g(s)| > alpha2|s| at s = {bad:.6g}")
    return ValidationReport(out)


@dataclass(frozen=True)
class BoundaryFeedback:
    """The nonlinearity together with the 0/1 mask of the projection onto Γ₀."""

    nonlinearity: Nonlinearity
    mask: np.ndarray

    def __post_init__(self):
        self.mask.setflags(write=False)


def gamma0_mask(ops: DiscreteOperators) -> np.ndarray:
    """1 on boundary nodes whose incident boundary edges all lie in Γ₀."""
    mesh = ops.mesh
    bad = np.zeros(ops.n_boundary, dtype=bool)
    e1 = ops.boundary_index(mesh.boundary_edges[mesh.edge_labels != GAMMA0].ravel())
    bad[e1] = True
    return (~bad).astype(float)


def make_feedback(ops: DiscreteOperators, nl: Nonlinearity, mask=None) -> BoundaryFeedback:
    if mask is None:
        mask = gamma0_mask(ops)
    mask = np.asarray(mask, dtype=float).copy()
    if mask.shape != (ops.n_boundary,) or not np.isin(mask, (0.0, 1.0)).all():
        raise InvalidArgumentError("mask must be a 0/1 vector over boundary nodes")
    return BoundaryFeedback(nl, mask)


def feedback_trace(ops: DiscreteOperators, fb: BoundaryFeedback, v) -> np.ndarray:
    """Boundary values -P g(D*v) prescribed for the position field."""
    return -fb.mask * fb.nonlinearity(ops.dstar(v))


def phi(ops: DiscreteOperators, fb: BoundaryFeedback, v) -> np.ndarray:
    """Φ = D P g(D*v), the harmonic lift of the feedback."""
    return ops.dirichlet_map(fb.mask * fb.nonlinearity(ops.dstar(v)))


def boundary_pairing(ops: DiscreteOperators, fb: BoundaryFeedback, a, b) -> float:
    """Lumped Γ₀ quadrature of g(a)·b."""
    return float(np.sum(ops.boundary_weights * fb.mask * fb.nonlinearity(a) * b))


def dissipation(ops: DiscreteOperators, fb: BoundaryFeedback, v) -> float:
    """∫_Γ₀ g(D*v) D*v dσ with the lumped boundary quadrature."""
    s = ops.dstar(v)
    return boundary_pairing(ops, fb, s, s)

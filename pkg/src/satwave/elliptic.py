"""Discrete Dirichlet Laplacian, its inverse, the Dirichlet map and its adjoint.

Everything lives on the P1 space over all mesh nodes.  Volume fields are
nodal vectors of length N, boundary fields are vectors over the boundary
nodes in ``ops.boundary`` order.

The L²(Γ) pairing used by :func:`dstar` is the *lumped* boundary mass, so
that the adjoint relation (D*w, f)_Γ = (w, Df)_Ω holds exactly and the
feedback pairing is diagonal.  The consistent boundary mass is kept for
linear boundary integrals.

A remark on H⁻¹: on the full P1 space, v ↦ (v, A⁻¹v) is only a seminorm.
It sees v through its action on zero-trace test functions, which is all a
discrete dual of H¹₀ can do.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import MeshDegeneracyError, NumericalConsistencyError, PreconditionError
from .mesh import GAMMA0, Mesh

_TRACE_TOL = 1e-10


def _p1_gradients(mesh: Mesh):
    """Barycentric gradients per triangle, shape (T, 3, 2), and signed areas."""
    p = mesh.nodes[mesh.triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    # rows of the inverse Jacobian transpose give grad(lambda_1), grad(lambda_2)
    g1 = np.column_stack([e2[:, 1], -e2[:, 0]]) / det[:, None]
    g2 = np.column_stack([-e1[:, 1], e1[:, 0]]) / det[:, None]
    g0 = -g1 - g2
    return np.stack([g0, g1, g2], axis=1), 0.5 * det


def assemble_mass_stiffness(mesh: Mesh):
    """Consistent P1 mass and stiffness matrices (CSR, N x N)."""
    grads, area = _p1_gradients(mesh)
    if np.any(area <= 0):
        raise MeshDegeneracyError("non-positive triangle area")
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    k_loc = area[:, None, None] * np.einsum("tik,tjk->tij", grads, grads)
    m_ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    m_loc = area[:, None, None] * m_ref[None]
    n = mesh.n_nodes
    K = sp.coo_matrix((k_loc.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    M = sp.coo_matrix((m_loc.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    return M, K


class DiscreteOperators:
    """Assembled matrices, index sets and cached factorizations for one mesh.

    Instances are treated as immutable after construction; the only mutable
    state is a cache of λ-dependent factorizations used by the resolvent.
    """

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.mass, self.stiffness = assemble_mass_stiffness(mesh)
        n = mesh.n_nodes
        self.boundary = mesh.boundary_nodes
        is_b = np.zeros(n, dtype=bool)
        is_b[self.boundary] = True
        self.interior = np.flatnonzero(~is_b)
        self.is_boundary = is_b
        self._bpos = np.full(n, -1)
        self._bpos[self.boundary] = np.arange(len(self.boundary))

        I, B = self.interior, self.boundary
        K, M = self.stiffness, self.mass
        self.K_II = K[I][:, I].tocsc()
        self.K_IB = K[I][:, B].tocsc()
        self.M_II = M[I][:, I].tocsc()

        self.boundary_mass, self.boundary_weights = self._assemble_boundary_mass(GAMMA0, all_edges=True)
        _, self.gamma0_weights = self._assemble_boundary_mass(GAMMA0, all_edges=False)

        try:
            self._K_II_lu = spla.splu(self.K_II)
            self._M_II_lu = spla.splu(self.M_II)
            self._M_lu = spla.splu(M.tocsc())
        except RuntimeError as exc:  # SuperLU reports exact singularity this way
            raise MeshDegeneracyError(f"factorization failed: {exc}") from exc
        diag = self._K_II_lu.U.diagonal()
        if not np.all(np.isfinite(diag)) or np.any(diag == 0):
            raise MeshDegeneracyError("interior stiffness matrix is singular")
        self._shifted_cache = {}

    # sizes -------------------------------------------------------------

    @property
    def n(self) -> int:
        return self.mesh.n_nodes

    @property
    def n_boundary(self) -> int:
        return len(self.boundary)

    def boundary_index(self, nodes) -> np.ndarray:
        """Positions of global boundary node ids inside boundary fields."""
        return self._bpos[np.asarray(nodes)]

    def _assemble_boundary_mass(self, label, all_edges):
        mesh = self.mesh
        sel = np.ones(len(mesh.edge_labels), bool) if all_edges else mesh.edge_labels == label
        e = self.boundary_index(mesh.boundary_edges[sel])
        L = mesh.edge_lengths[sel]
        nb = len(self.boundary)
        rows = np.concatenate([e[:, 0], e[:, 0], e[:, 1], e[:, 1]])
        cols = np.concatenate([e[:, 0], e[:, 1], e[:, 0], e[:, 1]])
        vals = np.concatenate([L / 3, L / 6, L / 6, L / 3])
        Mb = sp.coo_matrix((vals, (rows, cols)), shape=(nb, nb)).tocsr()
        lumped = np.zeros(nb)
        np.add.at(lumped, e[:, 0], L / 2)
        np.add.at(lumped, e[:, 1], L / 2)
        return Mb, lumped

    # inner products ----------------------------------------------------

    def l2_inner(self, a, b) -> float:
        return float(a @ (self.mass @ b))

    def l2_norm(self, a) -> float:
        return float(np.sqrt(max(self.l2_inner(a, a), 0.0)))

    def h10_seminorm(self, w) -> float:
        return float(np.sqrt(max(w @ (self.stiffness @ w), 0.0)))

    def boundary_inner(self, a, b, lumped=True) -> float:
        if lumped:
            return float(np.sum(self.boundary_weights * a * b))
        return float(a @ (self.boundary_mass @ b))

    def trace(self, w) -> np.ndarray:
        return np.asarray(w)[self.boundary]

    def interpolate(self, func) -> np.ndarray:
        """Nodal interpolant of ``func(x, y)``."""
        x, y = self.mesh.nodes.T
        return np.asarray(func(x, y), dtype=float) * np.ones(self.n)

    # the operator A and its inverse ---------------------------------------

    def _check_zero_trace(self, w, what="w"):
        w = np.asarray(w, dtype=float)
        scale = max(1.0, float(np.max(np.abs(w))) if w.size else 1.0)
        tr = np.max(np.abs(w[self.boundary])) if self.n_boundary else 0.0
        if tr > _TRACE_TOL * scale:
            raise PreconditionError(f"{what} must vanish on the boundary (max |trace| = {tr:.3e})")
        return w

    def apply_A(self, w) -> np.ndarray:
        """L²-representative of -Δw for a zero-trace field.

        Solves M_II a_I = K_II w_I and sets a = 0 on Γ, so the result is
        again a zero-trace field.
        """
        w = self._check_zero_trace(w)
        a = np.zeros(self.n)
        a[self.interior] = self._M_II_lu.solve(self.K_II @ w[self.interior])
        return a

    def solve_A(self, v) -> np.ndarray:
        """Galerkin A⁻¹: zero-trace p with ∫∇p·∇φ = ∫vφ for all zero-trace φ."""
        v = np.asarray(v, dtype=float)
        p = np.zeros(self.n)
        rhs = (self.mass @ v)[self.interior]
        p[self.interior] = self._K_II_lu.solve(rhs)
        return p

    def hminus1_inner(self, a, b) -> float:
        return float((self.mass @ a) @ self.solve_A(b))

    def hminus1_norm(self, v) -> float:
        """‖v‖_{H⁻¹} computed as (v, A⁻¹v)^{1/2}."""
        val = self.hminus1_inner(v, v)
        if val < -1e-12 * max(1.0, self.l2_inner(v, v)):
            raise NumericalConsistencyError(f"negative H^-1 square norm {val:.3e}")
        return float(np.sqrt(max(val, 0.0)))

    # Dirichlet map and adjoint ------------------------------------------

    def dirichlet_map(self, f) -> np.ndarray:
        """Discrete harmonic extension of boundary data ``f``."""
        f = np.asarray(f, dtype=float)
        u = np.zeros(self.n)
        u[self.boundary] = f
        u[self.interior] = -self._K_II_lu.solve(self.K_IB @ f)
        return u

    def dstar(self, w) -> np.ndarray:
        """Adjoint of :meth:`dirichlet_map` for the (mass, lumped boundary mass) pairings."""
        mw = self.mass @ np.asarray(w, dtype=float)
        z = self._K_II_lu.solve(mw[self.interior])
        return (mw[self.boundary] - self.K_IB.T @ z) / self.boundary_weights

    def normal_derivative(self, p, source=None) -> np.ndarray:
        """Variational outward flux of a zero-trace field, -D*(Ap).

        When ``p`` came from ``solve_A(source)`` the source can be passed in;
        the flux then equals -dstar(source) for every source, including
        sources with nonzero trace that :meth:`apply_A` cannot reproduce.
        """
        p = self._check_zero_trace(p, "p")
        if source is None:
            source = self.apply_A(p)
        return -self.dstar(source)

    @cached_property
    def dirichlet_matrix(self) -> np.ndarray:
        """Dense N x B matrix of the harmonic extension (columns = boundary hats)."""
        D = np.zeros((self.n, self.n_boundary))
        D[self.boundary, np.arange(self.n_boundary)] = 1.0
        D[self.interior] = -self._K_II_lu.solve(self.K_IB.toarray())
        return D

    def dstar_matrix(self, X) -> np.ndarray:
        """Apply :meth:`dstar` to every column of X."""
        MX = self.mass @ X
        Z = self._K_II_lu.solve(np.ascontiguousarray(MX[self.interior]))
        return (MX[self.boundary] - self.K_IB.T @ Z) / self.boundary_weights[:, None]

    # λ-dependent pieces used by the resolvent ------------------------------

    def shifted_solver(self, lam: float):
        """Factorization of K_II + λ² M_II, cached per λ."""
        key = float(lam)
        lu = self._shifted_cache.get(key)
        if lu is None:
            lu = spla.splu((self.K_II + key * key * self.M_II).tocsc())
            self._shifted_cache[key] = lu
        return lu

    def feedback_operator_norm(self, mask) -> float:
        """Operator norm of v ↦ D(mask ⊙ D*v) in the L²(Ω) norm."""
        D = self.dirichlet_matrix
        G = D.T @ (self.mass @ D)
        s = np.sqrt(np.asarray(mask, float) / self.boundary_weights)
        return float(np.linalg.eigvalsh(s[:, None] * G * s[None, :]).max())

    def dirichlet_eigenvalues(self, k: int = 3) -> np.ndarray:
        """Smallest ``k`` generalized eigenvalues of (K_II, M_II)."""
        vals = spla.eigsh(self.K_II, k=k, M=self.M_II, sigma=0.0, which="LM",
                          return_eigenvectors=False)
        return np.sort(vals)

    # debugging -------------------------------------------------------------

    def export_coo(self, matrix, path) -> None:
        """Write ``i j value`` triplets (0-based) for a sparse or dense matrix."""
        A = sp.coo_matrix(matrix)
        with open(path, "w") as fh:
            for i, j, v in zip(A.row, A.col, A.data):
                fh.write(f"{i} {j} {v:.17g}\n")


def assemble_operators(mesh: Mesh) -> DiscreteOperators:
    return DiscreteOperators(mesh)


def nodal_gradient(ops: DiscreteOperators, w) -> np.ndarray:
    """Area-weighted average of the piecewise-constant P1 gradient, shape (N, 2)."""
    grads, area = _p1_gradients(ops.mesh)
    w = np.asarray(w, dtype=float)
    tri = ops.mesh.triangles
    gw = np.einsum("tik,ti->tk", grads, w[tri])
    acc = np.zeros((ops.n, 2))
    wsum = np.zeros(ops.n)
    for k in range(3):
        np.add.at(acc, tri[:, k], gw * area[:, None])
        np.add.at(wsum, tri[:, k], area)
    return acc / wsum[:, None]


def element_gradient(ops: DiscreteOperators, w) -> np.ndarray:
    """Piecewise-constant gradient per triangle, shape (T, 2)."""
    grads, _ = _p1_gradients(ops.mesh)
    return np.einsum("tik,ti->tk", grads, np.asarray(w, float)[ops.mesh.triangles])

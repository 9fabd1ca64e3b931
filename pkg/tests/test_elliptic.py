import numpy as np
import pytest
import scipy.linalg as sla

from conftest import sine_mode
from satwave.elliptic import assemble_mass_stiffness, element_gradient, nodal_gradient
from satwave.errors import PreconditionError
from satwave.mesh import build_unit_square_mesh

TWO_PI2 = 2 * np.pi ** 2


def zero_trace_random(ops, rng):
    v = rng.standard_normal(ops.n)
    v[ops.boundary] = 0.0
    return v


def test_reference_element_matrices():
    # a single right triangle with unit legs: textbook P1 matrices
    from satwave.mesh import from_triangulation
    m = from_triangulation([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    M, K = assemble_mass_stiffness(m)
    assert np.allclose(M.toarray(), np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 24)
    assert np.allclose(K.toarray(), np.array([[1, -0.5, -0.5], [-0.5, 0.5, 0], [-0.5, 0, 0.5]]))


def test_mass_integrates_constants(square16):
    one = np.ones(square16.n)
    assert square16.l2_inner(one, one) == pytest.approx(1.0, abs=1e-13)
    assert np.allclose(square16.stiffness @ one, 0.0, atol=1e-12)


def test_first_eigenvalue_matches_dense_oracle(square8):
    dense = sla.eigh(square8.K_II.toarray(), square8.M_II.toarray(), eigvals_only=True)
    assert np.allclose(square8.dirichlet_eigenvalues(3), dense[:3], rtol=1e-10)


def test_first_eigenvalue_close_to_continuum(square32):
    lam1 = square32.dirichlet_eigenvalues(1)[0]
    assert abs(lam1 - TWO_PI2) / TWO_PI2 < 0.01


def test_solve_A_eigenfunction_scaling(square32):
    phi = sine_mode(square32)
    p = square32.solve_A(phi)
    ref = phi / TWO_PI2
    assert square32.l2_norm(p - ref) / square32.l2_norm(ref) < 0.01
    assert np.all(p[square32.boundary] == 0.0)


def test_apply_A_round_trip(square16, rng):
    v = zero_trace_random(square16, rng)
    assert np.allclose(square16.apply_A(square16.solve_A(v)), v, atol=1e-10)


def test_apply_A_rejects_nonzero_trace(square16):
    with pytest.raises(PreconditionError):
        square16.apply_A(np.ones(square16.n))


def test_hminus1_equals_h1_seminorm_of_p(square16, rng):
    for _ in range(5):
        v = rng.standard_normal(square16.n)
        p = square16.solve_A(v)
        a = square16.hminus1_norm(v) ** 2
        b = square16.h10_seminorm(p) ** 2
        assert abs(a - b) <= 1e-9 * abs(a)


def test_hminus1_of_eigenfunction(square32):
    phi = sine_mode(square32)
    val = square32.hminus1_norm(phi) ** 2
    assert val == pytest.approx(0.25 / TWO_PI2, rel=0.02)


def test_dirichlet_map_of_constant_is_constant(square32):
    u = square32.dirichlet_map(np.ones(square32.n_boundary))
    assert np.max(np.abs(u - 1.0)) <= 1e-12


def test_dirichlet_map_reproduces_linear_fields(square16):
    x, y = square16.mesh.nodes.T
    f = (2 * x - 3 * y + 0.5)[square16.boundary]
    assert np.allclose(square16.dirichlet_map(f), 2 * x - 3 * y + 0.5, atol=1e-12)


def test_dirichlet_map_dense_oracle(square8, rng):
    # harmonic extension from the full stiffness system with boundary rows replaced
    K = square8.stiffness.toarray()
    f = rng.standard_normal(square8.n_boundary)
    A = K.copy()
    rhs = np.zeros(square8.n)
    A[square8.boundary] = 0.0
    A[square8.boundary, square8.boundary] = 1.0
    rhs[square8.boundary] = f
    assert np.allclose(square8.dirichlet_map(f), np.linalg.solve(A, rhs), atol=1e-12)


def test_adjoint_identity(square32, rng):
    for _ in range(20):
        w = rng.standard_normal(square32.n)
        f = rng.standard_normal(square32.n_boundary)
        lhs = square32.boundary_inner(square32.dstar(w), f)
        rhs = square32.l2_inner(w, square32.dirichlet_map(f))
        assert abs(lhs - rhs) <= 1e-11 * max(1.0, abs(lhs))


def test_dstar_matrix_matches_columns(square8, rng):
    X = rng.standard_normal((square8.n, 3))
    cols = np.column_stack([square8.dstar(X[:, k]) for k in range(3)])
    assert np.allclose(square8.dstar_matrix(X), cols, atol=1e-12)


def test_green_identity_zero_trace_sources(square16, rng):
    for _ in range(20):
        v = zero_trace_random(square16, rng)
        p = square16.solve_A(v)
        assert np.max(np.abs(square16.dstar(v) + square16.normal_derivative(p))) <= 1e-11 * max(
            1.0, np.max(np.abs(square16.dstar(v))))


def test_green_identity_with_explicit_source(square16, rng):
    v = rng.standard_normal(square16.n)
    p = square16.solve_A(v)
    assert np.allclose(square16.normal_derivative(p, source=v), -square16.dstar(v), atol=1e-12)


def test_normal_derivative_of_eigenfunction_solution():
    # p = sin(πx)sin(πy)/(2π²) has outward flux -sin(πy)/(2π) on x = 0
    ops = __import__("satwave").assemble_operators(build_unit_square_mesh(48))
    phi = sine_mode(ops)
    dn = ops.normal_derivative(ops.solve_A(phi), source=phi)
    x, y = ops.mesh.nodes[ops.boundary].T
    left = (x < 1e-12) & (y > 0.1) & (y < 0.9)
    exact = -np.sin(np.pi * y[left]) / (2 * np.pi)
    assert np.max(np.abs(dn[left] - exact)) < 0.02 * np.max(np.abs(exact))


def test_boundary_weights_sum_to_perimeter(square16):
    assert square16.boundary_weights.sum() == pytest.approx(4.0, abs=1e-12)
    one = np.ones(square16.n_boundary)
    assert square16.boundary_inner(one, one, lumped=False) == pytest.approx(4.0, abs=1e-12)


def test_gradients_exact_on_linear_fields(square8):
    x, y = square8.mesh.nodes.T
    w = 3 * x - 2 * y
    assert np.allclose(element_gradient(square8, w), [3, -2], atol=1e-12)
    assert np.allclose(nodal_gradient(square8, w), [3, -2], atol=1e-12)


def test_feedback_operator_norm_dense(square8):
    D = square8.dirichlet_matrix
    Dstar = np.diag(1 / square8.boundary_weights) @ D.T @ square8.mass.toarray()
    T = D @ Dstar
    # T is self-adjoint and nonnegative in the mass inner product
    M = square8.mass.toarray()
    L = np.linalg.cholesky(M)
    sym = L.T @ T @ np.linalg.inv(L.T)
    ref = np.linalg.eigvalsh(0.5 * (sym + sym.T)).max()
    assert square8.feedback_operator_norm(np.ones(square8.n_boundary)) == pytest.approx(ref, rel=1e-9)


def test_export_coo(tmp_path, square8):
    path = tmp_path / "K.txt"
    square8.export_coo(square8.stiffness, path)
    lines = path.read_text().splitlines()
    assert len(lines) == square8.stiffness.nnz
    i, j, v = lines[0].split()
    assert float(v) == pytest.approx(square8.stiffness[int(i), int(j)])

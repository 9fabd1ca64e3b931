import numpy as np
import pytest

from satwave.errors import InvalidArgumentError
from satwave.feedback import (Nonlinearity, Sector, boundary_pairing, dissipation,
                              feedback_trace, gamma0_mask, make_feedback, make_identity,
                              make_saturation, make_scaled_saturation, nonlinearity_from_spec,
                              phi, validate_assumptions)
from satwave.elliptic import assemble_operators
from satwave.mesh import GAMMA1, build_unit_square_mesh

GRID = np.linspace(-5, 5, 1001)


def test_saturation_values():
    g = make_saturation(1.0)
    assert np.array_equal(g([-3.0, -1.0, -0.25, 0.0, 0.5, 1.0, 7.0]),
                          [-1.0, -1.0, -0.25, 0.0, 0.5, 1.0, 1.0])
    assert np.array_equal(g.slope([-2.0, 0.3, 2.0]), [0.0, 1.0, 0.0])


def test_scaled_saturation():
    g = make_scaled_saturation(0.5, 2.0)
    assert np.allclose(g([-1.0, 0.1, 3.0]), [-1.0, 0.2, 1.0])
    assert g.lipschitz_constant == 2.0


@pytest.mark.parametrize("S", [0.0, -1.0])
def test_saturation_rejects_nonpositive_threshold(S):
    with pytest.raises(InvalidArgumentError):
        make_saturation(S)


def test_sector_validation():
    with pytest.raises(InvalidArgumentError):
        Sector(1.0, 2.0, 1.0)
    with pytest.raises(InvalidArgumentError):
        Sector(0.0, 1.0, 1.0)


@pytest.mark.parametrize("nl", [make_saturation(1.0), make_saturation(0.1), make_identity(),
                                make_scaled_saturation(2.0, 3.0)])
def test_builtin_maps_pass_validation(nl):
    assert validate_assumptions(nl, GRID).passed


def test_validator_detects_decreasing_map():
    bad = Nonlinearity(lambda s: -s, 1.0, name="neg")
    rep = validate_assumptions(bad, GRID)
    assert not rep.passed
    assert any("decreases" in v for v in rep.violations)


def test_validator_detects_offset_and_lipschitz():
    off = Nonlinearity(lambda s: s + 0.1, 1.0)
    assert any("g(0)" in v for v in validate_assumptions(off, GRID).violations)
    steep = Nonlinearity(lambda s: 3 * s, 1.0)
    assert any("Lipschitz" in v for v in validate_assumptions(steep, GRID).violations)


def test_validator_detects_sector_violation():
    cubic = Nonlinearity(lambda s: s ** 3, 100.0, sector=Sector(1.0, 1.0, 1.0))
    assert any("Assumption 2" in v for v in validate_assumptions(cubic, GRID).violations)


def test_validator_needs_both_signs():
    with pytest.raises(InvalidArgumentError):
        validate_assumptions(make_identity(), np.linspace(0, 1, 5))


def test_spec_round_trip():
    for nl in (make_saturation(2.0), make_identity(), make_scaled_saturation(1.0, 0.5)):
        back = nonlinearity_from_spec(nl.spec)
        assert np.array_equal(back(GRID), nl(GRID))
    with pytest.raises(InvalidArgumentError):
        nonlinearity_from_spec({"type": "tanh"})


def test_finite_difference_slope_fallback():
    g = Nonlinearity(lambda s: np.tanh(s), 1.0)
    s = np.array([-1.0, 0.0, 2.0])
    assert np.allclose(g.slope(s), 1 - np.tanh(s) ** 2, atol=1e-6)


def test_gamma0_mask_annulus(annulus_coarse):
    mask = gamma0_mask(annulus_coarse)
    r = np.linalg.norm(annulus_coarse.mesh.nodes[annulus_coarse.boundary], axis=1)
    assert np.all(mask[r > 0.75] == 1.0)
    assert np.all(mask[r < 0.75] == 0.0)


def test_gamma0_mask_junction_nodes_excluded():
    m = build_unit_square_mesh(4).relabel(lambda mid: mid[:, 1] < 1e-9)
    ops = assemble_operators(m)
    mask = gamma0_mask(ops)
    x, y = m.nodes[ops.boundary].T
    bottom = y < 1e-12
    # the corners touch Γ₁ edges and are therefore not actuated
    assert mask.sum() == 3
    assert np.all(mask[bottom & (x > 0) & (x < 1)] == 1)


def test_make_feedback_validates_mask(square8):
    with pytest.raises(InvalidArgumentError):
        make_feedback(square8, make_saturation(1.0), mask=np.full(square8.n_boundary, 0.5))
    with pytest.raises(InvalidArgumentError):
        make_feedback(square8, make_saturation(1.0), mask=np.ones(3))


def test_dissipation_zero_cases(square16, rng):
    fb = make_feedback(square16, make_saturation(1.0))
    assert dissipation(square16, fb, np.zeros(square16.n)) == 0.0
    none = make_feedback(square16, make_saturation(1.0), mask=np.zeros(square16.n_boundary))
    assert dissipation(square16, none, rng.standard_normal(square16.n)) == 0.0


def test_dissipation_identity_equals_lumped_trace_norm(square16, rng):
    fb = make_feedback(square16, make_identity())
    v = rng.standard_normal(square16.n)
    s = square16.dstar(v)
    ref = np.sum(square16.boundary_weights * s * s)
    assert abs(dissipation(square16, fb, v) - ref) <= 1e-12 * max(1.0, ref)


def test_boundary_pairing_monotone(square16, rng):
    fb = make_feedback(square16, make_saturation(0.3))
    for _ in range(50):
        a = 2 * rng.standard_normal(square16.n_boundary)
        b = 2 * rng.standard_normal(square16.n_boundary)
        val = boundary_pairing(square16, fb, a, a - b) - boundary_pairing(square16, fb, b, a - b)
        assert val >= -1e-14


def test_phi_and_trace_consistency(square16, rng):
    fb = make_feedback(square16, make_saturation(0.5))
    v = rng.standard_normal(square16.n)
    ph = phi(square16, fb, v)
    assert np.allclose(ph[square16.boundary], -feedback_trace(square16, fb, v), atol=1e-14)


def test_full_mask_on_square(square8):
    assert np.all(gamma0_mask(square8) == 1.0)
    m = square8.mesh.with_labels(np.full(len(square8.mesh.edge_labels), GAMMA1))
    assert np.all(gamma0_mask(assemble_operators(m)) == 0.0)

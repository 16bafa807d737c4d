from __future__ import annotations

import numpy as np
import pytest

from conftest import random_controls
from qubit_landscape.dynamics import ControlVector, SystemParams, TimeGrid
from qubit_landscape.objectives import (
    ObjectiveKind,
    ObjectiveSpec,
    StateSet,
    check_unital_relation,
    cross_evaluate,
    evaluate,
    gate_from_unitary,
    gate_H,
    gate_phase_shift,
    gate_rotation_family,
    gate_T,
    make_state_set,
    objective_frobenius,
    objective_states,
    objective_states_density,
    parse_gate,
    parse_objective,
    set4_decomposition,
)

S2 = np.sqrt(2) / 2


def free_rotation_gate(params: SystemParams, grid: TimeGrid):
    return gate_phase_shift(np.mod(-params.omega * grid.T, 2 * np.pi))


# -----------------------------------------------------------------------------
# Portes
# -----------------------------------------------------------------------------

def test_hadamard_images():
    H = gate_H()
    np.testing.assert_allclose(H.image([0, 0, 1]), [1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(H.image([1, 0, 0]), [0, 0, 1], atol=1e-15)
    np.testing.assert_allclose(H.image([0, 1, 0]), [0, -1, 0], atol=1e-15)
    np.testing.assert_allclose(H.translation, 0.0, atol=1e-15)


def test_t_gate_image():
    np.testing.assert_allclose(gate_T().image([1, 0, 0]), [S2, S2, 0], atol=1e-15)


def test_gate_powers():
    H, T = gate_H(), gate_T()
    np.testing.assert_allclose(H.rotation @ H.rotation, np.eye(3), atol=1e-14)
    np.testing.assert_allclose(np.linalg.matrix_power(T.rotation, 8), np.eye(3), atol=1e-14)


@pytest.mark.parametrize("gate", [gate_H(), gate_T(), gate_phase_shift(1.3), gate_rotation_family(0.4)])
def test_rotation_block_is_proper_orthogonal(gate):
    R = gate.rotation
    assert np.linalg.norm(R.T @ R - np.eye(3)) <= 1e-12
    assert np.linalg.det(R) == pytest.approx(1.0)
    np.testing.assert_allclose(gate.psi_u[0], [1, 0, 0, 0], atol=1e-15)


def test_gate_from_unitary_rejects_non_unitary():
    with pytest.raises(ValueError):
        gate_from_unitary(np.array([[1, 1], [0, 1]]), "bad")


def test_rotation_family_matches_hadamard_on_set2():
    H = gate_H()
    thetas = np.linspace(-np.pi / 2, np.pi / 2, 51)[1:]
    for theta in thetas:
        U = gate_rotation_family(theta)
        for r in ([0, 0, 1], [0, 0, -1]):
            np.testing.assert_allclose(U.image(r), H.image(r), atol=1e-12)


def test_rotation_family_special_angles():
    np.testing.assert_allclose(gate_rotation_family(0.0).rotation, gate_H().rotation, atol=1e-12)
    np.testing.assert_allclose(gate_rotation_family(np.pi / 2).image([0, 0, 1]), [1, 0, 0], atol=1e-12)


@pytest.mark.parametrize("theta", [-np.pi / 2, 2.0, float("nan")])
def test_rotation_family_out_of_range(theta):
    with pytest.raises(ValueError):
        gate_rotation_family(theta)


def test_phase_shift():
    np.testing.assert_allclose(gate_phase_shift(np.pi / 4).psi_u, gate_T().psi_u, atol=1e-15)
    np.testing.assert_allclose(gate_phase_shift(0.0).psi_u, np.eye(4), atol=1e-15)
    for delta in np.linspace(0, 2 * np.pi, 9, endpoint=False):
        np.testing.assert_allclose(gate_phase_shift(delta).image([0, 0, 1]), [0, 0, 1], atol=1e-15)


def test_parse_gate():
    assert parse_gate("H").name == "H"
    assert parse_gate(" T ").name == "T"
    np.testing.assert_allclose(parse_gate("phase:0.7853981633974483").psi_u, gate_T().psi_u, atol=1e-15)
    assert parse_gate("rotation:0.3").name == "rotation:0.3"
    for bad in ("X", "rotation:abc", "phase"):
        with pytest.raises(ValueError):
            parse_gate(bad)


# -----------------------------------------------------------------------------
# Ensembles d'états / spec
# -----------------------------------------------------------------------------

def test_state_sets():
    np.testing.assert_array_equal(make_state_set("set2").bloch, [[0, 0, 1], [0, 0, -1]])
    np.testing.assert_allclose(make_state_set("set3-grk").bloch, [[0, 0, 1 / 3], [1, 0, 0], [0, 0, 0]])
    np.testing.assert_array_equal(make_state_set("set4").bloch, [[0, 0, 1], [0, 0, -1], [1, 0, 0], [0, 1, 0]])
    assert make_state_set("set3-basis").K == 3
    grk = make_state_set("set3-grk").densities
    np.testing.assert_allclose(grk[0], np.diag([2 / 3, 1 / 3]), atol=1e-15)
    np.testing.assert_allclose(grk[2], np.eye(2) / 2, atol=1e-15)


def test_states_spec_requires_nonempty_set():
    with pytest.raises(ValueError):
        ObjectiveSpec.states(gate_H(), StateSet.from_bloch(np.empty((0, 3))))
    with pytest.raises(ValueError):
        ObjectiveSpec(gate=gate_H(), kind=ObjectiveKind.STATES)


def test_parse_objective_and_labels():
    spec = parse_objective("set3-grk", gate_H())
    assert spec.kind is ObjectiveKind.STATES
    assert spec.label == "F_{H,3}"
    assert spec.identifier == "set3-grk"
    frob = parse_objective("frobenius", gate_T())
    assert frob.kind is ObjectiveKind.FROBENIUS
    assert frob.label == "F_T"
    with pytest.raises(ValueError):
        parse_objective("set5", gate_H())


# -----------------------------------------------------------------------------
# Fonctionnelles
# -----------------------------------------------------------------------------

def test_objective_zero_for_free_rotation_target(unital, grid):
    gate = free_rotation_gate(unital, grid)
    zero = ControlVector.zeros(grid.M)
    for kind in ("set2", "set3-grk", "set4"):
        assert objective_states(unital, grid, zero, parse_objective(kind, gate)) < 1e-20
    assert objective_frobenius(unital, grid, zero, gate) < 1e-20


def test_frobenius_zero_at_rotation_period(unital):
    grid = TimeGrid.regular(2 * np.pi / unital.omega, 10)
    assert objective_frobenius(unital, grid, ControlVector.zeros(10), gate_phase_shift(0.0)) < 1e-20


def test_objectives_nonnegative(params, grid, rng):
    for _ in range(20):
        controls = random_controls(rng)
        for ident in ("set2", "set3-grk", "set4", "frobenius"):
            assert evaluate(params, grid, controls, parse_objective(ident, gate_T())) >= 0.0


def test_density_form_equals_bloch_form(params, grid, rng):
    for ident in ("set2", "set3-grk", "set4"):
        spec = parse_objective(ident, gate_H())
        for _ in range(5):
            controls = random_controls(rng)
            assert objective_states_density(params, grid, controls, spec) == pytest.approx(
                objective_states(params, grid, controls, spec), rel=0, abs=1e-12
            )


def test_unital_relation(unital, grid, rng):
    a, b = check_unital_relation(unital, grid, ControlVector.zeros(grid.M), gate_H())
    assert a == pytest.approx(b, rel=0, abs=1e-10 * max(1.0, a))
    for _ in range(100):
        controls = random_controls(rng)
        a, b = check_unital_relation(unital, grid, controls, gate_T())
        assert abs(a - b) <= 1e-10 * max(1.0, a)


def test_unital_relation_rejects_dissipative(params, grid, rng):
    controls = random_controls(rng)
    with pytest.raises(ValueError):
        check_unital_relation(params, grid, controls, gate_H())
    # hors du cas unital la relation ne tient plus
    basis = parse_objective("set3-basis", gate_H())
    f_u = objective_frobenius(params, grid, controls, gate_H())
    assert abs(f_u - 6 * objective_states(params, grid, controls, basis)) > 1e-8


def test_set4_decomposition(params, grid, rng):
    for _ in range(50):
        controls = random_controls(rng, scale=2.0)
        half_f2, remainder = set4_decomposition(params, grid, controls, gate_T())
        assert remainder >= -1e-12
        f4 = objective_states(params, grid, controls, parse_objective("set4", gate_T()))
        assert half_f2 + remainder == pytest.approx(f4)


def test_cross_evaluate_same_spec(params, grid, rng):
    controls = random_controls(rng)
    spec = parse_objective("set3-grk", gate_H())
    assert cross_evaluate(params, grid, controls, spec, spec) == objective_states(params, grid, controls, spec)
    other = parse_objective("set2", gate_H())
    assert cross_evaluate(params, grid, controls, spec, other) == objective_states(params, grid, controls, other)

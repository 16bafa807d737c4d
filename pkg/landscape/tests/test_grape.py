from __future__ import annotations

from itertools import count

import numpy as np
import pytest
from scipy.linalg import expm, expm_frechet

import qubit_landscape.grape as grape
from conftest import random_controls
from qubit_landscape.dynamics import ControlVector, compute_g, generator_matrices
from qubit_landscape.grape import (
    OptimizerConfig,
    RunRecord,
    Termination,
    d_exp_du,
    d_exp_dw,
    d_g,
    descend,
    gradient,
)
from qubit_landscape.objectives import (
    StateSet,
    ObjectiveSpec,
    evaluate,
    gate_H,
    gate_phase_shift,
    gate_T,
    make_state_set,
    objective_frobenius,
    parse_objective,
)

FD_STEP = 1e-6
FINE = 10_000


def central_difference(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    out = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (f(x + e) - f(x - e)) / (2 * h)
    return out


# -----------------------------------------------------------------------------
# Config
# -----------------------------------------------------------------------------

def test_optimizer_defaults():
    cfg = OptimizerConfig()
    assert (cfg.eps, cfg.h0, cfg.c, cfg.d) == (1e-5, 1.0, 1.1, 0.5)
    assert (cfg.L_stuck, cfg.N_partition, cfg.max_iters) == (20, 20, 10_000)
    assert cfg.rtol == 1e-2


@pytest.mark.parametrize(
    "bad",
    [
        {"eps": 0}, {"c": 1.0}, {"d": 1.0}, {"d": 0}, {"L_stuck": 0}, {"N_partition": 1},
        {"rtol": -0.1}, {"rtol": 1.0}, {"foo": 1},
    ],
)
def test_optimizer_validation(bad):
    with pytest.raises(ValueError):
        OptimizerConfig(**bad)


# -----------------------------------------------------------------------------
# Dérivées d'exponentielle
# -----------------------------------------------------------------------------

def test_d_exp_du_commuting_case(params):
    gens = generator_matrices(params)
    A = -0.3 * np.eye(3) + 0.7 * gens.Bu
    dt = 0.5
    np.testing.assert_allclose(
        d_exp_du(A, gens.Bu, dt, 20), gens.Bu * dt @ expm(A * dt), rtol=1e-12, atol=1e-15
    )


def test_d_exp_du_zero_direction(params):
    A = generator_matrices(params).A(0.2, 0.3)
    np.testing.assert_array_equal(d_exp_du(A, np.zeros((3, 3)), 0.5, 20), np.zeros((3, 3)))


def test_d_exp_dw_trivial_cases(params):
    gens = generator_matrices(params)
    A = gens.A(0.2, 0.0)
    np.testing.assert_array_equal(d_exp_dw(A, gens.Bn, 0.0, 0.5, 20), np.zeros((3, 3)))
    D = np.diag([-0.1, -0.2, -0.4])
    np.testing.assert_allclose(
        d_exp_dw(D, gens.Bn, 1.0, 0.5, 20), 2 * gens.Bn * 0.5 @ expm(D * 0.5), rtol=1e-12, atol=1e-15
    )


def test_d_exp_matches_finite_difference(params, rng):
    gens = generator_matrices(params)
    dt = 0.5
    for _ in range(5):
        u, w = rng.uniform(-1, 1, 2)
        A = gens.A(u, w * w)
        fd_u = (expm(gens.A(u + FD_STEP, w * w) * dt) - expm(gens.A(u - FD_STEP, w * w) * dt)) / (2 * FD_STEP)
        fd_w = (
            expm(gens.A(u, (w + FD_STEP) ** 2) * dt) - expm(gens.A(u, (w - FD_STEP) ** 2) * dt)
        ) / (2 * FD_STEP)
        np.testing.assert_allclose(d_exp_du(A, gens.Bu, dt, FINE), fd_u, rtol=1e-5, atol=1e-9)
        np.testing.assert_allclose(d_exp_dw(A, gens.Bn, w, dt, FINE), fd_w, rtol=1e-5, atol=1e-9)


def test_trapezoid_refinement_is_second_order(params):
    gens = generator_matrices(params)
    A = gens.A(0.8, 0.5)
    dt = 0.5
    exact = expm_frechet(A * dt, gens.Bu * dt, compute_expm=False)
    err20 = np.linalg.norm(d_exp_du(A, gens.Bu, dt, 20) - exact)
    err40 = np.linalg.norm(d_exp_du(A, gens.Bu, dt, 40) - exact)
    assert 3.5 < err20 / err40 < 4.5


def test_d_g_trivial_cases(params, unital):
    gens = generator_matrices(unital)
    A = gens.A(0.3, 0.2)
    np.testing.assert_array_equal(d_g(A, gens.b, gens.Bu, 0.5, np.eye(3), 1.0), np.zeros(3))
    gens = generator_matrices(params)
    A = gens.A(0.3, 0.0)
    np.testing.assert_array_equal(d_g(A, gens.b, gens.Bn, 0.5, np.zeros((3, 3)), 0.0), np.zeros(3))


def test_d_g_matches_finite_difference(params, rng):
    gens = generator_matrices(params)
    dt = 0.5
    for _ in range(5):
        u, w = rng.uniform(-1, 1, 2)
        A = gens.A(u, w * w)

        def g_of(uu, ww):
            return compute_g(gens.A(uu, ww * ww), gens.b, dt)

        fd_u = (g_of(u + FD_STEP, w) - g_of(u - FD_STEP, w)) / (2 * FD_STEP)
        fd_w = (g_of(u, w + FD_STEP) - g_of(u, w - FD_STEP)) / (2 * FD_STEP)
        # dérivées exactes de l'exponentielle : on isole la formule de d_g
        dEu = expm_frechet(A * dt, gens.Bu * dt, compute_expm=False)
        dEw = 2 * w * expm_frechet(A * dt, gens.Bn * dt, compute_expm=False)
        np.testing.assert_allclose(d_g(A, gens.b, gens.Bu, dt, dEu, 1.0), fd_u, rtol=1e-5, atol=1e-9)
        np.testing.assert_allclose(d_g(A, gens.b, gens.Bn, dt, dEw, 2 * w), fd_w, rtol=1e-5, atol=1e-9)


def test_d_g_augmented_route_agrees(params, monkeypatch):
    gens = generator_matrices(params)
    A = gens.A(0.4, 0.6)
    dt = 0.5
    exact_dE = expm_frechet(A * dt, gens.Bu * dt, compute_expm=False)
    closed = d_g(A, gens.b, gens.Bu, dt, exact_dE, 1.0)
    monkeypatch.setattr(grape, "needs_augmented_form", lambda _A: True)
    augmented = d_g(A, gens.b, gens.Bu, dt, exact_dE, 1.0)
    np.testing.assert_allclose(augmented, closed, rtol=1e-10, atol=1e-14)


# -----------------------------------------------------------------------------
# Gradient complet
# -----------------------------------------------------------------------------

@pytest.mark.parametrize(
    "gate_factory,ident",
    [(gate_H, "set2"), (gate_H, "set3-grk"), (gate_T, "set3-grk"), (gate_T, "set4"), (gate_H, "frobenius")],
)
def test_gradient_matches_finite_difference(params, grid, rng, gate_factory, ident):
    spec = parse_objective(ident, gate_factory())
    controls = random_controls(rng)

    def f(v):
        return evaluate(params, grid, ControlVector.from_flat(v, grid.M), spec)

    analytic = gradient(params, grid, controls, spec, n_partition=FINE)
    fd = central_difference(f, controls.to_flat())
    assert analytic.shape == (2 * grid.M,)
    np.testing.assert_allclose(analytic, fd, rtol=1e-5, atol=1e-9)


def test_gradient_matches_finite_difference_on_random_configurations(params, grid, rng):
    idents = ("set2", "set3-grk", "set4", "set3-basis", "frobenius")
    for k in range(100):
        gate = gate_H() if k % 2 == 0 else gate_T()
        spec = parse_objective(idents[k % len(idents)], gate)
        controls = random_controls(rng, scale=rng.uniform(0.2, 2.0))

        def f(v):
            return evaluate(params, grid, ControlVector.from_flat(v, grid.M), spec)

        analytic = gradient(params, grid, controls, spec, n_partition=2_000)
        fd = central_difference(f, controls.to_flat())
        np.testing.assert_allclose(analytic, fd, rtol=1e-5, atol=1e-8, err_msg=f"configuration {k}")


def test_gradient_vanishes_at_exact_minimum(unital, grid):
    gate = gate_phase_shift(np.mod(-unital.omega * grid.T, 2 * np.pi))
    spec = parse_objective("set3-grk", gate)
    g = gradient(unital, grid, ControlVector.zeros(grid.M), spec)
    assert np.linalg.norm(g) <= 1e-8


def test_gradient_invariant_under_state_duplication(params, grid, rng):
    base = make_state_set("set3-grk")
    doubled = StateSet.from_bloch(np.vstack([base.bloch, base.bloch]), name="grk-x2")
    controls = random_controls(rng)
    g1 = gradient(params, grid, controls, ObjectiveSpec.states(gate_T(), base))
    g2 = gradient(params, grid, controls, ObjectiveSpec.states(gate_T(), doubled))
    np.testing.assert_allclose(g1, g2, rtol=1e-12, atol=1e-15)


# -----------------------------------------------------------------------------
# Descente
# -----------------------------------------------------------------------------

def test_descend_converges_immediately_at_free_rotation(unital, grid):
    gate = gate_phase_shift(np.mod(-unital.omega * grid.T, 2 * np.pi))
    record = descend(unital, grid, ControlVector.zeros(grid.M), parse_objective("set3-grk", gate))
    assert record.termination is Termination.CONVERGED
    assert record.iterations == 0
    assert record.objective < 1e-5


def test_descend_is_monotone_and_deterministic(params, grid, rng):
    spec = parse_objective("set3-grk", gate_H())
    init = random_controls(rng)
    cfg = OptimizerConfig(max_iters=30)
    first = descend(params, grid, init, spec, cfg, seed=7, record_trace=True)
    second = descend(params, grid, init, spec, cfg, seed=7, record_trace=True)

    assert first.to_dict() == second.to_dict()
    assert first.objective <= first.initial_objective
    assert len(first.trace) == first.iterations + 1
    assert np.all(np.diff(first.trace) < 0)
    assert first.termination in (Termination.MAX_ITERS, Termination.STUCK, Termination.CONVERGED)
    # la valeur Frobenius enregistrée est celle des contrôles finaux
    assert first.frobenius == objective_frobenius(params, grid, first.final, gate_H())


def test_descend_hits_iteration_cap(params, grid, rng):
    record = descend(
        params, grid, random_controls(rng), parse_objective("set3-grk", gate_T()), OptimizerConfig(max_iters=3)
    )
    assert record.termination is Termination.MAX_ITERS
    assert record.iterations == 3


def test_descend_stuck_after_consecutive_rejections(params, grid, rng, monkeypatch):
    values = iter([1.0])

    def fake_evaluate(*_args, **_kwargs):
        return next(values, 2.0)

    monkeypatch.setattr(grape, "evaluate", fake_evaluate)
    record = descend(params, grid, random_controls(rng), parse_objective("set2", gate_H()), OptimizerConfig(L_stuck=20))
    assert record.termination is Termination.STUCK
    assert record.iterations == 0
    assert record.evaluations == 21
    assert record.objective == 1.0


def test_descend_stuck_on_stagnation(params, grid, rng, monkeypatch):
    # chaque essai est accepté mais ne fait baisser F que de 1e-6
    values = (1.0 - 1e-6 * k for k in count())
    monkeypatch.setattr(grape, "evaluate", lambda *_a, **_k: next(values))
    record = descend(params, grid, random_controls(rng), parse_objective("set2", gate_H()), OptimizerConfig())
    assert record.termination is Termination.STUCK
    assert record.normal
    assert record.iterations == 20
    assert record.evaluations == 21
    assert "stagnation" in record.message


def test_descend_stagnation_rule_can_be_disabled(params, grid, rng, monkeypatch):
    values = (1.0 - 1e-6 * k for k in count())
    monkeypatch.setattr(grape, "evaluate", lambda *_a, **_k: next(values))
    cfg = OptimizerConfig(rtol=0.0, max_iters=50)
    record = descend(params, grid, random_controls(rng), parse_objective("set2", gate_H()), cfg)
    assert record.termination is Termination.MAX_ITERS
    assert record.iterations == 50


def test_descend_with_default_config_terminates_normally(params, grid):
    from qubit_landscape.survey import sample_initial

    spec = parse_objective("set3-grk", gate_H())
    for seed in (0, 1):
        record = descend(params, grid, sample_initial(seed, 0, grid), spec, OptimizerConfig())
        assert record.termination in (Termination.CONVERGED, Termination.STUCK), record.message
        assert record.iterations < OptimizerConfig().max_iters
        assert record.objective < record.initial_objective


def test_descend_flags_non_finite_objective(params, grid, rng, monkeypatch):
    monkeypatch.setattr(grape, "evaluate", lambda *_a, **_k: float("nan"))
    record = descend(params, grid, random_controls(rng), parse_objective("set2", gate_H()))
    assert record.termination is Termination.FAILED
    assert not record.normal
    assert record.message


def test_descend_flags_non_finite_gradient(params, grid, rng, monkeypatch):
    monkeypatch.setattr(grape, "gradient", lambda *_a, **_k: np.full(2 * grid.M, np.nan))
    record = descend(params, grid, random_controls(rng), parse_objective("set2", gate_H()))
    assert record.termination is Termination.FAILED
    assert "gradient" in record.message


def test_descend_rejects_bad_init(params, grid):
    spec = parse_objective("set2", gate_H())
    with pytest.raises(ValueError):
        descend(params, grid, ControlVector.zeros(grid.M + 1), spec)
    with pytest.raises(ValueError):
        descend(params, grid, ControlVector(np.full(grid.M, np.nan), np.zeros(grid.M)), spec)


def test_descent_is_mirror_equivariant(params, grid, rng):
    # T et l'ensemble SET2 sont invariants par S = diag(-1, -1, 1)
    spec = parse_objective("set2", gate_T())
    init = random_controls(rng)
    cfg = OptimizerConfig(max_iters=15)
    direct = descend(params, grid, init, spec, cfg, record_trace=True)
    mirrored = descend(params, grid, init.mirrored(), spec, cfg, record_trace=True)
    assert direct.iterations == mirrored.iterations
    np.testing.assert_allclose(mirrored.final.u, -direct.final.u, atol=1e-10)
    np.testing.assert_allclose(mirrored.final.w, direct.final.w, atol=1e-10)
    np.testing.assert_allclose(mirrored.trace, direct.trace, rtol=1e-10)


def test_run_record_round_trip(params, grid, rng):
    record = descend(
        params, grid, random_controls(rng), parse_objective("set2", gate_H()), OptimizerConfig(max_iters=2),
        seed=11, run_index=4, record_trace=True,
    )
    payload = record.to_dict()
    assert {"seed", "termination", "iterations", "objective", "frobenius", "u", "w", "u0", "w0"} <= set(payload)
    again = RunRecord.from_dict(payload)
    assert again.to_dict() == payload
    assert again.termination is record.termination


@pytest.mark.slow
def test_descend_reaches_hadamard_neighbourhood(params, grid):
    from qubit_landscape.survey import sample_initial

    record = descend(params, grid, sample_initial(0, 0, grid), parse_objective("set3-grk", gate_H()))
    assert record.termination in (Termination.CONVERGED, Termination.STUCK)
    assert record.objective == pytest.approx(3.484e-4, rel=0.15)

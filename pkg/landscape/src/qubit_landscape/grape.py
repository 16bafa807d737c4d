"""
grape.py
========

Gradient exact des fonctionnelles par rapport aux 2M composantes de contrôle
(u_1..u_M, w_1..w_M), et descente de gradient à pas adaptatif.

Dérivée d'une exponentielle : formule intégrale
    d/dx e^{A dt} = int_0^dt e^{A t} B_x e^{A (dt - t)} dt
approchée par la méthode des trapèzes sur N_partition sous-intervalles.

Pas adaptatif (accept / reject) :
    v' = v - h grad F
    F(v') < F(v)  -> accepté, h <- c h
    sinon          -> rejeté, h <- d h ; L_stuck rejets consécutifs => STUCK

Stagnation : si les L_stuck derniers pas acceptés ont fait baisser F de moins
de rtol (en relatif), la descente s'arrête aussi en STUCK.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.integrate import trapezoid
from scipy.linalg import expm_frechet

from .dynamics import (
    ControlVector,
    IntervalStep,
    SystemParams,
    TimeGrid,
    generator_matrices,
    interval_steps,
    matrix_exp,
    needs_augmented_form,
    propagate_states_batch,
)
from .objectives import ObjectiveKind, ObjectiveSpec, evaluate, objective_frobenius

log = logging.getLogger(__name__)


# =============================================================================
# Configuration & résultats
# =============================================================================

class OptimizerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    eps: float = Field(1e-5, gt=0, description="seuil d'arrêt sur F")
    h0: float = Field(1.0, gt=0, description="pas initial")
    c: float = Field(1.1, gt=1, description="facteur d'agrandissement du pas")
    d: float = Field(0.5, gt=0, lt=1, description="facteur de réduction du pas")
    L_stuck: int = Field(20, ge=1, description="rejets consécutifs (ou pas acceptés stagnants) avant arrêt")
    rtol: float = Field(
        1e-2, ge=0, lt=1, description="baisse relative minimale de F sur L_stuck pas acceptés (0 = désactivé)"
    )
    N_partition: int = Field(20, ge=2, description="panneaux de la règle des trapèzes")
    max_iters: int = Field(10_000, ge=1, description="plafond de pas acceptés")


class Termination(str, Enum):
    CONVERGED = "CONVERGED"
    STUCK = "STUCK"
    MAX_ITERS = "MAX_ITERS"
    FAILED = "FAILED"


def _json_float(x: float) -> Optional[float]:
    return float(x) if np.isfinite(x) else None


def _from_json_float(x: Optional[float]) -> float:
    return float("nan") if x is None else float(x)


@dataclass(frozen=True, eq=False)
class RunRecord:
    seed: Optional[int]
    initial: ControlVector
    final: ControlVector
    iterations: int
    termination: Termination
    objective: float
    frobenius: float
    initial_objective: float
    evaluations: int = 0
    run_index: Optional[int] = None
    trace: Tuple[float, ...] = field(default_factory=tuple)
    message: str = ""

    @property
    def normal(self) -> bool:
        """Terminaison normale (prise en compte dans les statistiques)."""
        return self.termination in (Termination.CONVERGED, Termination.STUCK)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "run_index": self.run_index,
            "termination": self.termination.value,
            "iterations": self.iterations,
            "evaluations": self.evaluations,
            "objective": _json_float(self.objective),
            "frobenius": _json_float(self.frobenius),
            "initial_objective": _json_float(self.initial_objective),
            "u": self.final.u.tolist(),
            "w": self.final.w.tolist(),
            "u0": self.initial.u.tolist(),
            "w0": self.initial.w.tolist(),
            "trace": [_json_float(x) for x in self.trace],
            "message": self.message,
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "RunRecord":
        return cls(
            seed=payload.get("seed"),
            run_index=payload.get("run_index"),
            initial=ControlVector(payload["u0"], payload["w0"]),
            final=ControlVector(payload["u"], payload["w"]),
            iterations=int(payload["iterations"]),
            evaluations=int(payload.get("evaluations", 0)),
            termination=Termination(payload["termination"]),
            objective=_from_json_float(payload["objective"]),
            frobenius=_from_json_float(payload["frobenius"]),
            initial_objective=_from_json_float(payload.get("initial_objective")),
            trace=tuple(_from_json_float(x) for x in payload.get("trace", [])),
            message=payload.get("message", ""),
        )


def failed_record(
    init: ControlVector,
    message: str,
    *,
    seed: Optional[int] = None,
    run_index: Optional[int] = None,
    evaluations: int = 0,
) -> RunRecord:
    nan = float("nan")
    return RunRecord(
        seed=seed,
        run_index=run_index,
        initial=init,
        final=init,
        iterations=0,
        evaluations=evaluations,
        termination=Termination.FAILED,
        objective=nan,
        frobenius=nan,
        initial_objective=nan,
        message=message,
    )


# =============================================================================
# Dérivées par intervalle
# =============================================================================

def _node_exponentials(A: np.ndarray, dt: float, n_partition: int) -> np.ndarray:
    """e^{A t_i} aux noeuds t_i = i dt / N, i = 0..N (puissances du pas élémentaire)."""
    step = matrix_exp(A * (dt / n_partition))
    nodes = np.empty((n_partition + 1, 3, 3))
    nodes[0] = np.eye(3)
    for i in range(1, n_partition + 1):
        nodes[i] = nodes[i - 1] @ step
    return nodes


def _sandwich_integral(nodes: np.ndarray, Bx: np.ndarray, dt: float) -> np.ndarray:
    # integrand_i = e^{A t_i} Bx e^{A (dt - t_i)}
    integrand = np.einsum("iab,bc,icd->iad", nodes, Bx, nodes[::-1])
    return trapezoid(integrand, dx=dt / (len(nodes) - 1), axis=0)


def d_exp_du(
    A: np.ndarray,
    Bu: np.ndarray,
    dt: float,
    n_partition: int,
    *,
    nodes: np.ndarray | None = None,
) -> np.ndarray:
    if not dt > 0:
        raise ValueError(f"dt doit être > 0 (reçu: {dt})")
    if nodes is None:
        nodes = _node_exponentials(A, dt, n_partition)
    return _sandwich_integral(nodes, np.asarray(Bu, dtype=float), dt)


def d_exp_dw(
    A: np.ndarray,
    Bn: np.ndarray,
    w: float,
    dt: float,
    n_partition: int,
    *,
    nodes: np.ndarray | None = None,
) -> np.ndarray:
    """Règle de chaîne via n = w^2 : facteur 2w."""
    if not dt > 0:
        raise ValueError(f"dt doit être > 0 (reçu: {dt})")
    if w == 0:
        return np.zeros((3, 3))
    if nodes is None:
        nodes = _node_exponentials(A, dt, n_partition)
    return 2.0 * w * _sandwich_integral(nodes, np.asarray(Bn, dtype=float), dt)


def d_g(
    A: np.ndarray,
    b: np.ndarray,
    Bx: np.ndarray,
    dt: float,
    dExp: np.ndarray,
    scale: float,
    *,
    expA: np.ndarray | None = None,
) -> np.ndarray:
    """
    dg/dx = dExp A^{-1} b - scale (e^{A dt} - I) A^{-1} Bx A^{-1} b

    A mal conditionnée : dérivée de Fréchet exacte de l'exponentielle augmentée.
    """
    b = np.asarray(b, dtype=float)
    if not np.any(b) or scale == 0:
        return np.zeros(3)
    if needs_augmented_form(A):
        X = np.zeros((4, 4))
        X[:3, :3] = A * dt
        X[:3, 3] = b * dt
        dX = np.zeros((4, 4))
        dX[:3, :3] = scale * np.asarray(Bx, dtype=float) * dt
        return expm_frechet(X, dX, compute_expm=False)[:3, 3]
    E = matrix_exp(A * dt) if expA is None else expA
    y = np.linalg.solve(A, b)
    z = np.linalg.solve(A, Bx @ y)
    return dExp @ y - scale * (E - np.eye(3)) @ z


@dataclass(frozen=True, eq=False)
class IntervalDerivatives:
    dE_u: np.ndarray
    dE_w: np.ndarray
    dg_u: np.ndarray
    dg_w: np.ndarray


def interval_derivatives(
    params: SystemParams,
    steps: Sequence[IntervalStep],
    n_partition: int,
) -> List[IntervalDerivatives]:
    gens = generator_matrices(params)
    out: List[IntervalDerivatives] = []
    for step in steps:
        nodes = _node_exponentials(step.A, step.dt, n_partition)
        dE_u = d_exp_du(step.A, gens.Bu, step.dt, n_partition, nodes=nodes)
        dE_w = d_exp_dw(step.A, gens.Bn, step.w, step.dt, n_partition, nodes=nodes)
        dg_u = d_g(step.A, gens.b, gens.Bu, step.dt, dE_u, 1.0, expA=step.expA)
        dg_w = d_g(step.A, gens.b, gens.Bn, step.dt, dE_w, 2.0 * step.w, expA=step.expA)
        out.append(IntervalDerivatives(dE_u, dE_w, dg_u, dg_w))
    return out


# =============================================================================
# Gradient
# =============================================================================

def _adjoint_gradient(
    steps: Sequence[IntervalStep],
    derivs: Sequence[IntervalDerivatives],
    trajectory: np.ndarray,
    residual: np.ndarray,
    weight: float,
    *,
    affine: bool = True,
) -> np.ndarray:
    """
    sum_j residual_j . dr_j(T)/dv_k pour tous les k, par rétro-propagation :
    lambda_M = residual, lambda_{k-1} = E_k^T lambda_k.

    trajectory : (M+1, K, 3) états intermédiaires r_{k-1} ; retour (M, 2).
    """
    lam = np.array(residual, dtype=float)
    grad = np.zeros((len(steps), 2))
    for k in reversed(range(len(steps))):
        r_prev = trajectory[k]
        der = derivs[k]
        du = r_prev @ der.dE_u.T
        dw = r_prev @ der.dE_w.T
        if affine:
            du = du + der.dg_u
            dw = dw + der.dg_w
        grad[k, 0] = weight * np.sum(lam * du)
        grad[k, 1] = weight * np.sum(lam * dw)
        lam = lam @ steps[k].expA
    return grad


def gradient(
    params: SystemParams,
    grid: TimeGrid,
    controls: ControlVector,
    spec: ObjectiveSpec,
    n_partition: int = 20,
) -> np.ndarray:
    """Gradient (2M,) au layout u_1..u_M puis w_1..w_M."""
    steps = interval_steps(params, grid, controls)
    derivs = interval_derivatives(params, steps, n_partition)

    if spec.kind is ObjectiveKind.STATES:
        traj = propagate_states_batch(steps, spec.state_set.bloch)
        residual = traj[-1] - spec.targets
        grad = _adjoint_gradient(steps, derivs, traj, residual, 1.0 / spec.state_set.K)
    else:
        # F_U = ||Psi' - Psi_U'||^2 + sum_j ||Psi'' e_j - Psi_U'' e_j||^2
        gate = spec.gate
        traj0 = propagate_states_batch(steps, np.zeros(3))
        grad = _adjoint_gradient(steps, derivs, traj0, traj0[-1] - gate.translation, 2.0)
        traj_lin = propagate_states_batch(steps, np.eye(3), affine=False)
        grad += _adjoint_gradient(
            steps, derivs, traj_lin, traj_lin[-1] - gate.rotation.T, 2.0, affine=False
        )

    return np.concatenate([grad[:, 0], grad[:, 1]])


# =============================================================================
# Descente
# =============================================================================

def _safe_objective(
    params: SystemParams,
    grid: TimeGrid,
    v: np.ndarray,
    spec: ObjectiveSpec,
) -> float:
    try:
        return evaluate(params, grid, ControlVector.from_flat(v, grid.M), spec)
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as e:
        log.debug("Évaluation impossible: %s", e)
        return float("nan")


def descend(
    params: SystemParams,
    grid: TimeGrid,
    init: ControlVector,
    spec: ObjectiveSpec,
    config: OptimizerConfig | None = None,
    *,
    seed: Optional[int] = None,
    run_index: Optional[int] = None,
    record_trace: bool = False,
) -> RunRecord:
    """
    Descente de gradient à pas adaptatif depuis `init`.

    Ne lève pas d'exception sur un échec numérique : renvoie un RunRecord FAILED.
    """
    config = config or OptimizerConfig()
    if init.M != grid.M:
        raise ValueError(f"Contrôles initiaux: M={init.M}, grille: M={grid.M}")
    if not init.is_finite():
        raise ValueError("Contrôles initiaux non finis")

    v = init.to_flat()
    F = _safe_objective(params, grid, v, spec)
    evaluations = 1
    if not np.isfinite(F):
        return failed_record(
            init, "objectif non fini au point initial", seed=seed, run_index=run_index,
            evaluations=evaluations,
        )

    F_init = F
    trace: List[float] = [F]
    h = config.h0
    accepted = 0
    rejections = 0
    grad: np.ndarray | None = None
    message = ""
    # F aux L_stuck derniers pas acceptés (plus le point de départ de la fenêtre)
    window: deque[float] = deque([F], maxlen=config.L_stuck + 1)

    while True:
        if F < config.eps:
            termination = Termination.CONVERGED
            break
        if accepted >= config.max_iters:
            termination = Termination.MAX_ITERS
            break

        if grad is None:
            try:
                grad = gradient(
                    params, grid, ControlVector.from_flat(v, grid.M), spec, config.N_partition
                )
            except (ValueError, FloatingPointError, np.linalg.LinAlgError) as e:
                grad = np.full(v.shape, np.nan)
                message = f"gradient: {e}"
            if not np.all(np.isfinite(grad)):
                termination = Termination.FAILED
                message = message or "gradient non fini"
                break

        trial = v - h * grad
        F_trial = _safe_objective(params, grid, trial, spec) if np.all(np.isfinite(trial)) else np.nan
        evaluations += 1

        if np.isfinite(F_trial) and F_trial < F:
            v, F = trial, F_trial
            grad = None
            h *= config.c
            rejections = 0
            accepted += 1
            if record_trace:
                trace.append(F)
            if accepted % 500 == 0:
                log.debug("iter=%d F=%.6e h=%.3e", accepted, F, h)
            window.append(F)
            if F >= config.eps and len(window) == window.maxlen and window[0] - F < config.rtol * window[0]:
                termination = Termination.STUCK
                message = f"stagnation: baisse relative < {config.rtol:g} sur {config.L_stuck} pas"
                break
        else:
            h *= config.d
            rejections += 1
            if rejections >= config.L_stuck:
                termination = Termination.STUCK
                break

    final = ControlVector.from_flat(v, grid.M)
    if termination is Termination.FAILED:
        frob = float("nan")
    else:
        frob = objective_frobenius(params, grid, final, spec.gate)

    log.debug(
        "descend: %s après %d pas (%d évaluations), F=%.6e", termination.value, accepted,
        evaluations, F,
    )
    return RunRecord(
        seed=seed,
        run_index=run_index,
        initial=init,
        final=final,
        iterations=accepted,
        evaluations=evaluations,
        termination=termination,
        objective=float(F),
        frobenius=frob,
        initial_objective=float(F_init),
        trace=tuple(trace) if record_trace else (),
        message=message,
    )

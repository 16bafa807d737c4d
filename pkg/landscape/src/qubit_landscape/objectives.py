"""
objectives.py
=============

Portes cibles, ensembles d'états et fonctionnelles d'infidélité.

- F_{U,K} : moyenne des distances de Hilbert-Schmidt au carré sur K états,
  évaluée en coordonnées de Bloch : (1/2K) sum_j ||r_j(T) - r_U_j||^2
- F_U     : distance de Frobenius au carré entre Psi(T) et Psi_U

Les matrices complexes 2x2 n'apparaissent qu'à la construction des portes ; tout le
reste tourne en réel. Une porte est identifiée par son action de conjugaison (Psi_U),
la phase globale de U n'a donc aucune incidence.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Tuple

import numpy as np
from scipy.linalg import expm

from .dynamics import (
    PAULI,
    ControlVector,
    SystemParams,
    TimeGrid,
    bloch_to_density,
    interval_steps,
    propagate_evolution_matrix,
    propagate_states_batch,
)

log = logging.getLogger(__name__)

UNITARY_ATOL = 1e-12


# =============================================================================
# Portes
# =============================================================================

@dataclass(frozen=True, eq=False)
class Gate:
    name: str
    U: np.ndarray
    psi_u: np.ndarray

    @property
    def rotation(self) -> np.ndarray:
        """Bloc 3x3 Psi_U'' (orthogonal, det = +1)."""
        return self.psi_u[1:, 1:]

    @property
    def translation(self) -> np.ndarray:
        return self.psi_u[1:, 0]

    def image(self, r: Sequence[float]) -> np.ndarray:
        return self.rotation @ np.asarray(r, dtype=float) + self.translation


def induced_matrix(U: np.ndarray) -> np.ndarray:
    """Psi_U[i, j] = 1/2 Re Tr(sigma_i U sigma_j U^dagger)."""
    Ud = U.conj().T
    psi = np.empty((4, 4))
    for i, si in enumerate(PAULI):
        for j, sj in enumerate(PAULI):
            psi[i, j] = 0.5 * np.trace(si @ U @ sj @ Ud).real
    return psi


def gate_from_unitary(U: np.ndarray, name: str) -> Gate:
    U = np.array(U, dtype=complex)
    if U.shape != (2, 2):
        raise ValueError(f"Porte {name}: matrice 2x2 attendue (reçu: {U.shape})")
    if not np.allclose(U.conj().T @ U, np.eye(2), rtol=0.0, atol=UNITARY_ATOL):
        raise ValueError(f"Porte {name}: matrice non unitaire")
    psi = induced_matrix(U)
    U.setflags(write=False)
    psi.setflags(write=False)
    return Gate(name=name, U=U, psi_u=psi)


def gate_H() -> Gate:
    return gate_from_unitary(np.array([[1, 1], [1, -1]]) / np.sqrt(2), "H")


def gate_T() -> Gate:
    return gate_from_unitary(np.diag([1.0, np.exp(1j * np.pi / 4)]), "T")


def gate_phase_shift(delta: float) -> Gate:
    """U_delta = diag(1, e^{i delta}) ; tout delta réel est accepté (2pi-périodique)."""
    if not np.isfinite(delta):
        raise ValueError(f"delta doit être fini (reçu: {delta})")
    return gate_from_unitary(np.diag([1.0, np.exp(1j * delta)]), f"phase:{delta:g}")


def gate_rotation_family(theta: float) -> Gate:
    """
    Famille de rotations d'angle theta dans (-pi/2, pi/2] qui envoient toutes
    (0,0,+1) sur (1,0,0) et (0,0,-1) sur (-1,0,0), comme H.

    U(theta) = exp(-i phi (cos(theta)/sqrt2 X + sin(theta) Y + cos(theta)/sqrt2 Z))
    avec phi = arctan2(1, sin(theta)) ; theta = 0 redonne H à une phase près.
    """
    if not (np.isfinite(theta) and -np.pi / 2 < theta <= np.pi / 2):
        raise ValueError(f"theta doit être dans (-pi/2, pi/2] (reçu: {theta})")
    c, s = np.cos(theta), np.sin(theta)
    axis = c / np.sqrt(2) * PAULI[1] + s * PAULI[2] + c / np.sqrt(2) * PAULI[3]
    phi = np.arctan2(1.0, s)
    return gate_from_unitary(expm(-1j * phi * axis), f"rotation:{theta:g}")


def parse_gate(identifier: str) -> Gate:
    """'H', 'T', 'rotation:<theta>', 'phase:<delta>'."""
    ident = identifier.strip()
    if ident == "H":
        return gate_H()
    if ident == "T":
        return gate_T()
    kind, sep, value = ident.partition(":")
    if sep and kind in ("rotation", "phase"):
        try:
            x = float(value)
        except ValueError as e:
            raise ValueError(f"Porte invalide: {identifier!r} (nombre attendu après ':')") from e
        gate = gate_rotation_family(x) if kind == "rotation" else gate_phase_shift(x)
        return Gate(name=ident, U=gate.U, psi_u=gate.psi_u)
    raise ValueError(
        f"Porte inconnue: {identifier!r}\n"
        "👉 Valeurs possibles: H, T, rotation:<theta>, phase:<delta>"
    )


# =============================================================================
# Ensembles d'états
# =============================================================================

class StateSetKind(str, Enum):
    SET2 = "set2"
    SET3_GRK = "set3-grk"
    SET4 = "set4"
    SET3_BASIS = "set3-basis"


_SET_BLOCH = {
    StateSetKind.SET2: [(0, 0, 1), (0, 0, -1)],
    StateSetKind.SET3_GRK: [(0, 0, 1 / 3), (1, 0, 0), (0, 0, 0)],
    StateSetKind.SET4: [(0, 0, 1), (0, 0, -1), (1, 0, 0), (0, 1, 0)],
    StateSetKind.SET3_BASIS: [(1, 0, 0), (0, 1, 0), (0, 0, 1)],
}


@dataclass(frozen=True, eq=False)
class StateSet:
    name: str
    bloch: np.ndarray
    kind: StateSetKind | None = None

    def __post_init__(self) -> None:
        bloch = np.array(self.bloch, dtype=float)
        if bloch.ndim != 2 or bloch.shape[1] != 3:
            raise ValueError(f"StateSet {self.name}: tableau (K, 3) attendu (reçu: {bloch.shape})")
        if np.any(np.linalg.norm(bloch, axis=1) > 1.0 + 1e-9):
            raise ValueError(f"StateSet {self.name}: vecteur de Bloch hors de la boule unité")
        bloch.setflags(write=False)
        object.__setattr__(self, "bloch", bloch)

    @classmethod
    def from_bloch(cls, vectors: Sequence[Sequence[float]], name: str = "custom") -> "StateSet":
        return cls(name=name, bloch=np.asarray(vectors, dtype=float))

    @property
    def K(self) -> int:
        return int(self.bloch.shape[0])

    @property
    def densities(self) -> Tuple[np.ndarray, ...]:
        return tuple(bloch_to_density(r) for r in self.bloch)


def make_state_set(kind: StateSetKind | str) -> StateSet:
    kind = StateSetKind(kind)
    return StateSet(name=kind.value, bloch=np.asarray(_SET_BLOCH[kind], dtype=float), kind=kind)


# =============================================================================
# Spécification d'objectif
# =============================================================================

class ObjectiveKind(str, Enum):
    STATES = "states"
    FROBENIUS = "frobenius"


@dataclass(frozen=True, eq=False)
class ObjectiveSpec:
    gate: Gate
    kind: ObjectiveKind
    state_set: StateSet | None = None

    def __post_init__(self) -> None:
        if self.kind is ObjectiveKind.STATES and (self.state_set is None or self.state_set.K == 0):
            raise ValueError("Un objectif STATES demande un ensemble d'états non vide")

    @classmethod
    def states(cls, gate: Gate, state_set: StateSet) -> "ObjectiveSpec":
        return cls(gate=gate, kind=ObjectiveKind.STATES, state_set=state_set)

    @classmethod
    def frobenius(cls, gate: Gate) -> "ObjectiveSpec":
        return cls(gate=gate, kind=ObjectiveKind.FROBENIUS)

    @property
    def targets(self) -> np.ndarray:
        """Images r_U_j des états par conjugaison exacte (indépendantes des contrôles)."""
        if self.state_set is None:
            raise ValueError("Pas de cibles pour un objectif FROBENIUS")
        return self.state_set.bloch @ self.gate.rotation.T + self.gate.translation

    @property
    def identifier(self) -> str:
        if self.kind is ObjectiveKind.FROBENIUS:
            return "frobenius"
        return self.state_set.name

    @property
    def label(self) -> str:
        """Libellé façon tableau de résultats : F_{H,3} ou F_H."""
        if self.kind is ObjectiveKind.FROBENIUS:
            return f"F_{self.gate.name}"
        return f"F_{{{self.gate.name},{self.state_set.K}}}"


def parse_objective(identifier: str, gate: Gate) -> ObjectiveSpec:
    ident = identifier.strip().lower()
    if ident == "frobenius":
        return ObjectiveSpec.frobenius(gate)
    try:
        kind = StateSetKind(ident)
    except ValueError as e:
        choices = ", ".join([k.value for k in StateSetKind] + ["frobenius"])
        raise ValueError(f"Objectif inconnu: {identifier!r}\n👉 Valeurs possibles: {choices}") from e
    return ObjectiveSpec.states(gate, make_state_set(kind))


# =============================================================================
# Évaluation
# =============================================================================

def final_bloch_states(
    params: SystemParams,
    grid: TimeGrid,
    controls: ControlVector,
    state_set: StateSet,
) -> np.ndarray:
    steps = interval_steps(params, grid, controls)
    return propagate_states_batch(steps, state_set.bloch)[-1]


def objective_states(
    params: SystemParams,
    grid: TimeGrid,
    controls: ControlVector,
    spec: ObjectiveSpec,
) -> float:
    if spec.kind is not ObjectiveKind.STATES:
        raise ValueError("objective_states demande un objectif STATES")
    diff = final_bloch_states(params, grid, controls, spec.state_set) - spec.targets
    return float(np.sum(diff ** 2) / (2 * spec.state_set.K))


def objective_states_density(
    params: SystemParams,
    grid: TimeGrid,
    controls: ControlVector,
    spec: ObjectiveSpec,
) -> float:
    """Même fonctionnelle, calculée sur les matrices densité : mean_j ||rho_j(T) - U rho_j U^+||^2."""
    if spec.kind is not ObjectiveKind.STATES:
        raise ValueError("objective_states_density demande un objectif STATES")
    finals = final_bloch_states(params, grid, controls, spec.state_set)
    U = spec.gate.U
    total = 0.0
    for r_final, rho0 in zip(finals, spec.state_set.densities):
        delta = bloch_to_density(r_final) - U @ rho0 @ U.conj().T
        total += float(np.sum(np.abs(delta) ** 2))
    return total / spec.state_set.K


def objective_frobenius(
    params: SystemParams,
    grid: TimeGrid,
    controls: ControlVector,
    gate: Gate,
) -> float:
    psi = propagate_evolution_matrix(params, grid, controls).psi
    return float(np.sum((psi - gate.psi_u) ** 2))


def evaluate(
    params: SystemParams,
    grid: TimeGrid,
    controls: ControlVector,
    spec: ObjectiveSpec,
) -> float:
    if spec.kind is ObjectiveKind.FROBENIUS:
        return objective_frobenius(params, grid, controls, spec.gate)
    return objective_states(params, grid, controls, spec)


def check_unital_relation(
    params: SystemParams,
    grid: TimeGrid,
    controls: ControlVector,
    gate: Gate,
) -> Tuple[float, float]:
    """(F_U, 6 F_{U,3}) sur la base standard ; égaux pour une évolution unitale."""
    if not params.is_unital:
        raise ValueError(
            f"Relation F_U = 6 F_U,3 valable seulement pour gamma = 0 (reçu: {params.gamma})"
        )
    basis = ObjectiveSpec.states(gate, make_state_set(StateSetKind.SET3_BASIS))
    return (
        objective_frobenius(params, grid, controls, gate),
        6.0 * objective_states(params, grid, controls, basis),
    )


def cross_evaluate(
    params: SystemParams,
    grid: TimeGrid,
    controls: ControlVector,
    from_spec: ObjectiveSpec,
    to_spec: ObjectiveSpec,
) -> float:
    """Valeur de to_spec sur des contrôles optimisés pour from_spec (pas d'optimisation)."""
    if from_spec.gate.name != to_spec.gate.name:
        log.warning(
            "cross_evaluate: portes différentes (%s -> %s)", from_spec.gate.name, to_spec.gate.name
        )
    return evaluate(params, grid, controls, to_spec)


def set4_decomposition(
    params: SystemParams,
    grid: TimeGrid,
    controls: ControlVector,
    gate: Gate,
) -> Tuple[float, float]:
    """F_{U,4} = 1/2 F_{U,2} + reste, le reste portant sur les lignes |+> et |i>."""
    f4 = objective_states(params, grid, controls, ObjectiveSpec.states(gate, make_state_set("set4")))
    f2 = objective_states(params, grid, controls, ObjectiveSpec.states(gate, make_state_set("set2")))
    return 0.5 * f2, f4 - 0.5 * f2

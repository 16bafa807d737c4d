"""
dynamics.py
===========

Objectif
--------
Dynamique d'un qubit ouvert piloté par un contrôle cohérent u(t) et un contrôle
incohérent n(t) = w(t)**2, en coordonnées de Bloch :

- forme inhomogène  : dr/dt = A(u, n) r + b          (r dans la boule de Bloch)
- forme homogène    : dq/dt = C(u, n) q,  q = (1, r)  (4 composantes)

Les contrôles sont constants par morceaux sur une grille t_0 = 0 < ... < t_M = T.
Sur chaque intervalle on applique une exponentielle de matrice
(scipy.linalg.expm : scaling & squaring + Padé d'ordre 13), donc aucune
intégration numérique d'EDO n'intervient ici.

Toutes les valeurs sont immuables (tableaux numpy en lecture seule) : on peut les
partager entre threads / process sans synchronisation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Sequence

import numpy as np
from scipy.linalg import expm

log = logging.getLogger(__name__)


# =============================================================================
# Constantes
# =============================================================================

# marge numérique tolérée sur la norme d'un vecteur de Bloch physique
PHYSICAL_SLACK = 1e-9

# au-delà, on bascule sur l'exponentielle augmentée pour g_k
CONDITION_LIMIT = 1e8

HERMITIAN_ATOL = 1e-12

PAULI = (
    np.eye(2, dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)


def _readonly(values, *, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


# =============================================================================
# Types
# =============================================================================

@dataclass(frozen=True)
class SystemParams:
    """
    Constantes physiques du modèle (sans dimension, omega = 1 fixe l'échelle).

    - omega : fréquence de transition
    - mu    : moment dipolaire (> 0)
    - gamma : coefficient de décohérence (>= 0)
    """
    omega: float = 1.0
    mu: float = 0.1
    gamma: float = 0.01

    def __post_init__(self) -> None:
        if not np.isfinite(self.omega):
            raise ValueError(f"omega doit être fini (reçu: {self.omega})")
        if not (np.isfinite(self.mu) and self.mu > 0):
            raise ValueError(f"mu doit être > 0 (reçu: {self.mu})")
        if not (np.isfinite(self.gamma) and self.gamma >= 0):
            raise ValueError(f"gamma doit être >= 0 (reçu: {self.gamma})")

    @property
    def is_unital(self) -> bool:
        return self.gamma == 0


@dataclass(frozen=True)
class TimeGrid:
    """
    Grille temporelle t_0 = 0 < t_1 < ... < t_M = T.

    On stocke un tuple (hashable, comparable) ; `dt` renvoie les longueurs des
    intervalles sous forme de tableau.
    """
    boundaries: tuple

    def __post_init__(self) -> None:
        t = np.asarray(self.boundaries, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("Une grille demande au moins 2 bornes (M >= 1)")
        if not np.all(np.isfinite(t)):
            raise ValueError("Bornes de grille non finies")
        if t[0] != 0.0:
            raise ValueError(f"La grille doit commencer à t_0 = 0 (reçu: {t[0]})")
        if np.any(np.diff(t) <= 0):
            raise ValueError("Les bornes de la grille doivent être strictement croissantes")
        object.__setattr__(self, "boundaries", tuple(float(x) for x in t))

    @classmethod
    def regular(cls, T: float = 5.0, M: int = 10) -> "TimeGrid":
        if not T > 0:
            raise ValueError(f"T doit être > 0 (reçu: {T})")
        if int(M) < 1:
            raise ValueError(f"M doit être >= 1 (reçu: {M})")
        return cls(tuple(np.linspace(0.0, float(T), int(M) + 1)))

    @classmethod
    def from_boundaries(cls, boundaries: Sequence[float]) -> "TimeGrid":
        return cls(tuple(boundaries))

    @property
    def T(self) -> float:
        return self.boundaries[-1]

    @property
    def M(self) -> int:
        return len(self.boundaries) - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(np.asarray(self.boundaries))


@dataclass(frozen=True, eq=False)
class ControlVector:
    """
    Contrôles constants par morceaux : u_k (cohérent) et w_k (auxiliaire), avec
    n_k = w_k**2 >= 0 par construction.
    """
    u: np.ndarray
    w: np.ndarray

    def __post_init__(self) -> None:
        u = _readonly(self.u)
        w = _readonly(self.w)
        if u.ndim != 1 or u.shape != w.shape:
            raise ValueError(f"u et w doivent avoir la même longueur (u={u.shape}, w={w.shape})")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "w", w)

    @classmethod
    def zeros(cls, M: int) -> "ControlVector":
        return cls(np.zeros(M), np.zeros(M))

    @classmethod
    def from_flat(cls, v: np.ndarray, M: int) -> "ControlVector":
        v = np.asarray(v, dtype=float)
        if v.shape != (2 * M,):
            raise ValueError(f"Vecteur de contrôle attendu de taille {2 * M}, reçu {v.shape}")
        return cls(v[:M], v[M:])

    @classmethod
    def from_incoherent(cls, u: Sequence[float], n: Sequence[float]) -> "ControlVector":
        """Construit (u, w) à partir de (u, n) avec w = +sqrt(n)."""
        n = np.asarray(n, dtype=float)
        if np.any(n < 0):
            raise ValueError("Le contrôle incohérent n doit être >= 0")
        return cls(np.asarray(u, dtype=float), np.sqrt(n))

    @property
    def M(self) -> int:
        return int(self.u.size)

    @property
    def n(self) -> np.ndarray:
        return self.w ** 2

    def to_flat(self) -> np.ndarray:
        """Layout u_1..u_M puis w_1..w_M."""
        return np.concatenate([self.u, self.w])

    def mirrored(self) -> "ControlVector":
        return ControlVector(-self.u, self.w)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.w)))


@dataclass(frozen=True, eq=False)
class BlochState:
    r: np.ndarray

    def __post_init__(self) -> None:
        r = _readonly(self.r)
        if r.shape != (3,):
            raise ValueError(f"Un vecteur de Bloch a 3 composantes (reçu: {r.shape})")
        if not np.all(np.isfinite(r)):
            raise ValueError("Vecteur de Bloch non fini")
        if np.linalg.norm(r) > 1.0 + PHYSICAL_SLACK:
            raise ValueError(f"État non physique: ||r|| = {np.linalg.norm(r):.12g} > 1")
        object.__setattr__(self, "r", r)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.r))

    def extended(self) -> "ExtendedState":
        return ExtendedState(np.concatenate([[1.0], self.r]))


@dataclass(frozen=True, eq=False)
class ExtendedState:
    q: np.ndarray

    def __post_init__(self) -> None:
        q = _readonly(self.q)
        if q.shape != (4,):
            raise ValueError(f"Un état étendu a 4 composantes (reçu: {q.shape})")
        object.__setattr__(self, "q", q)

    @property
    def trace_defect(self) -> float:
        return abs(float(self.q[0]) - 1.0)

    def bloch(self) -> BlochState:
        return BlochState(self.q[1:])


@dataclass(frozen=True, eq=False)
class GeneratorMatrices:
    """
    Décomposition A(u, n) = B + Bu*u + Bn*n et terme source b = (0, 0, gamma).

    Bu est antisymétrique, Bn diagonale.
    """
    B: np.ndarray
    Bu: np.ndarray
    Bn: np.ndarray
    b: np.ndarray

    @classmethod
    def from_params(cls, params: SystemParams) -> "GeneratorMatrices":
        w, mu, g = params.omega, params.mu, params.gamma
        B = [
            [-g / 2, w, 0.0],
            [-w, -g / 2, 0.0],
            [0.0, 0.0, -g],
        ]
        Bu = 2 * mu * np.array([
            [0.0, 0.0, 0.0],
            [0.0, 0.0, -1.0],
            [0.0, 1.0, 0.0],
        ])
        Bn = -g * np.diag([1.0, 1.0, 2.0])
        return cls(_readonly(B), _readonly(Bu), _readonly(Bn), _readonly([0.0, 0.0, g]))

    def A(self, u: float, n: float) -> np.ndarray:
        return self.B + self.Bu * u + self.Bn * n

    def C(self, u: float, n: float) -> np.ndarray:
        C = np.zeros((4, 4))
        C[1:, 0] = self.b
        C[1:, 1:] = self.A(u, n)
        return C


@dataclass(frozen=True, eq=False)
class EvolutionMatrix:
    """
    Matrice 4x4 Psi de l'application dynamique dans la base sigma_i / 2.

    Structure : première ligne (1, 0, 0, 0), Psi' = translation (3,), Psi'' = partie linéaire (3x3).
    """
    psi: np.ndarray

    def __post_init__(self) -> None:
        psi = _readonly(self.psi)
        if psi.shape != (4, 4):
            raise ValueError(f"Psi doit être 4x4 (reçu: {psi.shape})")
        object.__setattr__(self, "psi", psi)

    @property
    def psi_prime(self) -> np.ndarray:
        return self.psi[1:, 0]

    @property
    def psi_doubleprime(self) -> np.ndarray:
        return self.psi[1:, 1:]

    @property
    def trace_defect(self) -> float:
        return float(np.max(np.abs(self.psi[0] - np.array([1.0, 0.0, 0.0, 0.0]))))

    def apply(self, r0: np.ndarray) -> np.ndarray:
        return self.psi_doubleprime @ np.asarray(r0, dtype=float) + self.psi_prime


@dataclass(frozen=True, eq=False)
class IntervalStep:
    """Cache d'un intervalle : générateur, exponentielle et translation g_k."""
    u: float
    w: float
    dt: float
    A: np.ndarray
    expA: np.ndarray
    g: np.ndarray

    @property
    def n(self) -> float:
        return self.w ** 2


# =============================================================================
# Générateurs
# =============================================================================

@lru_cache(maxsize=64)
def generator_matrices(params: SystemParams) -> GeneratorMatrices:
    return GeneratorMatrices.from_params(params)


def build_generator_A(params: SystemParams, u: float, n: float) -> np.ndarray:
    if n < 0:
        raise ValueError(f"n doit être >= 0 (reçu: {n})")
    return generator_matrices(params).A(u, n)


def build_generator_C(params: SystemParams, u: float, n: float) -> np.ndarray:
    if n < 0:
        raise ValueError(f"n doit être >= 0 (reçu: {n})")
    return generator_matrices(params).C(u, n)


# =============================================================================
# Exponentielle & translation g_k
# =============================================================================

def matrix_exp(X: np.ndarray) -> np.ndarray:
    """e^X pour une petite matrice réelle dense (scaling & squaring, Padé 13)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise ValueError(f"matrix_exp attend une matrice carrée (reçu: {X.shape})")
    if not np.all(np.isfinite(X)):
        raise ValueError("matrix_exp: entrée non finie")
    return expm(X)


def needs_augmented_form(A: np.ndarray) -> bool:
    """Vrai si A est trop mal conditionnée pour la forme (e^{A dt} - I) A^{-1} b."""
    cond = np.linalg.cond(A)
    return not np.isfinite(cond) or cond > CONDITION_LIMIT


def augmented_source_integral(A: np.ndarray, b: np.ndarray, dt: float) -> np.ndarray:
    """
    int_0^dt e^{A s} ds . b, lu dans le bloc haut-droit de exp([[A dt, b dt], [0, 0]]).
    Valable même si A est singulière.
    """
    X = np.zeros((4, 4))
    X[:3, :3] = A * dt
    X[:3, 3] = b * dt
    return matrix_exp(X)[:3, 3]


def compute_g(
    A: np.ndarray,
    b: np.ndarray,
    dt: float,
    *,
    expA: np.ndarray | None = None,
) -> np.ndarray:
    """g = (e^{A dt} - I) A^{-1} b, avec repli sur l'exponentielle augmentée."""
    if not dt > 0:
        raise ValueError(f"dt doit être > 0 (reçu: {dt})")
    b = np.asarray(b, dtype=float)
    if not np.any(b):
        return np.zeros(3)
    if needs_augmented_form(A):
        log.debug("compute_g: A mal conditionnée, forme augmentée")
        return augmented_source_integral(A, b, dt)
    E = matrix_exp(A * dt) if expA is None else expA
    return (E - np.eye(3)) @ np.linalg.solve(A, b)


# =============================================================================
# Propagation
# =============================================================================

def _check_controls(grid: TimeGrid, controls: ControlVector) -> None:
    if controls.M != grid.M:
        raise ValueError(
            f"Nombre d'intervalles incohérent: grille M={grid.M}, contrôles M={controls.M}"
        )
    if not controls.is_finite():
        raise ValueError("Contrôles non finis")


def interval_steps(
    params: SystemParams,
    grid: TimeGrid,
    controls: ControlVector,
) -> List[IntervalStep]:
    _check_controls(grid, controls)
    gens = generator_matrices(params)
    steps: List[IntervalStep] = []
    for u, w, dt in zip(controls.u, controls.w, grid.dt):
        A = gens.A(u, w * w)
        E = matrix_exp(A * dt)
        g = compute_g(A, gens.b, dt, expA=E)
        steps.append(IntervalStep(float(u), float(w), float(dt), A, E, g))
    return steps


def propagate_states_batch(
    steps: Sequence[IntervalStep],
    R0: np.ndarray,
    *,
    affine: bool = True,
) -> np.ndarray:
    """
    Propage K vecteurs (lignes de R0) : r_k = e^{A_k dt_k} r_{k-1} + g_k.

    affine=False ignore g_k (propagation de la partie linéaire Psi'' seule).
    Retour : tableau (M+1, K, 3), états intermédiaires inclus.
    """
    R0 = np.atleast_2d(np.asarray(R0, dtype=float))
    out = np.empty((len(steps) + 1,) + R0.shape)
    out[0] = R0
    for k, step in enumerate(steps, start=1):
        out[k] = out[k - 1] @ step.expA.T
        if affine:
            out[k] += step.g
    return out


def propagate_state(
    params: SystemParams,
    grid: TimeGrid,
    controls: ControlVector,
    r0: BlochState,
) -> List[BlochState]:
    """Séquence r_0, r_1, ..., r_M (M+1 états)."""
    traj = propagate_states_batch(interval_steps(params, grid, controls), r0.r)
    return [BlochState(r) for r in traj[:, 0, :]]


def propagate_evolution_matrix(
    params: SystemParams,
    grid: TimeGrid,
    controls: ControlVector,
) -> EvolutionMatrix:
    """Psi(T) = e^{C_M dt_M} ... e^{C_1 dt_1}."""
    _check_controls(grid, controls)
    gens = generator_matrices(params)
    psi = np.eye(4)
    for u, w, dt in zip(controls.u, controls.w, grid.dt):
        psi = matrix_exp(gens.C(u, w * w) * dt) @ psi
    return EvolutionMatrix(psi)


# =============================================================================
# Conversions matrice densité <-> Bloch
# =============================================================================

def _check_hermitian(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=complex)
    if X.shape != (2, 2):
        raise ValueError(f"Matrice 2x2 attendue (reçu: {X.shape})")
    if not np.allclose(X, X.conj().T, rtol=0.0, atol=HERMITIAN_ATOL):
        raise ValueError("Matrice non hermitienne")
    return X


def hermitian_to_vector(X: np.ndarray) -> np.ndarray:
    """q_i = Tr(X sigma_i), i = 0..3, pour X hermitienne quelconque."""
    X = _check_hermitian(X)
    return np.array([np.trace(X @ s).real for s in PAULI])


def vector_to_hermitian(q: Sequence[float]) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (4,):
        raise ValueError(f"Vecteur à 4 composantes attendu (reçu: {q.shape})")
    return 0.5 * sum(qi * s for qi, s in zip(q, PAULI))


def density_to_bloch(rho: np.ndarray) -> BlochState:
    q = hermitian_to_vector(rho)
    if abs(q[0] - 1.0) > HERMITIAN_ATOL:
        raise ValueError(
            f"Tr(rho) = {q[0]:.12g} != 1. "
            "Pour une matrice hermitienne quelconque, utiliser hermitian_to_vector."
        )
    return BlochState(q[1:])


def bloch_to_density(r: BlochState | Sequence[float]) -> np.ndarray:
    vec = r.r if isinstance(r, BlochState) else np.asarray(r, dtype=float)
    return vector_to_hermitian(np.concatenate([[1.0], vec]))

"""
survey.py
=========

Expérience statistique sur le paysage de contrôle :

1) L points initiaux tirés uniformément dans ([u_lo, u_hi] x [n_lo, n_hi])^M
2) une descente de gradient par point (joblib, processus indépendants)
3) histogrammes des valeurs optimisées (objectif + Frobenius associé)
4) détection de 1 ou 2 pics (2-means 1-D + test de séparation)
5) export des faisceaux de contrôles par pic

Le tirage de chaque run ne dépend que de (master_seed, run_index) : le résultat est
identique quel que soit le degré de parallélisme.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.spatial.distance import cdist

from .dynamics import ControlVector, SystemParams, TimeGrid
from .grape import OptimizerConfig, RunRecord, descend, failed_record
from .objectives import ObjectiveKind, ObjectiveSpec, cross_evaluate, parse_objective

log = logging.getLogger(__name__)

# un cluster doit contenir au moins cette fraction des valeurs pour compter comme pic
MIN_PEAK_FRACTION = 0.05
SEPARATION_FACTOR = 2.0


# =============================================================================
# Configuration
# =============================================================================

@dataclass(frozen=True)
class SurveyConfig:
    params: SystemParams
    grid: TimeGrid
    objective: ObjectiveSpec
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    L: int = 1000
    master_seed: int = 0
    u_range: Tuple[float, float] = (-1.0, 1.0)
    n_range: Tuple[float, float] = (0.0, 1.0)
    bins: int = 100
    parallelism: int = 1

    def __post_init__(self) -> None:
        if self.L < 1:
            raise ValueError(f"L doit être >= 1 (reçu: {self.L})")
        if self.bins < 2:
            raise ValueError(f"bins doit être >= 2 (reçu: {self.bins})")
        _check_range("u_range", self.u_range)
        _check_range("n_range", self.n_range)
        if self.n_range[0] < 0:
            raise ValueError(f"n_range doit être dans [0, +inf) (reçu: {self.n_range})")
        if self.parallelism == 0 or self.parallelism < -1:
            raise ValueError(f"parallelism doit être >= 1 ou -1 (reçu: {self.parallelism})")

    def describe(self) -> Dict[str, Any]:
        """Forme JSON stable ; le parallélisme n'y figure pas (sortie indépendante du degré)."""
        return {
            "system": {
                "omega": self.params.omega,
                "mu": self.params.mu,
                "gamma": self.params.gamma,
            },
            "grid": list(self.grid.boundaries),
            "gate": self.objective.gate.name,
            "objective": self.objective.identifier,
            "optimizer": self.optimizer.model_dump(),
            "L": self.L,
            "master_seed": self.master_seed,
            "u_range": list(self.u_range),
            "n_range": list(self.n_range),
            "bins": self.bins,
        }


def _check_range(name: str, bounds: Sequence[float]) -> None:
    if len(bounds) != 2 or not all(np.isfinite(bounds)) or bounds[0] > bounds[1]:
        raise ValueError(f"{name} invalide: {bounds} (attendu [lo, hi] avec lo <= hi)")


# =============================================================================
# Types de résultat
# =============================================================================

@dataclass(frozen=True, eq=False)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    def to_dict(self) -> Dict[str, Any]:
        return {"edges": self.edges.tolist(), "counts": self.counts.tolist()}

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "Histogram":
        return cls(np.asarray(payload["edges"], dtype=float), np.asarray(payload["counts"], dtype=int))


@dataclass(frozen=True)
class PeakStats:
    center: float
    width: float
    count: int

    def to_dict(self) -> Dict[str, Any]:
        return {"center": self.center, "width": self.width, "count": self.count}

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "PeakStats":
        return cls(float(payload["center"]), float(payload["width"]), int(payload["count"]))


@dataclass(frozen=True, eq=False)
class PeakDetection:
    peaks: Tuple[PeakStats, ...]
    labels: np.ndarray


@dataclass(frozen=True, eq=False)
class SurveySummary:
    config: Dict[str, Any]
    objective_label: str
    frobenius_label: str
    records: Tuple[RunRecord, ...]
    objective_histogram: Optional[Histogram]
    frobenius_histogram: Optional[Histogram]
    objective_peaks: Tuple[PeakStats, ...]
    frobenius_peaks: Tuple[PeakStats, ...]
    labels: Tuple[Optional[int], ...]
    tally: Dict[str, int]

    @property
    def n_normal(self) -> int:
        return sum(1 for r in self.records if r.normal)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "config": self.config,
            "objective_label": self.objective_label,
            "frobenius_label": self.frobenius_label,
            "tally": dict(sorted(self.tally.items())),
            "objective_peaks": [p.to_dict() for p in self.objective_peaks],
            "frobenius_peaks": [p.to_dict() for p in self.frobenius_peaks],
            "objective_histogram": (
                self.objective_histogram.to_dict() if self.objective_histogram else None
            ),
            "frobenius_histogram": (
                self.frobenius_histogram.to_dict() if self.frobenius_histogram else None
            ),
            "labels": list(self.labels),
            "records": [r.to_dict() for r in self.records],
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "SurveySummary":
        def hist(key: str) -> Optional[Histogram]:
            return Histogram.from_dict(payload[key]) if payload.get(key) else None

        return cls(
            config=payload.get("config", {}),
            objective_label=payload.get("objective_label", "F"),
            frobenius_label=payload.get("frobenius_label", "F_U"),
            records=tuple(RunRecord.from_dict(r) for r in payload.get("records", [])),
            objective_histogram=hist("objective_histogram"),
            frobenius_histogram=hist("frobenius_histogram"),
            objective_peaks=tuple(PeakStats.from_dict(p) for p in payload.get("objective_peaks", [])),
            frobenius_peaks=tuple(PeakStats.from_dict(p) for p in payload.get("frobenius_peaks", [])),
            labels=tuple(payload.get("labels", [])),
            tally=dict(payload.get("tally", {})),
        )


# =============================================================================
# Tirage des points initiaux
# =============================================================================

def run_seed(master_seed: int, run_index: int) -> int:
    """Graine 64 bits dérivée de (master_seed, run_index) par SeedSequence."""
    ss = np.random.SeedSequence([int(master_seed), int(run_index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sample_initial(
    master_seed: int,
    run_index: int,
    grid: TimeGrid,
    u_range: Tuple[float, float] = (-1.0, 1.0),
    n_range: Tuple[float, float] = (0.0, 1.0),
) -> ControlVector:
    _check_range("u_range", u_range)
    _check_range("n_range", n_range)
    if n_range[0] < 0:
        raise ValueError(f"n_range doit être dans [0, +inf) (reçu: {n_range})")
    rng = np.random.default_rng(run_seed(master_seed, run_index))
    u = rng.uniform(u_range[0], u_range[1], size=grid.M)
    n = rng.uniform(n_range[0], n_range[1], size=grid.M)
    return ControlVector.from_incoherent(u, n)


# =============================================================================
# Histogrammes & pics
# =============================================================================

def histogram(values: Sequence[float], bins: int = 100) -> Histogram:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("histogram: aucune valeur")
    counts, edges = np.histogram(values, bins=bins, range=(values.min(), values.max()))
    return Histogram(edges, counts)


def peak_stats(values: Sequence[float]) -> PeakStats:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("peak_stats: cluster vide")
    return PeakStats(float(values.mean()), float(2.0 * values.std()), int(values.size))


def _two_means(values: np.ndarray) -> np.ndarray:
    """Étiquettes 0/1 d'un 2-means 1-D initialisé en (min, max), itéré jusqu'au point fixe."""
    c0, c1 = float(values.min()), float(values.max())
    labels: np.ndarray | None = None
    for _ in range(values.size + 1):
        new = (np.abs(values - c1) < np.abs(values - c0)).astype(int)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        if labels.all() or not labels.any():
            break
        c0, c1 = float(values[labels == 0].mean()), float(values[labels == 1].mean())
    return labels


def detect_peaks(values: Sequence[float]) -> PeakDetection:
    """
    1 ou 2 pics ; les pics sont ordonnés par centre croissant.

    Une seule valeur donne un pic dégénéré (largeur 0). Sans aucune valeur, ou avec une
    valeur non finie, lève ValueError : l'appelant ne lance pas la détection quand aucun
    run n'a terminé normalement.
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("detect_peaks: aucune valeur")
    if not np.all(np.isfinite(values)):
        raise ValueError("detect_peaks: valeurs non finies")

    single = PeakDetection((peak_stats(values),), np.zeros(values.size, dtype=int))
    if values.size < 2 or values.min() == values.max():
        return single

    labels = _two_means(values)
    groups = [values[labels == 0], values[labels == 1]]
    if min(g.size for g in groups) < MIN_PEAK_FRACTION * values.size:
        return single

    low, high = peak_stats(groups[0]), peak_stats(groups[1])
    if abs(high.center - low.center) <= SEPARATION_FACTOR * (low.width / 2 + high.width / 2):
        return single
    if low.center > high.center:
        low, high = high, low
        labels = 1 - labels
    return PeakDetection((low, high), labels)


# =============================================================================
# Exécution du survey
# =============================================================================

def _run_one(config: SurveyConfig, run_index: int) -> RunRecord:
    seed = run_seed(config.master_seed, run_index)
    init = sample_initial(config.master_seed, run_index, config.grid, config.u_range, config.n_range)
    try:
        return descend(
            config.params, config.grid, init, config.objective, config.optimizer,
            seed=seed, run_index=run_index,
        )
    except Exception as e:  # un run raté ne doit pas tuer le survey
        log.exception("Run %d: échec inattendu", run_index)
        return failed_record(init, f"{type(e).__name__}: {e}", seed=seed, run_index=run_index)


def summarize(config: SurveyConfig, records: Sequence[RunRecord]) -> SurveySummary:
    tally = Counter(r.termination.value for r in records)
    normal_idx = [i for i, r in enumerate(records) if r.normal]
    labels: List[Optional[int]] = [None] * len(records)

    obj_hist = frob_hist = None
    obj_peaks: Tuple[PeakStats, ...] = ()
    frob_peaks: Tuple[PeakStats, ...] = ()

    if normal_idx:
        obj = np.array([records[i].objective for i in normal_idx])
        frob = np.array([records[i].frobenius for i in normal_idx])
        detection = detect_peaks(obj)
        for pos, i in enumerate(normal_idx):
            labels[i] = int(detection.labels[pos])
        obj_peaks = detection.peaks
        # appartenance héritée de l'objectif
        frob_peaks = tuple(
            peak_stats(frob[detection.labels == p]) for p in range(len(detection.peaks))
        )
        obj_hist = histogram(obj, config.bins)
        frob_hist = histogram(frob, config.bins)
    else:
        log.error("Aucun run terminé normalement (%s)", dict(tally))

    return SurveySummary(
        config=config.describe(),
        objective_label=config.objective.label,
        frobenius_label=f"F_{config.objective.gate.name}",
        records=tuple(records),
        objective_histogram=obj_hist,
        frobenius_histogram=frob_hist,
        objective_peaks=obj_peaks,
        frobenius_peaks=frob_peaks,
        labels=tuple(labels),
        tally=dict(tally),
    )


def run_survey(config: SurveyConfig) -> SurveySummary:
    log.info(
        "Survey %s : L=%d, seed=%d, jobs=%d",
        config.objective.label, config.L, config.master_seed, config.parallelism,
    )
    if config.parallelism == 1:
        records = [_run_one(config, i) for i in range(config.L)]
    else:
        records = Parallel(n_jobs=config.parallelism, backend="loky")(
            delayed(_run_one)(config, i) for i in range(config.L)
        )
    summary = summarize(config, records)
    log.info(
        "Survey terminé : %s, %d pic(s)", dict(sorted(summary.tally.items())),
        len(summary.objective_peaks),
    )
    return summary


# =============================================================================
# Faisceaux de contrôles
# =============================================================================

@dataclass(frozen=True, eq=False)
class ManifoldBundle:
    peak: int
    center: float
    run_ids: Tuple[int, ...]
    boundaries: Tuple[float, ...]
    u: np.ndarray
    n: np.ndarray

    @property
    def count(self) -> int:
        return len(self.run_ids)

    def rows(self) -> List[Dict[str, Any]]:
        """Format long : une ligne par (run, intervalle)."""
        out = []
        for pos, run_id in enumerate(self.run_ids):
            for k in range(len(self.boundaries) - 1):
                out.append({
                    "run_id": run_id,
                    "peak": self.peak,
                    "interval_index": k,
                    "t_start": self.boundaries[k],
                    "t_end": self.boundaries[k + 1],
                    "u": float(self.u[pos, k]),
                    "n": float(self.n[pos, k]),
                })
        return out

    def to_dict(self) -> Dict[str, Any]:
        return {
            "peak": self.peak,
            "center": self.center,
            "run_ids": list(self.run_ids),
            "time_grid": list(self.boundaries),
            "u": self.u.tolist(),
            "n": self.n.tolist(),
        }


def export_manifolds(summary: SurveySummary) -> Tuple[ManifoldBundle, ...]:
    """Un faisceau par pic (numéroté à partir de 1), avec les contrôles finaux (u, n = w^2)."""
    boundaries = tuple(summary.config.get("grid", ()))
    bundles = []
    for p, peak in enumerate(summary.objective_peaks):
        members = [
            (i, rec) for i, (rec, lab) in enumerate(zip(summary.records, summary.labels)) if lab == p
        ]
        run_ids = tuple(rec.run_index if rec.run_index is not None else i for i, rec in members)
        u = np.array([rec.final.u for _, rec in members])
        n = np.array([rec.final.n for _, rec in members])
        bundles.append(ManifoldBundle(p + 1, peak.center, run_ids, boundaries, u, n))
    return tuple(bundles)


@dataclass(frozen=True)
class ManifoldGeometry:
    inter_min: float
    intra_nn_max: float
    mirror_nn_mean: float
    intra_spread: float

    @property
    def disjoint(self) -> bool:
        return self.inter_min > self.intra_nn_max

    @property
    def mirror_symmetric(self) -> bool:
        return self.mirror_nn_mean < self.intra_spread

    def to_dict(self) -> Dict[str, Any]:
        return {
            "inter_min": self.inter_min,
            "intra_nn_max": self.intra_nn_max,
            "mirror_nn_mean": self.mirror_nn_mean,
            "intra_spread": self.intra_spread,
            "disjoint": self.disjoint,
            "mirror_symmetric": self.mirror_symmetric,
        }


def _nn_max(points: np.ndarray) -> float:
    if len(points) < 2:
        return 0.0
    d = cdist(points, points)
    np.fill_diagonal(d, np.inf)
    return float(d.min(axis=1).max())


def manifold_geometry(bundles: Sequence[ManifoldBundle]) -> ManifoldGeometry:
    """
    Géométrie des faisceaux u dans R^M :
    - distance minimale entre faisceaux vs plus grande distance au plus proche voisin interne
    - distance moyenne au plus proche voisin de l'autre faisceau après u -> -u,
      comparée à la dispersion interne (distance moyenne au barycentre, max sur les faisceaux)
    """
    if len(bundles) != 2:
        raise ValueError(f"manifold_geometry demande 2 faisceaux (reçu: {len(bundles)})")
    a, b = bundles[0].u, bundles[1].u
    inter = cdist(a, b)
    mirror = np.concatenate([cdist(-a, b).min(axis=1), cdist(-b, a).min(axis=1)])
    spread = max(float(np.linalg.norm(x - x.mean(axis=0), axis=1).mean()) for x in (a, b))
    return ManifoldGeometry(
        inter_min=float(inter.min()),
        intra_nn_max=max(_nn_max(a), _nn_max(b)),
        mirror_nn_mean=float(mirror.mean()),
        intra_spread=spread,
    )


# =============================================================================
# Expérience croisée
# =============================================================================

@dataclass(frozen=True, eq=False)
class CrossObjectiveReport:
    from_label: str
    to_label: str
    source: SurveySummary
    substituted: np.ndarray
    substituted_peaks: Tuple[PeakStats, ...]
    direct: Optional[SurveySummary] = None

    @property
    def substituted_mean(self) -> float:
        return float(self.substituted.mean()) if self.substituted.size else float("nan")

    def rows(self) -> List[Tuple[str, Tuple[PeakStats, ...]]]:
        out = [
            (f"{self.from_label} (optimisé)", self.source.objective_peaks),
            (f"{self.to_label} <- {self.from_label}", self.substituted_peaks),
        ]
        if self.direct is not None:
            out.append((f"{self.to_label} (direct)", self.direct.objective_peaks))
        return out

    def to_dict(self) -> Dict[str, Any]:
        return {
            "from": self.from_label,
            "to": self.to_label,
            "source_peaks": [p.to_dict() for p in self.source.objective_peaks],
            "substituted_values": self.substituted.tolist(),
            "substituted_mean": self.substituted_mean,
            "substituted_peaks": [p.to_dict() for p in self.substituted_peaks],
            "direct_peaks": (
                [p.to_dict() for p in self.direct.objective_peaks] if self.direct else None
            ),
            "source_config": self.source.config,
        }


def cross_objective_experiment(
    config: SurveyConfig,
    from_kind: str,
    to_kind: str,
    *,
    run_direct: bool = False,
) -> CrossObjectiveReport:
    """Survey sous from_kind, puis évaluation de chaque contrôle optimisé sous to_kind."""
    gate = config.objective.gate
    from_spec = parse_objective(from_kind, gate)
    to_spec = parse_objective(to_kind, gate)
    if from_spec.kind is not ObjectiveKind.STATES or to_spec.kind is not ObjectiveKind.STATES:
        raise ValueError("L'expérience croisée demande deux objectifs à états (set2, set3-grk, set4...)")

    source = run_survey(replace(config, objective=from_spec))
    substituted = np.array([
        cross_evaluate(config.params, config.grid, rec.final, from_spec, to_spec)
        for rec in source.records
        if rec.normal
    ])
    peaks = detect_peaks(substituted).peaks if substituted.size else ()
    direct = run_survey(replace(config, objective=to_spec)) if run_direct else None
    return CrossObjectiveReport(from_spec.label, to_spec.label, source, substituted, peaks, direct)

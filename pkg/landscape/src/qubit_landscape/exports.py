"""
exports.py
==========

Lecture / écriture des fichiers produits par le CLI.

- JSON   : json (indent=2, ordre des clés stable, NaN interdit)
- CSV    : pandas (float_format %.17g => relecture sans perte)
- Parquet: pyarrow (pa.Table.from_pandas + pq.write_table)
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Tuple

import numpy as np
import pandas as pd
import pyarrow as pa
import pyarrow.parquet as pq

from .dynamics import BlochState, ControlVector, EvolutionMatrix, TimeGrid
from .survey import Histogram, ManifoldBundle, PeakStats, SurveySummary

log = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


# =============================================================================
# JSON
# =============================================================================

def write_json(path: Path, payload: Dict[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(payload, indent=2, ensure_ascii=False, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")
    log.debug("JSON écrit: %s", path)
    return path


def read_json(path: Path) -> Dict[str, Any]:
    if not path.exists():
        raise FileNotFoundError(f"JSON introuvable: {path.resolve()}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValueError(f"JSON invalide: {path} ({e})") from e
    if not isinstance(data, dict):
        raise ValueError(f"JSON invalide (doit être un objet): {path}")
    return data


def read_summary(path: Path) -> SurveySummary:
    return SurveySummary.from_dict(read_json(path))


# =============================================================================
# Contrôles
# =============================================================================

def _controls_from_columns(data: Dict[str, Any], M: int, source: Path) -> ControlVector:
    if "u" not in data or ("n" not in data and "w" not in data):
        raise ValueError(f"{source}: colonnes attendues u et n (ou u et w)")
    u = np.asarray(data["u"], dtype=float)
    if "w" in data:
        controls = ControlVector(u, np.asarray(data["w"], dtype=float))
    else:
        controls = ControlVector.from_incoherent(u, np.asarray(data["n"], dtype=float))
    if controls.M != M:
        raise ValueError(f"{source}: {controls.M} intervalles, la grille en attend M={M}")
    if not controls.is_finite():
        raise ValueError(f"{source}: valeurs non finies")
    return controls


def read_controls(path: Path, M: int) -> ControlVector:
    """
    Fichier de contrôles :
    - CSV  : colonnes u, n (ou u, w), une ligne par intervalle
    - JSON : {"u": [...], "n": [...]} ou {"u": [...], "w": [...]} (un run_record.json convient)
    """
    if not path.exists():
        raise FileNotFoundError(f"Fichier de contrôles introuvable: {path.resolve()}")
    if path.suffix.lower() == ".json":
        return _controls_from_columns(read_json(path), M, path)
    try:
        df = pd.read_csv(path, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ValueError(f"CSV de contrôles illisible: {path} ({e})") from e
    return _controls_from_columns({c: df[c].to_numpy() for c in df.columns}, M, path)


def write_controls_csv(path: Path, controls: ControlVector) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({"u": controls.u, "w": controls.w}).to_csv(
        path, index=False, float_format=FLOAT_FORMAT
    )
    return path


# =============================================================================
# Trajectoire (simulate)
# =============================================================================

def trajectory_frame(grid: TimeGrid, states: Sequence[BlochState]) -> pd.DataFrame:
    R = np.array([s.r for s in states])
    return pd.DataFrame({
        "k": np.arange(len(states)),
        "t": np.asarray(grid.boundaries),
        "r1": R[:, 0],
        "r2": R[:, 1],
        "r3": R[:, 2],
    })


def write_trajectory(
    out_dir: Path,
    grid: TimeGrid,
    states: Sequence[BlochState],
    psi: EvolutionMatrix,
    formats: Iterable[str],
) -> List[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    formats = set(formats)
    written: List[Path] = []
    frame = trajectory_frame(grid, states)
    if "csv" in formats:
        p = out_dir / "trajectory.csv"
        frame.to_csv(p, index=False, float_format=FLOAT_FORMAT)
        q = out_dir / "psi.csv"
        pd.DataFrame(psi.psi, columns=["c0", "c1", "c2", "c3"]).to_csv(
            q, index=False, float_format=FLOAT_FORMAT
        )
        written += [p, q]
    if "json" in formats:
        written.append(write_json(out_dir / "trajectory.json", {
            "t": list(grid.boundaries),
            "r": frame[["r1", "r2", "r3"]].to_numpy().tolist(),
            "psi": psi.psi.tolist(),
        }))
    return written


def read_trajectory(path: Path) -> Tuple[np.ndarray, np.ndarray]:
    """(t, R) depuis trajectory.csv ou trajectory.json."""
    if path.suffix.lower() == ".json":
        data = read_json(path)
        return np.asarray(data["t"], dtype=float), np.asarray(data["r"], dtype=float)
    df = pd.read_csv(path, float_precision="round_trip")
    return df["t"].to_numpy(), df[["r1", "r2", "r3"]].to_numpy()


def read_psi_csv(path: Path) -> np.ndarray:
    return pd.read_csv(path, float_precision="round_trip").to_numpy(dtype=float)


# =============================================================================
# Histogrammes & faisceaux (survey)
# =============================================================================

def histogram_frame(hist: Histogram) -> pd.DataFrame:
    return pd.DataFrame({
        "bin_left": hist.edges[:-1],
        "bin_right": hist.edges[1:],
        "count": hist.counts,
    })


def write_histogram_csv(path: Path, hist: Histogram) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    histogram_frame(hist).to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def read_histogram_csv(path: Path) -> Histogram:
    df = pd.read_csv(path, float_precision="round_trip")
    edges = np.append(df["bin_left"].to_numpy(), df["bin_right"].to_numpy()[-1:])
    return Histogram(edges, df["count"].to_numpy(dtype=int))


MANIFOLD_COLUMNS = ["run_id", "peak", "interval_index", "t_start", "t_end", "u", "n"]


def manifolds_frame(bundles: Sequence[ManifoldBundle]) -> pd.DataFrame:
    rows = [row for b in bundles for row in b.rows()]
    return pd.DataFrame(rows, columns=MANIFOLD_COLUMNS)


def write_parquet(df: pd.DataFrame, out_path: Path) -> Path:
    out_path.parent.mkdir(parents=True, exist_ok=True)
    table = pa.Table.from_pandas(df, preserve_index=False)
    pq.write_table(table, out_path)
    log.debug("Parquet écrit: %s (%d lignes)", out_path, len(df))
    return out_path


def write_manifolds(
    out_dir: Path,
    bundles: Sequence[ManifoldBundle],
    formats: Iterable[str],
) -> List[Path]:
    formats = set(formats)
    written: List[Path] = []
    frame = manifolds_frame(bundles)
    if "csv" in formats:
        p = out_dir / "manifolds.csv"
        p.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(p, index=False, float_format=FLOAT_FORMAT)
        written.append(p)
    if "json" in formats:
        written.append(write_json(out_dir / "manifolds.json", {
            "bundles": [b.to_dict() for b in bundles],
        }))
    if "parquet" in formats:
        written.append(write_parquet(frame, out_dir / "manifolds.parquet"))
    return written


def read_manifolds(path: Path) -> pd.DataFrame:
    if path.suffix.lower() == ".parquet":
        return pq.read_table(path).to_pandas()
    return pd.read_csv(path, float_precision="round_trip")


# =============================================================================
# Tableau de résultats (report)
# =============================================================================

REPORT_COLUMNS = ["objective", "C1", "W1", "C2", "W2"]


def report_rows(summary: SurveySummary) -> List[Dict[str, Any]]:
    """Deux lignes par survey (objectif puis Frobenius) ; None là où un pic manque."""
    def row(label: str, peaks: Sequence[PeakStats]) -> Dict[str, Any]:
        out: Dict[str, Any] = {"objective": label}
        for i in (1, 2):
            peak = peaks[i - 1] if len(peaks) >= i else None
            out[f"C{i}"] = peak.center if peak else None
            out[f"W{i}"] = peak.width if peak else None
        return out

    return [
        row(summary.objective_label, summary.objective_peaks),
        row(summary.frobenius_label, summary.frobenius_peaks),
    ]


def write_report_csv(path: Path, rows: Sequence[Dict[str, Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(list(rows), columns=REPORT_COLUMNS).to_csv(
        path, index=False, float_format="%.4g", na_rep="-"
    )
    return path

# scripts/_refs.py
from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, List
import yaml


TABLE_FILE = Path("configs/table1.yaml")


def load_reference_table(path: Path = TABLE_FILE) -> Dict[str, Any]:
    if not path.exists():
        raise FileNotFoundError(
            f"Table de référence introuvable: {path}. Lance le script depuis la racine du repo."
        )

    data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    if not isinstance(data, dict) or not isinstance(data.get("cases"), list):
        raise TypeError(f"{path} doit être un mapping YAML avec une liste 'cases'.")
    return data


def get_required(case: Dict[str, Any], key: str) -> Any:
    """Valeur obligatoire d'un cas ; KeyError claire sinon."""
    if key not in case:
        raise KeyError(f"Clé requise manquante dans le cas {case}: '{key}'")
    return case[key]


def within(value: float, expected: float, rel: float) -> bool:
    return abs(value - expected) <= rel * abs(expected)


def within_factor(value: float, expected: float, factor: float) -> bool:
    return expected / factor <= value <= expected * factor


def parse_seeds(text: str) -> List[int]:
    return [int(s) for s in text.split(",") if s.strip()]

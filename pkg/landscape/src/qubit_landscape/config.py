from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .dynamics import SystemParams, TimeGrid
from .grape import OptimizerConfig
from .objectives import Gate, ObjectiveSpec, parse_gate, parse_objective
from .survey import SurveyConfig


# =============================================================================
# Types (structure du fichier de run : configs/run.*.yaml)
# =============================================================================

OUTPUT_FORMATS = ("json", "csv", "parquet", "svg")


class _Section(BaseModel):
    # clé inconnue => erreur (faute de frappe dans le YAML = fail fast)
    model_config = ConfigDict(extra="forbid")


class SystemSection(_Section):
    omega: float = 1.0
    mu: float = Field(0.1, gt=0)
    gamma: float = Field(0.01, ge=0)


class GridSection(_Section):
    T: float = Field(5.0, gt=0)
    M: int = Field(10, ge=1)


class SurveySection(_Section):
    L: int = Field(1000, ge=1)
    master_seed: int = Field(0, ge=0)
    u_range: Tuple[float, float] = (-1.0, 1.0)
    n_range: Tuple[float, float] = (0.0, 1.0)
    bins: int = Field(100, ge=2)
    parallelism: int = Field(1, ge=-1)

    @field_validator("u_range", "n_range")
    @classmethod
    def _ordered(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        if v[0] > v[1]:
            raise ValueError(f"intervalle vide: {list(v)}")
        return v

    @field_validator("n_range")
    @classmethod
    def _nonnegative(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        if v[0] < 0:
            raise ValueError(f"n doit rester >= 0: {list(v)}")
        return v

    @field_validator("parallelism")
    @classmethod
    def _jobs(cls, v: int) -> int:
        if v == 0:
            raise ValueError("parallelism = 0 invalide (>= 1, ou -1 pour tous les coeurs)")
        return v


class OutputSection(_Section):
    directory: Path = Path("out")
    formats: List[str] = Field(default_factory=lambda: ["json", "csv"])

    @field_validator("formats")
    @classmethod
    def _known(cls, v: List[str]) -> List[str]:
        unknown = sorted(set(v) - set(OUTPUT_FORMATS))
        if unknown:
            raise ValueError(f"formats inconnus: {unknown} (possibles: {list(OUTPUT_FORMATS)})")
        return v


class RunConfig(_Section):
    """
    Configuration complète d'une exécution (simulate / optimize / survey / report).

    Les valeurs par défaut sont celles de l'expérience de référence :
    omega=1, mu=0.1, gamma=0.01, T=5, M=10, L=1000.
    """
    schema_version: Literal[1] = 1
    system: SystemSection = Field(default_factory=SystemSection)
    grid: GridSection = Field(default_factory=GridSection)
    gate: str = "H"
    objective: str = "set3-grk"
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    survey: SurveySection = Field(default_factory=SurveySection)
    output: OutputSection = Field(default_factory=OutputSection)

    @model_validator(mode="after")
    def _identifiers(self) -> "RunConfig":
        # valide gate/objective dès le chargement (message clair plutôt qu'en plein run)
        self.objective_spec()
        return self

    # --- builders vers les types du domaine ---

    def params(self) -> SystemParams:
        return SystemParams(self.system.omega, self.system.mu, self.system.gamma)

    def time_grid(self) -> TimeGrid:
        return TimeGrid.regular(self.grid.T, self.grid.M)

    def gate_obj(self) -> Gate:
        return parse_gate(self.gate)

    def objective_spec(self) -> ObjectiveSpec:
        return parse_objective(self.objective, parse_gate(self.gate))

    def survey_config(self) -> SurveyConfig:
        return SurveyConfig(
            params=self.params(),
            grid=self.time_grid(),
            objective=self.objective_spec(),
            optimizer=self.optimizer,
            L=self.survey.L,
            master_seed=self.survey.master_seed,
            u_range=tuple(self.survey.u_range),
            n_range=tuple(self.survey.n_range),
            bins=self.survey.bins,
            parallelism=self.survey.parallelism,
        )

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """
        Applique les options CLI (None = pas d'override) :
        gate, objective, runs, seed, jobs, out, formats.
        """
        data = self.model_dump()
        mapping = {
            "gate": ("gate",),
            "objective": ("objective",),
            "runs": ("survey", "L"),
            "seed": ("survey", "master_seed"),
            "jobs": ("survey", "parallelism"),
            "out": ("output", "directory"),
            "formats": ("output", "formats"),
        }
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in mapping:
                raise KeyError(f"Override inconnu: {key}")
            target = data
            *parents, leaf = mapping[key]
            for p in parents:
                target = target[p]
            target[leaf] = value
        return RunConfig.model_validate(data)


# =============================================================================
# IO YAML
# =============================================================================

def _read_yaml(path: Path) -> Dict[str, Any]:
    if not path.exists():
        raise FileNotFoundError(f"YAML introuvable: {path.resolve()}")
    with path.open("r", encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ValueError(f"YAML invalide (doit être un mapping): {path}")
    return data


# =============================================================================
# Loader public
# =============================================================================

def load_run_config(config_file: Optional[str | Path] = None) -> RunConfig:
    """
    Charge un fichier de run (YAML ou JSON, JSON étant un sous-ensemble de YAML).

    Sans fichier : configuration par défaut.

    Exemple :
    schema_version: 1
    gate: T
    objective: set3-grk
    survey: {L: 1000, master_seed: 0}
    """
    if config_file is None:
        return RunConfig()
    return RunConfig.model_validate(_read_yaml(Path(config_file)))

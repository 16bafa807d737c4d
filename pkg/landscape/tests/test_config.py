from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

from qubit_landscape.config import RunConfig, load_run_config
from qubit_landscape.objectives import ObjectiveKind
from qubit_landscape.utils import find_repo_root, must_exist, resolve_from_repo_root, resolve_input


def test_defaults_are_reference_experiment():
    cfg = RunConfig()
    assert (cfg.system.omega, cfg.system.mu, cfg.system.gamma) == (1.0, 0.1, 0.01)
    assert (cfg.grid.T, cfg.grid.M) == (5.0, 10)
    assert cfg.survey.L == 1000
    assert cfg.survey.u_range == (-1.0, 1.0)
    assert cfg.survey.n_range == (0.0, 1.0)
    assert cfg.optimizer.eps == 1e-5
    assert cfg.optimizer.N_partition == 20

    survey = cfg.survey_config()
    assert survey.L == 1000
    assert survey.grid.M == 10
    assert survey.objective.label == "F_{H,3}"


def test_load_yaml(tmp_path: Path):
    path = tmp_path / "run.yaml"
    path.write_text(
        "schema_version: 1\n"
        "gate: T\n"
        "objective: set4\n"
        "grid: {T: 5.0, M: 6}\n"
        "optimizer: {max_iters: 50}\n"
        "survey: {L: 12, master_seed: 9}\n",
        encoding="utf-8",
    )
    cfg = load_run_config(path)
    assert cfg.gate == "T"
    assert cfg.time_grid().M == 6
    assert cfg.optimizer.max_iters == 50
    assert cfg.optimizer.c == 1.1
    spec = cfg.objective_spec()
    assert spec.kind is ObjectiveKind.STATES and spec.state_set.K == 4


def test_load_json(tmp_path: Path):
    path = tmp_path / "run.json"
    path.write_text('{"schema_version": 1, "objective": "frobenius"}', encoding="utf-8")
    assert load_run_config(path).objective_spec().kind is ObjectiveKind.FROBENIUS


def test_missing_and_malformed_files(tmp_path: Path):
    with pytest.raises(FileNotFoundError):
        load_run_config(tmp_path / "absent.yaml")
    bad = tmp_path / "list.yaml"
    bad.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ValueError):
        load_run_config(bad)


@pytest.mark.parametrize(
    "payload",
    [
        {"unknown": 1},
        {"system": {"mu": 0.1, "typo": 2}},
        {"schema_version": 2},
        {"gate": "X"},
        {"objective": "set7"},
        {"system": {"gamma": -1}},
        {"grid": {"M": 0}},
        {"survey": {"u_range": [1, -1]}},
        {"survey": {"parallelism": 0}},
        {"output": {"formats": ["xlsx"]}},
    ],
)
def test_invalid_configs_rejected(payload):
    with pytest.raises(ValidationError):
        RunConfig.model_validate(payload)


def test_overrides():
    cfg = RunConfig().with_overrides(gate="T", runs=5, seed=3, jobs=2, out=Path("x"), objective=None)
    assert cfg.gate == "T"
    assert cfg.objective == "set3-grk"
    assert cfg.survey.L == 5
    assert cfg.survey.master_seed == 3
    assert cfg.survey.parallelism == 2
    assert cfg.output.directory == Path("x")
    with pytest.raises(ValidationError):
        RunConfig().with_overrides(runs=0)
    with pytest.raises(KeyError):
        RunConfig().with_overrides(colour="red")


def test_rotation_gate_identifier():
    cfg = RunConfig(gate="rotation:0.5", objective="set2")
    np.testing.assert_allclose(cfg.gate_obj().image([0, 0, 1]), [1, 0, 0], atol=1e-12)


def test_repo_paths(tmp_path: Path):
    (tmp_path / "configs").mkdir()
    nested = tmp_path / "a" / "b"
    nested.mkdir(parents=True)
    root = find_repo_root(nested)
    assert root == tmp_path.resolve()
    assert resolve_from_repo_root(Path("configs/run.yaml"), root) == tmp_path.resolve() / "configs" / "run.yaml"
    with pytest.raises(FileNotFoundError):
        must_exist(tmp_path / "nope.yaml", "config")


def test_resolve_input_falls_back_to_repo_root(tmp_path: Path, monkeypatch):
    (tmp_path / "configs").mkdir()
    target = tmp_path / "configs" / "run.yaml"
    target.write_text("schema_version: 1\n", encoding="utf-8")
    nested = tmp_path / "landscape" / "tests"
    nested.mkdir(parents=True)
    monkeypatch.chdir(nested)
    assert resolve_input(Path("configs/run.yaml")) == target.resolve()
    with pytest.raises(FileNotFoundError, match="Config introuvable"):
        resolve_input(Path("configs/absent.yaml"), "config")


def test_shipped_configs_use_stagnation_stop():
    configs = Path(__file__).resolve().parents[2] / "configs"
    reference = load_run_config(configs / "run.default.yaml")
    assert reference.optimizer.rtol == 1e-2
    assert reference.optimizer.L_stuck == 20
    smoke = load_run_config(configs / "run.smoke.yaml")
    assert smoke.optimizer.rtol > 0
    assert smoke.time_grid().M == 4

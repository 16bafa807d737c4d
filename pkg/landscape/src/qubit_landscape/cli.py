from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import typer
from rich.console import Console
from rich.table import Table

from .config import RunConfig, load_run_config
from .dynamics import BlochState, propagate_evolution_matrix, propagate_state
from .exports import (
    read_controls,
    read_summary,
    report_rows,
    write_histogram_csv,
    write_json,
    write_manifolds,
    write_report_csv,
    write_trajectory,
)
from .grape import Termination, descend
from .logging_utils import add_file_handler, setup_logging
from .plots import plot_manifolds_svg, plot_summary_histograms
from .survey import (
    PeakStats,
    SurveySummary,
    cross_objective_experiment,
    export_manifolds,
    run_seed,
    run_survey,
    sample_initial,
)
from .utils import ensure_dir, resolve_input

# -----------------------------------------------------------------------------
# Codes de sortie
# -----------------------------------------------------------------------------
EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2
EXIT_MAX_ITERS = 3

# -----------------------------------------------------------------------------
# App racine
# -----------------------------------------------------------------------------
app = typer.Typer(
    no_args_is_help=True,
    add_completion=True,
)

log = logging.getLogger("qubit_landscape")
console = Console()


@app.callback()
def main(
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Logs DEBUG"),
) -> None:
    """
    Qubit landscape CLI

    Commandes principales :
    - simulate : propage un état de Bloch sous des contrôles donnés
    - optimize : une descente de gradient (GRAPE)
    - survey   : L descentes depuis des points aléatoires + histogrammes / pics
    - report   : tableau centres / largeurs des pics
    - cross    : contrôles optimisés pour un objectif, évalués sous un autre
    """
    setup_logging(verbose)


# -----------------------------------------------------------------------------
# Helpers
# -----------------------------------------------------------------------------
def _fail(message: str, code: int = EXIT_CONFIG) -> typer.Exit:
    typer.echo(f"❌ {message}", err=True)
    return typer.Exit(code=code)


def _survey_verdict(summary: SurveySummary) -> Optional[Tuple[int, str]]:
    """Code de sortie d'un survey (None si OK). La part de MAX_ITERS est testée en premier."""
    total = len(summary.records)
    if summary.tally.get(Termination.MAX_ITERS.value, 0) * 2 > total:
        return EXIT_MAX_ITERS, "Plus de la moitié des runs ont atteint max_iters"
    if summary.n_normal == 0:
        return EXIT_NUMERIC, "Aucun run n'a terminé normalement"
    if summary.tally.get(Termination.FAILED.value, 0) * 2 > total:
        return EXIT_NUMERIC, "Plus de la moitié des runs ont échoué (FAILED)"
    return None


def _load(config_file: Optional[Path], **overrides) -> RunConfig:
    try:
        path = resolve_input(config_file, "config") if config_file is not None else None
        return load_run_config(path).with_overrides(**overrides)
    except (FileNotFoundError, ValueError, KeyError) as e:
        raise _fail(f"Configuration invalide: {e}")


def _formats(cfg: RunConfig, svg: bool = False) -> List[str]:
    formats = list(cfg.output.formats)
    if svg and "svg" not in formats:
        formats.append("svg")
    return formats


def _fmt(x: Optional[float]) -> str:
    return "-" if x is None else f"{x:.3e}"


def _peak_cells(peaks: Sequence[PeakStats]) -> List[str]:
    cells: List[str] = []
    for i in range(2):
        p = peaks[i] if len(peaks) > i else None
        cells += [_fmt(p.center if p else None), _fmt(p.width if p else None)]
    return cells


ConfigOption = typer.Option(
    None,
    "--config",
    help="Fichier de run YAML/JSON (ex: configs/run.default.yaml)",
)
OutOption = typer.Option(None, "--out", help="Dossier de sortie (écrase output.directory)")
GateOption = typer.Option(None, "--gate", help="H | T | rotation:<theta> | phase:<delta>")
ObjectiveOption = typer.Option(
    None, "--objective", help="set2 | set3-grk | set4 | set3-basis | frobenius"
)


# -----------------------------------------------------------------------------
# simulate
# -----------------------------------------------------------------------------
@app.command("simulate")
def simulate(
    controls_file: Path = typer.Option(
        ...,
        "--controls",
        help="CSV (colonnes u,n ou u,w) ou JSON {u:[...], n:[...]} ; M lignes",
    ),
    r0: str = typer.Option("0,0,1", "--r0", help="Vecteur de Bloch initial 'x,y,z'"),
    config_file: Optional[Path] = ConfigOption,
    out: Optional[Path] = OutOption,
) -> None:
    """
    Propage r0 sous des contrôles constants par morceaux ; écrit r_0..r_M et Psi(T).
    """
    cfg = _load(config_file, out=out)
    params, grid = cfg.params(), cfg.time_grid()
    try:
        controls = read_controls(resolve_input(controls_file, "contrôles"), grid.M)
        start = BlochState(np.array([float(x) for x in r0.split(",")]))
    except (FileNotFoundError, ValueError) as e:
        raise _fail(str(e))

    states = propagate_state(params, grid, controls, start)
    psi = propagate_evolution_matrix(params, grid, controls)

    out_dir = ensure_dir(cfg.output.directory)
    written = write_trajectory(out_dir, grid, states, psi, _formats(cfg))

    typer.echo("")
    typer.echo("✅ Simulation terminée")
    typer.echo(f" - r(T)   : {np.array2string(states[-1].r, precision=6)}")
    for p in written:
        typer.echo(f" - fichier: {p}")


# -----------------------------------------------------------------------------
# optimize
# -----------------------------------------------------------------------------
@app.command("optimize")
def optimize(
    config_file: Optional[Path] = ConfigOption,
    seed: Optional[int] = typer.Option(None, "--seed", help="Graine du point initial"),
    init_file: Optional[Path] = typer.Option(
        None, "--init", help="Contrôles initiaux (CSV/JSON, un run_record.json convient)"
    ),
    gate: Optional[str] = GateOption,
    objective: Optional[str] = ObjectiveOption,
    trace: bool = typer.Option(False, "--trace", help="Enregistre F à chaque pas accepté"),
    out: Optional[Path] = OutOption,
) -> None:
    """
    Une descente de gradient ; écrit run_record.json.
    Sortie 3 si MAX_ITERS, 2 si échec numérique.
    """
    if seed is not None and init_file is not None:
        raise _fail("--seed et --init sont exclusifs")
    cfg = _load(config_file, gate=gate, objective=objective, out=out)
    params, grid, spec = cfg.params(), cfg.time_grid(), cfg.objective_spec()

    run_index: Optional[int] = None
    record_seed: Optional[int] = None
    if init_file is not None:
        try:
            init = read_controls(resolve_input(init_file, "contrôles"), grid.M)
        except (FileNotFoundError, ValueError) as e:
            raise _fail(str(e))
    else:
        master = cfg.survey.master_seed if seed is None else seed
        run_index = 0
        record_seed = run_seed(master, run_index)
        init = sample_initial(master, run_index, grid, cfg.survey.u_range, cfg.survey.n_range)

    log.info("optimize: %s, porte %s", spec.label, spec.gate.name)
    record = descend(
        params, grid, init, spec, cfg.optimizer,
        seed=record_seed, run_index=run_index, record_trace=trace,
    )

    out_dir = ensure_dir(cfg.output.directory)
    path = write_json(out_dir / "run_record.json", record.to_dict())

    typer.echo("")
    marker = "✅" if record.normal else "❌"
    typer.echo(f"{marker} Descente terminée : {record.termination.value}")
    typer.echo(f" - {spec.label:<10}: {record.objective:.6e}")
    typer.echo(f" - F_{spec.gate.name:<8}: {record.frobenius:.6e}")
    typer.echo(f" - pas acceptés : {record.iterations}")
    typer.echo(f" - fichier : {path}")

    if record.termination is Termination.FAILED:
        raise typer.Exit(code=EXIT_NUMERIC)
    if record.termination is Termination.MAX_ITERS:
        raise typer.Exit(code=EXIT_MAX_ITERS)


# -----------------------------------------------------------------------------
# survey
# -----------------------------------------------------------------------------
@app.command("survey")
def survey(
    config_file: Optional[Path] = ConfigOption,
    gate: Optional[str] = GateOption,
    objective: Optional[str] = ObjectiveOption,
    runs: Optional[int] = typer.Option(None, "--runs", help="Nombre de points initiaux L"),
    seed: Optional[int] = typer.Option(None, "--seed", help="master_seed"),
    jobs: Optional[int] = typer.Option(None, "--jobs", help="Parallélisme (-1 = tous les coeurs)"),
    svg: bool = typer.Option(False, "--svg", help="Ajoute les figures SVG"),
    out: Optional[Path] = OutOption,
) -> None:
    """
    L descentes depuis des points aléatoires ; écrit summary.json, histogrammes,
    faisceaux de contrôles et figures.
    """
    cfg = _load(config_file, gate=gate, objective=objective, runs=runs, seed=seed, jobs=jobs, out=out)
    try:
        survey_cfg = cfg.survey_config()
    except ValueError as e:
        raise _fail(str(e))

    out_dir = ensure_dir(cfg.output.directory)
    handler = add_file_handler(out_dir / "run.log")
    try:
        log.info("Config résolue: %s", json.dumps(survey_cfg.describe(), sort_keys=True))
        summary = run_survey(survey_cfg)
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()

    formats = _formats(cfg, svg)
    written = [write_json(out_dir / "summary.json", summary.to_dict())]
    bundles = export_manifolds(summary)
    if "csv" in formats and summary.objective_histogram is not None:
        written.append(write_histogram_csv(out_dir / "histogram_objective.csv", summary.objective_histogram))
        written.append(write_histogram_csv(out_dir / "histogram_frobenius.csv", summary.frobenius_histogram))
    written += write_manifolds(out_dir, bundles, formats)
    if "svg" in formats:
        written += plot_summary_histograms(out_dir, summary)
        if bundles:
            written.append(plot_manifolds_svg(out_dir / "manifolds.svg", bundles, summary.objective_label))

    verdict = _survey_verdict(summary)
    marker = "✅" if verdict is None else "❌"
    typer.echo("")
    typer.echo(f"{marker} Survey {summary.objective_label} : {len(summary.records)} runs")
    typer.echo(f" - terminaisons : {dict(sorted(summary.tally.items()))}")
    for i, peak in enumerate(summary.objective_peaks, start=1):
        typer.echo(f" - pic {i} : C={peak.center:.4e} W={peak.width:.4e} (n={peak.count})")
    for p in written:
        typer.echo(f" - fichier : {p}")

    if verdict is not None:
        code, message = verdict
        raise _fail(message, code)


# -----------------------------------------------------------------------------
# report
# -----------------------------------------------------------------------------
@app.command("report")
def report(
    summary_file: Path = typer.Argument(..., help="summary.json produit par `survey`"),
    csv_file: Optional[Path] = typer.Option(None, "--csv", help="Export CSV du tableau"),
) -> None:
    """
    Tableau centres (C1, C2) et largeurs (W1, W2) : une ligne objectif, une ligne Frobenius.
    """
    try:
        summary = read_summary(resolve_input(summary_file, "résumé"))
    except (FileNotFoundError, ValueError, KeyError) as e:
        raise _fail(f"Résumé illisible: {e}")
    if not summary.records or not summary.objective_peaks:
        raise _fail(f"Résumé vide (aucun pic): {summary_file}")

    rows = report_rows(summary)
    table = Table(title=f"Survey {summary.config.get('gate', '?')} / {summary.config.get('objective', '?')}")
    for col in ("Func", "C1", "W1", "C2", "W2"):
        table.add_column(col, justify="left" if col == "Func" else "right")
    for row in rows:
        table.add_row(row["objective"], *[_fmt(row[k]) for k in ("C1", "W1", "C2", "W2")])
    console.print(table)

    if csv_file is not None:
        path = write_report_csv(csv_file, rows)
        typer.echo(f"✅ CSV écrit : {path}")


# -----------------------------------------------------------------------------
# cross
# -----------------------------------------------------------------------------
@app.command("cross")
def cross(
    from_kind: str = typer.Option(..., "--from", help="Objectif optimisé (ex: set4)"),
    to_kind: str = typer.Option(..., "--to", help="Objectif d'évaluation (ex: set2)"),
    direct: bool = typer.Option(False, "--direct", help="Lance aussi le survey direct sous --to"),
    config_file: Optional[Path] = ConfigOption,
    gate: Optional[str] = GateOption,
    runs: Optional[int] = typer.Option(None, "--runs", help="Nombre de points initiaux L"),
    seed: Optional[int] = typer.Option(None, "--seed", help="master_seed"),
    jobs: Optional[int] = typer.Option(None, "--jobs", help="Parallélisme"),
    out: Optional[Path] = OutOption,
) -> None:
    """
    Survey sous --from, puis évaluation des contrôles optimisés sous --to.
    """
    cfg = _load(config_file, gate=gate, runs=runs, seed=seed, jobs=jobs, out=out)
    try:
        result = cross_objective_experiment(cfg.survey_config(), from_kind, to_kind, run_direct=direct)
    except ValueError as e:
        raise _fail(str(e))

    out_dir = ensure_dir(cfg.output.directory)
    path = write_json(out_dir / "cross_report.json", result.to_dict())

    table = Table(title=f"{result.to_label} évalué sur les contrôles de {result.from_label}")
    for col in ("Func", "C1", "W1", "C2", "W2"):
        table.add_column(col, justify="left" if col == "Func" else "right")
    for label, peaks in result.rows():
        table.add_row(label, *_peak_cells(peaks))
    console.print(table)
    typer.echo(f" - moyenne {result.to_label} substituée : {result.substituted_mean:.4e}")
    if result.substituted.size == 0:
        typer.echo(f"❌ Rapport écrit : {path}")
        raise _fail("Aucun run n'a terminé normalement", EXIT_NUMERIC)
    typer.echo(f"✅ Rapport écrit : {path}")


def run() -> None:
    """
    Entry point Python (utile pour `python -m qubit_landscape.cli`)
    """
    app()


if __name__ == "__main__":
    run()

#!/usr/bin/env python3
"""
Structure du paysage de contrôle (porte T)
==========================================

Objectif:
- Survey T / set3-grk : les deux faisceaux de contrôles u (un par pic) sont disjoints
  et se correspondent par u -> -u
- Expérience croisée : F_{T,2} évalué sur les contrôles optimisés pour set3-grk / set4
  reste sous le centre du survey direct set2
- Retourne code != 0 si KO

Usage:
  python -m scripts.check_landscape_structure --runs 1000 --jobs -1 --seed 0
"""

from __future__ import annotations

import argparse
from pathlib import Path

from qubit_landscape.config import load_run_config
from qubit_landscape.exports import write_json
from qubit_landscape.logging_utils import setup_logging
from qubit_landscape.survey import cross_objective_experiment, export_manifolds, manifold_geometry, run_survey


def parse_args() -> argparse.Namespace:
    p = argparse.ArgumentParser(description="Check manifold geometry and cross-objective values.")
    p.add_argument("--config", default=None, help="Run config de base")
    p.add_argument("--runs", type=int, default=1000, help="L par survey")
    p.add_argument("--jobs", type=int, default=-1, help="Parallélisme joblib")
    p.add_argument("--seed", type=int, default=0, help="Graine maître")
    p.add_argument("--out", default="out/structure", help="Dossier des rapports JSON")
    p.add_argument("--verbose", action="store_true")
    return p.parse_args()


def main() -> int:
    args = parse_args()
    setup_logging(args.verbose)
    base = load_run_config(args.config).with_overrides(gate="T", runs=args.runs, seed=args.seed, jobs=args.jobs)
    out_dir = Path(args.out)

    print("==========================================")
    print("Landscape structure check (gate T)")
    print("==========================================")
    print(f"L      : {args.runs}")
    print(f"Graine : {args.seed}")
    print("")

    failures = 0

    # 1) Faisceaux du survey set3-grk
    summary = run_survey(base.with_overrides(objective="set3-grk").survey_config())
    bundles = export_manifolds(summary)
    if len(bundles) != 2:
        print(f"❌ {len(bundles)} faisceau(x) au lieu de 2")
        return 2

    geometry = manifold_geometry(bundles)
    write_json(out_dir / "manifold_geometry.json", geometry.to_dict())
    print(f"ℹ️  distance inter-faisceaux min   = {geometry.inter_min:.4e}")
    print(f"ℹ️  plus proche voisin interne max = {geometry.intra_nn_max:.4e}")
    print(f"ℹ️  miroir u -> -u (moyenne)       = {geometry.mirror_nn_mean:.4e}")
    print(f"ℹ️  dispersion interne             = {geometry.intra_spread:.4e}")
    if geometry.disjoint:
        print("✅ Faisceaux disjoints")
    else:
        failures += 1
        print("❌ Faisceaux non disjoints")
    if geometry.mirror_symmetric:
        print("✅ Symétrie u -> -u")
    else:
        failures += 1
        print("❌ Pas de symétrie u -> -u")

    # 2) Expérience croisée vers set2
    direct_center = None
    for source in ("set3-grk", "set4"):
        report = cross_objective_experiment(
            base.survey_config(), source, "set2", run_direct=direct_center is None
        )
        write_json(out_dir / f"cross_{source}_to_set2.json", report.to_dict())
        if report.direct is not None:
            if not report.direct.objective_peaks:
                print("❌ Survey direct set2 sans pic")
                return 2
            direct_center = report.direct.objective_peaks[0].center
            print(f"ℹ️  centre direct {report.to_label} = {direct_center:.4e}")

        mean = report.substituted_mean
        if mean < direct_center:
            print(f"✅ {report.to_label} <- {report.from_label} : moyenne {mean:.4e} < {direct_center:.4e}")
        else:
            failures += 1
            print(f"❌ {report.to_label} <- {report.from_label} : moyenne {mean:.4e} >= {direct_center:.4e}")

    print("")
    if failures:
        print(f"❌ {failures} vérification(s) en échec")
        return 1
    print("✅ Structure conforme")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

"""Contrôle cohérent + incohérent d'un qubit ouvert : simulation, GRAPE, survey du paysage."""

__version__ = "0.1.0"

__all__ = ["dynamics", "objectives", "grape", "survey", "__version__"]

"""QualiPy : prédiction multi-métriques de la qualité de la parole et des préférences."""
__version__ = "0.1.0"

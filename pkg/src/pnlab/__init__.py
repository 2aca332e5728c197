"""pnlab: grids, coefficients, lemma checks, SPDE integration, ensembles and regularity analytics."""

__version__ = "0.1.0"

"""Figures from subspacelp result CSVs: impulse responses with shaded
bands, subspace-dimension sweep curves, and factor-structure curves."""

__version__ = "0.1.0"

from .figures import FigureRequest, SchemaError, build_figure, render

__all__ = ["FigureRequest", "SchemaError", "build_figure", "render"]

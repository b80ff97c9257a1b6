"""Figures from apsing run artifacts (CSV traces and JSON reports)."""

from .figures import FigureSpec, render

__version__ = "0.1.0"

"""Batch figures for asyncfp benchmark output."""

from .figures import FIGURE_FAMILIES, FigureSpec, RenderReport, render  # noqa: F401

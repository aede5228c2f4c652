"""plotkit: deterministic figure regeneration from experiment CSVs."""

__version__ = "0.1.0"

from .figures import KINDS, EmptySelection, FigureSpec, MissingColumn, render

"""Figure rendering for nestbox CSV outputs."""

__version__ = "0.1.0"

from .render import FigureJob, FigureKind, render
from .schema import SCHEMAS, SchemaError

"""Posterior assembly, NUTS sampling, diagnostics and summaries."""

from .diagnostics import diagnostics, ess_bulk, rhat
from .draws import PosteriorDraws
from .model import Layout, NonCentredView, NOSPosterior, UnconstrainedVector
from .nuts import NUTS, run_chain
from .sampling import sample
from .summary import summarize, summarize_indicator

__all__ = [
    "Layout",
    "NonCentredView",
    "NOSPosterior",
    "NUTS",
    "PosteriorDraws",
    "UnconstrainedVector",
    "diagnostics",
    "ess_bulk",
    "rhat",
    "run_chain",
    "sample",
    "summarize",
    "summarize_indicator",
]

from .render import PlotJob, build_figure, render

__version__ = "0.1.0"

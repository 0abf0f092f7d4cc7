"""Non-overlapping domain decomposition for 2D time-harmonic Maxwell problems
on edge elements, with a projection-based exchange that stays well defined
at cross points."""

__version__ = "0.1.0"

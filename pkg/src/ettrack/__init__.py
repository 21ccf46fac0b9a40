"""Extended-target tracking with reweighted-BP data association and mean-field state updates."""

__version__ = "0.1.0"

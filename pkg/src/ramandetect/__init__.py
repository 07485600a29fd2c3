"""Hyperfine-state detection of 137Ba+ by optical pumping with Raman repumping."""

__version__ = "0.1.0"

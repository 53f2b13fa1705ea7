"""Taylor-expansion FMMs for Helmholtz sums in layered media."""
from .medium import DOWN, UP, LayeredMedium
from .fmm import FmmConfig, run_component_fmm, run_free_space_fmm, run_total

__all__ = ["DOWN", "UP", "LayeredMedium", "FmmConfig", "run_component_fmm",
           "run_free_space_fmm", "run_total"]

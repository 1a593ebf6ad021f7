"""Localized orthogonal decomposition for the wave equation with leapfrog time stepping."""
from .coefficient import CoefficientField, constant, example2, sample_to_mesh, synthetic_checkerboard
from .corrector import (CorrectorSet, MultiscaleSystem, build_assemblies, build_corrector_set,
                        build_multiscale_system, cached_corrector_set,
                        measure_localization_decay)
from .errors import (CapacityError, CFLViolationError, InstabilityError, LodWaveError,
                     NumericError, ResolutionError)
from .interpolation import build_IH
from .leapfrog import (LeapfrogSystem, MethodSpec, TimeGrid, Variant, cfl_timestep,
                       leapfrog_run)
from .mesh import Boundary, StructuredQuadMesh, build_mesh
from .study import ExperimentConfig, ErrorTable, run_convergence_study

__version__ = "0.1.0"

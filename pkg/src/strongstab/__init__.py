"""Strong stability analysis and PID design for linear systems with discrete delays."""

from .analysis import (FragilityReport, RegionLabel, classify, fragility_report, in_clos_S,
                       odd_number_limitation, region_map, routh_hurwitz)
from .design import DesignOpts, DesignResult, design_input_delay, design_pid, grad_objective
from .model import (CharacteristicPencil, DelaySystem, LoadError, LoopConfig, PerturbationFn,
                    PidGains, assemble_pencil, eval_pencil, load_gains, load_system,
                    rank_factorize)
from .perturbation_lab import make_perturbation, scaled_limit_roots, sweep, verify_assumptions
from .robust import UncertaintySet, realize_system, sampled_worst_case
from .spectra import (BoundaryRootError, DegeneratePencilError, RootSet, SolverOpts,
                      chain_abscissa, count_rhp_roots, rightmost_roots, spectral_abscissa)

__version__ = "0.1.0"

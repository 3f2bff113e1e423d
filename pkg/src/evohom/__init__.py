"""Evolutionary equations on exponentially weighted L2 spaces and their homogenization limits.

Submodules
----------
weighted_space   time grids, spatial models, weighted signals and probe dictionaries
operators        causal operator algebra, symbol calculus, norm and coercivity estimates
solver           Neumann-series and implicit Euler solvers, block (DAE) elimination
homogenizer      cell averages, weak-operator limits and limit assembly
scenarios        oscillating benchmark problems with references
cli              sweeps, reports and self-tests
"""

from .errors import *  # noqa: F401,F403
from .homogenizer import (CellFunction, HomogenizedModel, LimitOperator, OperatorSequence, WotEstimate,
                          assemble_block, assemble_symbol_valued, assemble_time_independent, cell_average_product,
                          extract_memory_kernel, homogenize_time_independent, wot_limit_estimate)
from .operators import (Derivative, EvolutionaryOp, HInfSymbol, Integration, PointwiseOp, coercivity_estimate,
                        compose, constant_op, convolution_op, fractional_power_op, identity, invert,
                        multiplication_op, operator_norm_estimate, shift_op, sum_ops, symbol_op)
from .scenarios import Scenario, list_scenarios, make_scenario
from .solver import (BlockEvoProblem, EvoProblem, SolveReport, solve_block, solve_neumann, solve_stepping)
from .weighted_space import (SpaceModel, TestDictionary, TimeGrid, WeightedSignal, inner_product,
                             make_test_dictionary, weak_pairings)

__version__ = "0.1.0"

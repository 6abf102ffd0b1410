"""Grid representations and time evolution."""
from .evolve import InstabilityError, TrajectoryRecord, ehrenfest_residual, evolve, expectation, uncertainty
from .grid import Axis, GaussianSpec, GridError, PhaseGrid, StateVector, gaussian_state, random_smooth_states
from .hybrid import HybridResult, factorized_reference, hybrid_simulate
from .operators import OperatorRep, RepresentationError, build_representation, commutator_residual

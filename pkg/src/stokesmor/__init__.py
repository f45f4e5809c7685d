"""Method-of-reflections solver for Stokes flow around many rigid spheres."""
from .errors import (ConfigMismatchError, ConvergenceError, DivergenceError, GenerationFailedError,
                     IllConditionedError, InvalidInputError, NormalizationError, OnSurfaceError,
                     OutputError, OverlapError, ParseError, QuadratureOrderError, SeparationError,
                     SingularEvaluationError, StokesMORError)
from .tensors import TracelessSym3
from .geometry import (Box, ParticleConfig, ValidationReport, compute_lambda_q, generate_lattice,
                       generate_poisson_disk, validate_config)
from .quadrature import SphereQuadrature
from .fields import (AmbientField, CollocationTerm, DipoleTerm, FlowField, LinearStrain, RigidMotion,
                     Stokeslet, Superposition, evaluate_strain, evaluate_velocity, sample_grid)
from .moments import apply_Q_collocation, apply_Qd, dipole_coefficient, rigid_projection
from .reflections import IterationReport, SolverOptions, reflection_step, residual_norm, run
from .analysis import (LatticeFamily, PoissonFamily, contraction_sweep, decay_slope_check,
                       einstein_viscosity_estimate, interaction_matrix, operator_norm_estimate,
                       superconvergence_table)

__version__ = "0.1.0"

"""Level-set ensemble Kalman inversion for acoustic source supports."""

from .enkf import (Ensemble, FilterConfig, FilterError, InversionProblem,
                   ReconstructionResult, analysis_alg1, analysis_alg2, ensemble_stats,
                   predict_alg1, predict_alg2, run_filter, stopping_rule)
from .forward import (NoiseModel, StackedForwardOperator, WaveNumberGrid, apply_adjoint,
                      apply_forward, assemble_forward, generate_data, make_wave_grid)
from .levelset import (HJConfig, ThresholdSpec, evolve, gradient_magnitude, hj_step,
                       level_set_map, velocity_field)
from .mesh import (ReceiverArray, TriMesh, TriQuadRule, build_disk_mesh, element_gradient,
                   square_receivers, triangle_quadrature)
from .prior import (FemOperators, MaternSampler, PriorSpec, assemble_fem,
                    matern_covariance, sample_field, spde_alpha)
from .special import bessel_k, hankel_h0_first_kind

__version__ = "0.1.0"

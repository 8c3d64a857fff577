"""Propagation of Wasserstein ambiguity sets through stochastic dynamics.

Gaussian-mixture ball centers are quantized, pushed through the dynamics,
compressed and convolved with the noise, while a certified radius tracks
every approximation error.
"""

from .compression import CompressionResult, compress, merge_cells
from .distributions import (AmbiguityBall, DiscreteDistribution, GaussianMixture, convolve,
                            mixture_moments, sample)
from .dynamics import (LinearModel, Mode, NeuralNetModel, NormLinearization, PiecewiseLinearModel,
                       QuadrupleTankModel, double_spiral, evaluate, lipschitz_bound,
                       norm_linearization, pushforward)
from .propagation import (PropagationConfig, StepReport, Trace, fixed_point_bound, propagate,
                          propagate_step, radius_update)
from .quantization import Quantizer, QuantizationResult, build_grid, quantize
from .transport import TransportPlan, wasserstein_bruteforce, wasserstein_discrete
from .validation import SampleCloud, containment_report, empirical_wasserstein, simulate_true

__version__ = "0.1.0"

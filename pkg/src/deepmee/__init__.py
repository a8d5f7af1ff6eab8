"""Minimum-error-entropy deep regression from strongly mixing data."""
from .data import (GeneratorSpec, InstabilityError, ProvenanceError, SeriesDataset, Truth,
                   generate, read_dataset, split, truth_values, write_dataset)
from .density import (ContaminatedGaussian, KernelDensityEstimate, SubbotinDensity,
                      TruncatedDensity, kernel_log_density, v_profile)
from .estimators import (DivergenceError, TrainConfig, TrainedModel, empirical_risk,
                         train_kernel_mee, train_least_squares, train_mee, train_npdnn,
                         train_spdnn)
from .harness import RateStudyResult, RiskReport, excess_risk_mc, rate_study, robustness_compare
from .network import (Architecture, CompositionSpec, Network, RateSpec, composition_rate,
                      covering_bound, holder_architecture, load_checkpoint, risk_gradient,
                      save_checkpoint)
from .penalty import (PenaltySpec, penalty_subgradient, penalty_total, penalty_value,
                      prune_to_sparsity, sparsity_support)

__version__ = "0.1.0"

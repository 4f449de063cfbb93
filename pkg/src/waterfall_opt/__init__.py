"""Waterfall auction optimization: estimate per-user valuations from sale logs,
simulate user traffic through a waterfall, calibrate, and search for a
higher-revenue waterfall."""

__version__ = "0.1.0"

from .core import (PriceGrid, Instance, Waterfall, WaterfallConstraints, Violation, revenue, validate,
                   canonicalize, read_waterfall, write_waterfall, parse_waterfall, format_waterfall)
from .errors import (WaterfallError, FormatError, MissingArtifactError, WaterfallValidationError, DimensionError,
                     InsufficientHistoryError, EstimationError, UndefinedWeightsError, SearchSpaceTooLarge)
from .ingest import (RawSaleRecord, SaleEventDataset, parse_records, read_records, vectorize,
                     split_train_validation, observed_impressions)
from .valuation import (BetaParams, Provenance, EstimationConfig, ValuationMatrix, fit_beta, global_params,
                        estimate_matrix, sample_valuation, DrawKey, save_matrix, load_matrix)
from .simulate import Population, SimulationConfig, SimulationResult, Simulator, run_waterfall, replay_counterfactual
from .evaluate import (ScoreWeights, CalibrationConfig, CalibrationResult, score_weights, fidelity_score,
                       calibrate_zeta)
from .search import (SearchConfig, SearchTrace, neighbors, hill_climb, mcts_search, exhaustive_optimum,
                     OracleResult)
from .synthetic import SyntheticScenario, beta_benchmark, generate_matrix, sales_log_scenario

__all__ = [
    "__version__",
    "PriceGrid",
    "Instance",
    "Waterfall",
    "WaterfallConstraints",
    "Violation",
    "revenue",
    "validate",
    "canonicalize",
    "read_waterfall",
    "write_waterfall",
    "parse_waterfall",
    "format_waterfall",
    "WaterfallError",
    "FormatError",
    "MissingArtifactError",
    "WaterfallValidationError",
    "DimensionError",
    "InsufficientHistoryError",
    "EstimationError",
    "UndefinedWeightsError",
    "SearchSpaceTooLarge",
    "RawSaleRecord",
    "SaleEventDataset",
    "parse_records",
    "read_records",
    "vectorize",
    "split_train_validation",
    "observed_impressions",
    "BetaParams",
    "Provenance",
    "EstimationConfig",
    "ValuationMatrix",
    "fit_beta",
    "global_params",
    "estimate_matrix",
    "sample_valuation",
    "DrawKey",
    "save_matrix",
    "load_matrix",
    "Population",
    "SimulationConfig",
    "SimulationResult",
    "Simulator",
    "run_waterfall",
    "replay_counterfactual",
    "ScoreWeights",
    "CalibrationConfig",
    "CalibrationResult",
    "score_weights",
    "fidelity_score",
    "calibrate_zeta",
    "SearchConfig",
    "SearchTrace",
    "neighbors",
    "hill_climb",
    "mcts_search",
    "exhaustive_optimum",
    "OracleResult",
    "SyntheticScenario",
    "beta_benchmark",
    "generate_matrix",
    "sales_log_scenario",
]

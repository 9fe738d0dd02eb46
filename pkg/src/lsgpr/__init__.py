"""Two-stage regression on binary networks.

Stage 1 embeds each subject's graph into per-node latent scales by a
data-augmented EM algorithm; stage 2 regresses the scalar response on the
embeddings with a Gaussian process, fitted either by marginal-likelihood
gradient descent or by Metropolis-within-Gibbs sampling, with optional
per-node relevance indicators and predictive intervals.
"""

from ._kernels import BACKEND, available_backends
from ._linalg import FactorizationError
from .embed import (
    EmConfig,
    Embedding,
    EmbeddingError,
    edge_probability,
    embed_subject,
    fitted_edge_probabilities,
    pg_expectation,
)
from .gp import (
    Chains,
    GibbsConfig,
    GpHyperparams,
    GpModel,
    GpPriors,
    TrainingSet,
    distance_matrices,
    fit_mle,
    gibbs_sample,
    kernel_matrix,
    load_model,
    neg_log_likelihood,
    node_selection_sample,
    predict,
    save_model,
)
from .network import (
    classical_mds,
    edge_vector,
    load_network,
    shortest_path_distances,
)
from .sim import (
    EvalReport,
    SimConfig,
    SimDataset,
    evaluate,
    generate_scenario1,
    pca_gpr_baseline,
    ridge_baseline,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Chains",
    "EmConfig",
    "Embedding",
    "EmbeddingError",
    "EvalReport",
    "FactorizationError",
    "GibbsConfig",
    "GpHyperparams",
    "GpModel",
    "GpPriors",
    "SimConfig",
    "SimDataset",
    "TrainingSet",
    "available_backends",
    "classical_mds",
    "distance_matrices",
    "edge_probability",
    "edge_vector",
    "embed_subject",
    "evaluate",
    "fit_mle",
    "fitted_edge_probabilities",
    "generate_scenario1",
    "gibbs_sample",
    "kernel_matrix",
    "load_model",
    "load_network",
    "neg_log_likelihood",
    "node_selection_sample",
    "pca_gpr_baseline",
    "pg_expectation",
    "predict",
    "ridge_baseline",
    "save_model",
    "shortest_path_distances",
]

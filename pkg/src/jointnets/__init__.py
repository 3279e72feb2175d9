"""Joint Bayesian estimation of multiple sparse Gaussian graphical networks.

Connection strengths live in per-condition precision matrices under a
spike-and-slab graphical lasso prior; edge probabilities couple the
conditions through shared and differential stick-breaking mixture effects.
"""

from .core import (
    ConditionData,
    ConfigurationError,
    DivergenceError,
    Hyperparams,
    IngestionError,
    NumericalDegeneracyError,
    TraceArchive,
    fisher_z,
    logistic_link,
    log_slab_density,
    log_spike_density,
    partial_correlations,
)
from .sampler import init_chain, run_chain
from .inference import (
    differential_by_set_difference,
    differential_strength_test,
    dickey_fuller,
    fdr_for_threshold,
    inclusion_probabilities,
    select_edges,
)
from .graphmetrics import (
    characteristic_path_length,
    clustering_coefficient,
    global_efficiency,
    local_efficiency,
    metric_posteriors,
    shortest_paths,
)
from .simgen import (
    SimScenario,
    build_precision,
    differential_tpr_fpr,
    flip_edges,
    gen_network,
    l1_error,
    roc_auc,
    sample_data,
    simulate_scenario,
)
from .ingest import (
    concatenate_runs,
    demean,
    load_matrix,
    prewhiten_ar1,
    save_matrix,
    svd_extract,
)

__version__ = "0.1.0"

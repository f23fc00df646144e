"""Cultural-period inference from stratified potsherd counts.

A Dirichlet-process mixture of Dirichlet-multinomial components is fitted by
MCMC; posterior samples are relabelled and summarised as culture paintings.
"""

from .model import (
    BaseMeasureConfig,
    ComponentParams,
    CountTable,
    UnitLevel,
    base_measure_log_density,
    dm_log_likelihood,
    expected_frequencies,
    sample_base_measure,
)
from .sampler import (
    ChainRecord,
    ChainState,
    Sample,
    SamplerConfig,
    crp_expected_clusters,
    gibbs_sweep_assignments,
    run_chain,
    run_chains,
    update_component_params,
)

__version__ = "0.1.0"

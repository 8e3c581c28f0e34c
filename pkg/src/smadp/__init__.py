"""Spectral memory-aware differentially private SGD.

A DP-SGD variant whose update mixes the current clipped gradient sum with a
fractional-kernel memory branch built only from previously privatized
releases, plus the Renyi-DP accounting, spectral diagnostics, and desk-scale
training harness around it.
"""

from .accountant import (
    MARGINAL_TAG,
    PrivacyLedger,
    RdpOrderGrid,
    marginal_epsilon_curve,
    rdp_subsampled_gaussian,
    rdp_to_dp,
    sigma_eff_joint,
)
from .data import Dataset, SampleBatch, gen_synthetic, load_idx, poisson_sample
from .dpsgd import run_dpsgd
from .memory import (
    MemoryState,
    ReleaseHistory,
    ReleaseRecord,
    alignment_gate,
    build_memory_state,
    effective_depth,
    ema_update,
    kernel_weights,
    memory_decompose,
    memory_vector,
    norm_scale,
    warmup,
)
from .model import (
    EvalResult,
    ModelState,
    ParameterGroup,
    PerExampleGradient,
    evaluate,
    init_model,
    per_example_grads,
)
from .numerics import RandomStream, gaussian_vector, sym_eig, sym_eigvals
from .optimizer import (
    AdjacencyProbeResult,
    OptimizerConfig,
    StepTrace,
    adjacency_probe,
    apply_update,
    clip_gradient,
    clipped_sum,
    private_release,
    recursive_query,
    step,
)
from .runner import RunConfig, RunReport, run_accountant, run_sweep_beta, run_sweep_interval, run_train
from .spectral import (
    SpectralInterval,
    SpectralReport,
    aggregate_stagewise,
    fit_powerlaw_exponent,
    interval_deviation,
    spectral_eigs,
    tempering,
)

__version__ = "0.1.0"

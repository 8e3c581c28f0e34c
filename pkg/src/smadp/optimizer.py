"""The private optimization step: clipping, clipped sums, recursive query
assembly, Gaussian release, parameter update, and history maintenance — plus a
brute-force adjacency-sensitivity probe for tiny datasets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, SampleBatch, poisson_sample
from .errors import NumericalError, ParameterError, StructuralError
from .memory import (
    MemoryState,
    ReleaseHistory,
    ReleaseRecord,
    build_memory_state,
    warmup,
    zero_memory_state,
)
from .model import ModelState, PerExampleGradient, clipped_group_sums
from .numerics import RandomStream, gaussian_vector
from .spectral import SpectralInterval, SpectralReport, build_report


@dataclass(frozen=True)
class OptimizerConfig:
    """Hyperparameters of one private training run.

    beta mixes the current clipped sum into the query; alpha and window set
    the fractional kernel; the spectral interval plus c_lambda drive memory
    tempering. All entries are validated together so a bad config reports
    every problem at once.
    """

    beta: float = 0.7
    alpha: float = 0.7
    window: int = 4
    learning_rate: float = 0.5
    q: float = 0.1
    steps: int = 300
    seed: int = 0
    interval: SpectralInterval = field(default_factory=lambda: SpectralInterval(2.0, 6.0))
    c_lambda: float = 1.0
    ema_coef: float = 0.9
    warmup_tau: float = 5.0
    scale_cap: float = 3.0
    eps: float = 1e-12
    min_tail: int = 8

    def __post_init__(self):
        problems = []
        if not 0.0 < self.beta <= 1.0:
            problems.append(f"beta must lie in (0, 1], got {self.beta}")
        if not 0.0 < self.alpha <= 1.0:
            problems.append(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.window < 1:
            problems.append(f"window must be >= 1, got {self.window}")
        if self.learning_rate <= 0.0:
            problems.append(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 < self.q <= 1.0:
            problems.append(f"q must lie in (0, 1], got {self.q}")
        if self.steps < 1:
            problems.append(f"steps must be >= 1, got {self.steps}")
        if self.c_lambda <= 0.0:
            problems.append(f"c_lambda must be > 0, got {self.c_lambda}")
        if not 0.0 < self.ema_coef <= 1.0:
            problems.append(f"ema_coef must lie in (0, 1], got {self.ema_coef}")
        if self.warmup_tau <= 0.0:
            problems.append(f"warmup_tau must be > 0, got {self.warmup_tau}")
        if self.scale_cap <= 0.0:
            problems.append(f"scale_cap must be > 0, got {self.scale_cap}")
        if self.eps <= 0.0:
            problems.append(f"eps must be > 0, got {self.eps}")
        if self.min_tail < 1:
            problems.append(f"min_tail must be >= 1, got {self.min_tail}")
        if problems:
            raise ParameterError("; ".join(problems))


@dataclass(frozen=True)
class GroupTrace:
    """Per-group transcript of one step."""

    group_id: int
    clipped_sum: np.ndarray
    report: SpectralReport | None
    memory: MemoryState
    query: np.ndarray
    release: np.ndarray
    noise: np.ndarray
    update_norm: float
    trend_norm: float
    memory_ratio: float


@dataclass(frozen=True)
class StepTrace:
    step: int
    batch_size: int
    groups: list[GroupTrace]


@dataclass(frozen=True)
class AdjacencyProbeResult:
    removed_index: int
    group_id: int
    delta: float
    bound: float
    satisfied: bool


def clip_gradient(grad: PerExampleGradient, clip_norm: float) -> PerExampleGradient:
    """Rescale one per-example gradient onto the clip-norm ball."""
    if clip_norm <= 0.0:
        raise ParameterError("clip_norm must be > 0")
    if not np.all(np.isfinite(grad.flat)):
        raise NumericalError(f"non-finite gradient for group {grad.group_id}")
    norm = float(np.linalg.norm(grad.flat))
    factor = 1.0 / max(1.0, norm / clip_norm)
    return PerExampleGradient(grad.group_id, factor * grad.flat)


def clipped_sum(batch: SampleBatch, model: ModelState, data: Dataset, group_id: int) -> np.ndarray:
    """Sum of clipped per-example gradients for one group over a batch."""
    model.group(group_id)
    sums = clipped_group_sums(model, data, batch.indices)
    return sums[[g.group_id for g in model.groups].index(group_id)]


def recursive_query(clipped: np.ndarray, branch: np.ndarray, beta: float) -> np.ndarray:
    """query = beta * clipped_sum + memory branch."""
    if clipped.shape != branch.shape:
        raise StructuralError(
            f"clipped sum has shape {clipped.shape}, branch has {branch.shape}"
        )
    if not 0.0 < beta <= 1.0:
        raise ParameterError(f"beta must lie in (0, 1], got {beta}")
    return beta * clipped + branch


def private_release(
    query: np.ndarray, clip_norm: float, sigma: float, stream: RandomStream
) -> ReleaseRecord:
    """Add fresh N(0, (sigma * clip_norm)^2 I) noise; the record keeps all parts."""
    if sigma <= 0.0:
        raise ParameterError(f"noise multiplier must be > 0, got {sigma}")
    if clip_norm <= 0.0:
        raise ParameterError(f"clip_norm must be > 0, got {clip_norm}")
    noise = gaussian_vector(stream, query.size, sigma * clip_norm)
    return ReleaseRecord(
        step=stream.step_index,
        group_id=stream.group_index,
        query=query,
        noise=noise,
        release=query + noise,
    )


def apply_update(
    model: ModelState, group_id: int, release: np.ndarray, eta: float, lot: float
) -> ModelState:
    """Decrement one group's parameters by eta * release / lot."""
    if lot <= 0.0:
        raise ParameterError("expected lot size must be > 0")
    group = model.group(group_id)
    if release.shape != (group.size,):
        raise StructuralError(
            f"group {group_id}: release has shape {release.shape}, expected ({group.size},)"
        )
    scale = eta / lot
    group.set_flat(group.flat() - scale * release)
    return model


def _group_queries(
    model: ModelState,
    data: Dataset,
    indices: np.ndarray,
    config: OptimizerConfig,
    histories: dict[int, ReleaseHistory],
    t: int,
    reports: dict[int, SpectralReport],
):
    """Clipped sums, memory states, and recursive queries for every group.

    Memory states come from the release histories alone, so for fixed
    histories they are identical whatever batch is passed in.
    """
    omega = warmup(t, config.warmup_tau)
    available = min(config.window - 1, t)
    sums = clipped_group_sums(model, data, indices)
    out = {}
    for group, current in zip(model.groups, sums):
        gid = group.group_id
        if available == 0:
            state = zero_memory_state(group.size, omega)
        else:
            state = build_memory_state(
                histories[gid],
                dim=group.size,
                available=available,
                tempering=reports[gid].tempering,
                alpha=config.alpha,
                beta=config.beta,
                warmup_value=omega,
                scale_cap=config.scale_cap,
                eps=config.eps,
            )
        query = recursive_query(current, state.branch, config.beta)
        out[gid] = (current, state, query)
    return out


def spectral_reports(
    model: ModelState, config: OptimizerConfig, t: int
) -> dict[int, SpectralReport]:
    """Per-group spectral reports from the current model state only."""
    return {
        g.group_id: build_report(
            g.weight, config.interval, config.c_lambda, config.min_tail, g.group_id, t
        )
        for g in model.groups
    }


def step(
    model: ModelState,
    data: Dataset,
    config: OptimizerConfig,
    histories: dict[int, ReleaseHistory],
    stream: RandomStream,
    t: int,
) -> StepTrace:
    """One full private step; mutates the model and histories atomically.

    Spectral reports are taken from the pre-update parameters before the batch
    is drawn, so no spectral quantity can see current-batch data. All releases
    are computed before any state is committed; a failure part-way through
    leaves model and histories untouched.
    """
    if t < 0:
        raise ParameterError("step index must be >= 0")
    reports = {} if t == 0 else spectral_reports(model, config, t)
    batch = poisson_sample(stream.at(step_index=t, group_index=0), len(data), config.q)
    queries = _group_queries(model, data, batch.indices, config, histories, t, reports)
    lot = config.q * len(data)

    staged = []
    for group in model.groups:
        gid = group.group_id
        current, state, query = queries[gid]
        record = private_release(
            query,
            group.clip_norm,
            group.noise_multiplier,
            stream.at(step_index=t, group_index=gid, purpose="noise"),
        )
        # Trend norm as the branch saw it, i.e. before this step's release lands.
        trend = histories[gid].trend
        trend_norm = 0.0 if trend is None else float(np.linalg.norm(trend))
        staged.append((group, current, state, query, record, trend_norm))

    traces = []
    scale = config.learning_rate / lot
    for group, current, state, query, record, trend_norm in staged:
        apply_update(model, group.group_id, record.release, config.learning_rate, lot)
        histories[group.group_id].append(record)
        ratio = float(
            np.linalg.norm(state.branch)
            / (np.linalg.norm(config.beta * current) + config.eps)
        )
        traces.append(
            GroupTrace(
                group_id=group.group_id,
                clipped_sum=current,
                report=reports.get(group.group_id),
                memory=state,
                query=query,
                release=record.release,
                noise=record.noise,
                update_norm=float(np.linalg.norm(scale * record.release)),
                trend_norm=trend_norm,
                memory_ratio=ratio,
            )
        )
    return StepTrace(step=t, batch_size=len(batch), groups=traces)


def adjacency_probe(
    data: Dataset,
    batch: SampleBatch,
    model: ModelState,
    config: OptimizerConfig,
    histories: dict[int, ReleaseHistory],
    t: int,
) -> list[AdjacencyProbeResult]:
    """Brute-force check of the per-group query sensitivity bound beta * clip_norm.

    For each sampled example, the full recursive query is recomputed with that
    example removed (the mask and the release histories stay fixed) and the
    query difference is compared against the bound.
    """
    if len(data) > 12:
        raise ParameterError("the adjacency probe is a desk-scale oracle; need n <= 12")
    reports = {} if t == 0 else spectral_reports(model, config, t)
    full = _group_queries(model, data, batch.indices, config, histories, t, reports)
    results = []
    for removed in batch.indices:
        kept = batch.indices[batch.indices != removed]
        reduced = _group_queries(model, data, kept, config, histories, t, reports)
        for group in model.groups:
            gid = group.group_id
            delta = float(np.linalg.norm(full[gid][2] - reduced[gid][2]))
            bound = config.beta * group.clip_norm
            results.append(
                AdjacencyProbeResult(
                    removed_index=int(removed),
                    group_id=gid,
                    delta=delta,
                    bound=bound,
                    satisfied=delta <= bound + 1e-9,
                )
            )
    return results

"""Private-release-history memory: ring-buffered releases, the tempered
fractional kernel, EMA trend, alignment gate, norm scale, warm-up, and the
memory branch assembled from them.

Nothing in this module accepts the current clipped sum. Every operation reads
only previously released quantities and public hyperparameters, which is what
keeps the memory branch fixed once the release history is fixed.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ParameterError, StateError, StructuralError


@dataclass(frozen=True)
class ReleaseRecord:
    """One private release: query, fresh noise, and their sum."""

    step: int
    group_id: int
    query: np.ndarray
    noise: np.ndarray
    release: np.ndarray


class ReleaseHistory:
    """Ring buffer of the newest `capacity` releases plus the private EMA trend.

    Records are stored newest-first and must arrive with consecutive step
    indices. A single writer appends between optimizer steps; reads within a
    step see a fixed snapshot.
    """

    def __init__(self, group_id: int, capacity: int, ema_coef: float):
        if capacity < 0:
            raise ParameterError("capacity must be >= 0")
        if not 0.0 < ema_coef <= 1.0:
            raise ParameterError(f"ema_coef must lie in (0, 1], got {ema_coef}")
        self.group_id = group_id
        self.capacity = capacity
        self.ema_coef = ema_coef
        self.records: deque[ReleaseRecord] = deque(maxlen=capacity)
        self.trend: np.ndarray | None = None
        self._last_step: int | None = None

    def append(self, record: ReleaseRecord) -> None:
        """Store a release and fold it into the EMA trend."""
        if record.group_id != self.group_id:
            raise StateError(
                f"history for group {self.group_id} got a record for group {record.group_id}"
            )
        if self._last_step is not None and record.step != self._last_step + 1:
            raise StateError(
                f"records must be consecutive: step {record.step} after {self._last_step}"
            )
        if self.records and record.release.shape != self.records[0].release.shape:
            raise StructuralError("release dimension changed between steps")
        self._last_step = record.step
        self.records.appendleft(record)
        self.trend = ema_update(
            self.trend, record.release, self.ema_coef, is_first=self.trend is None
        )


class KernelWeights(NamedTuple):
    raw: np.ndarray
    hat: np.ndarray


def kernel_weights(alpha: float, tempering: float, available: int) -> KernelWeights:
    """Fractional lag weights (j+1)^(alpha-1) * exp(-tempering * j), j = 1..available,
    plus their normalization to unit sum. Both empty when no lags are available."""
    if not 0.0 < alpha <= 1.0:
        raise ParameterError(f"alpha must lie in (0, 1], got {alpha}")
    if not 0.0 <= tempering <= 1.0:
        raise ParameterError(f"tempering must lie in [0, 1], got {tempering}")
    if available < 0:
        raise ParameterError("available lag count must be >= 0")
    if available == 0:
        return KernelWeights(np.zeros(0), np.zeros(0))
    lags = np.arange(1, available + 1, dtype=float)
    raw = (lags + 1.0) ** (alpha - 1.0) * np.exp(-tempering * lags)
    return KernelWeights(raw, raw / raw.sum())


def effective_depth(hat: np.ndarray) -> float:
    """Weighted mean lag of a normalized kernel; 0 when the kernel is empty."""
    hat = np.asarray(hat, dtype=float)
    if hat.size == 0:
        return 0.0
    if abs(hat.sum() - 1.0) > 1e-8 or np.any(hat <= 0):
        raise ParameterError("kernel weights must be positive and sum to 1")
    return float(np.arange(1, hat.size + 1) @ hat)


def memory_vector(history: ReleaseHistory, hat: np.ndarray) -> np.ndarray:
    """Kernel-weighted sum of the most recent releases (newest gets hat[0])."""
    hat = np.asarray(hat, dtype=float)
    if hat.size == 0:
        raise StructuralError("memory_vector needs at least one kernel weight")
    if hat.size > len(history.records):
        raise StateError(
            f"kernel spans {hat.size} lags but history holds {len(history.records)}"
        )
    out = np.zeros_like(history.records[0].release)
    for weight, record in zip(hat, history.records):
        if record.release.shape != out.shape:
            raise StructuralError("inconsistent release dimensions in history")
        out += weight * record.release
    return out


def memory_decompose(history: ReleaseHistory, hat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split the memory vector into its recursive-query and inherited-noise parts."""
    hat = np.asarray(hat, dtype=float)
    if hat.size == 0:
        raise StructuralError("memory_decompose needs at least one kernel weight")
    if hat.size > len(history.records):
        raise StateError(
            f"kernel spans {hat.size} lags but history holds {len(history.records)}"
        )
    rec = np.zeros_like(history.records[0].query)
    noise = np.zeros_like(rec)
    for weight, record in zip(hat, history.records):
        rec += weight * record.query
        noise += weight * record.noise
    return rec, noise


def ema_update(prev: np.ndarray | None, release: np.ndarray, coef: float, is_first: bool) -> np.ndarray:
    """EMA trend step: the first release seeds the trend, later ones blend in."""
    if not 0.0 < coef <= 1.0:
        raise ParameterError(f"ema coefficient must lie in (0, 1], got {coef}")
    if is_first:
        return np.array(release, dtype=float, copy=True)
    if prev is None:
        raise StateError("EMA update needs a previous trend unless is_first")
    return coef * release + (1.0 - coef) * prev


def alignment_gate(trend: np.ndarray, memory: np.ndarray, eps: float) -> float:
    """Clamped cosine between the EMA trend and the memory vector, in [0, 1]."""
    if eps <= 0.0:
        raise ParameterError("eps must be > 0")
    denom = float(np.linalg.norm(trend)) * float(np.linalg.norm(memory)) + eps
    return max(0.0, float(trend @ memory) / denom)


def norm_scale(trend: np.ndarray, memory: np.ndarray, cap: float, eps: float) -> float:
    """Capped trend/memory norm ratio, in [0, cap]."""
    if cap <= 0.0:
        raise ParameterError("cap must be > 0")
    if eps <= 0.0:
        raise ParameterError("eps must be > 0")
    return min(cap, float(np.linalg.norm(trend)) / (float(np.linalg.norm(memory)) + eps))


def warmup(t: int, tau: float) -> float:
    """Deterministic ramp 1 - exp(-t/tau), clamped strictly below 1."""
    if t < 0:
        raise ParameterError("step index must be >= 0")
    if tau <= 0.0:
        raise ParameterError("tau must be > 0")
    return min(1.0 - math.exp(-t / tau), math.nextafter(1.0, 0.0))


@dataclass(frozen=True)
class MemoryState:
    """Everything the memory branch contributes at one step for one group."""

    kernel: np.ndarray
    vector: np.ndarray
    depth: float
    gate: float
    scale: float
    warmup: float
    branch: np.ndarray


def zero_memory_state(dim: int, warmup_value: float = 0.0) -> MemoryState:
    return MemoryState(
        kernel=np.zeros(0),
        vector=np.zeros(dim),
        depth=0.0,
        gate=0.0,
        scale=0.0,
        warmup=warmup_value,
        branch=np.zeros(dim),
    )


def build_memory_state(
    history: ReleaseHistory,
    dim: int,
    available: int,
    tempering: float,
    alpha: float,
    beta: float,
    warmup_value: float,
    scale_cap: float,
    eps: float,
) -> MemoryState:
    """Assemble the memory branch for one group from its history alone.

    branch = (1 - beta) * warmup * gate * scale * memory_vector, which keeps
    ||branch|| <= (1 - beta) * warmup * ||trend||.
    """
    if available <= 0:
        return zero_memory_state(dim, warmup_value)
    if history.trend is None:
        raise StateError("memory requested before any release was recorded")
    weights = kernel_weights(alpha, tempering, available)
    vector = memory_vector(history, weights.hat)
    gate = alignment_gate(history.trend, vector, eps)
    scale = norm_scale(history.trend, vector, scale_cap, eps)
    coeff = (1.0 - beta) * warmup_value * gate * scale
    return MemoryState(
        kernel=weights.hat,
        vector=vector,
        depth=effective_depth(weights.hat),
        gate=gate,
        scale=scale,
        warmup=warmup_value,
        branch=coeff * vector,
    )

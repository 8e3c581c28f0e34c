"""Minimal group-wise DP-SGD reference loop.

Written as a straight-line transcription of the textbook mechanism — sample,
clip, sum, add Gaussian noise, update — with no memory, spectral, or query
machinery. It shares only the numeric substrate (keyed streams, gradient
primitives) with the main optimizer, so a run driven by the same seed is
directly comparable bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, poisson_sample
from .model import ModelState, clipped_group_sums
from .numerics import RandomStream, gaussian_vector


@dataclass(frozen=True)
class DpSgdStepTrace:
    step: int
    batch_size: int
    sums: dict[int, np.ndarray]
    releases: dict[int, np.ndarray]
    update_norms: dict[int, float]


def dpsgd_step(
    model: ModelState,
    data: Dataset,
    q: float,
    learning_rate: float,
    stream: RandomStream,
    t: int,
) -> DpSgdStepTrace:
    """One DP-SGD step, mutating the model in place."""
    batch = poisson_sample(stream.at(step_index=t, group_index=0), len(data), q)
    sums = clipped_group_sums(model, data, batch.indices)
    lot = q * len(data)
    scale = learning_rate / lot
    released = {}
    update_norms = {}
    for group, current in zip(model.groups, sums):
        noise = gaussian_vector(
            stream.at(step_index=t, group_index=group.group_id, purpose="noise"),
            group.size,
            group.noise_multiplier * group.clip_norm,
        )
        release = current + noise
        group.set_flat(group.flat() - scale * release)
        released[group.group_id] = release
        update_norms[group.group_id] = float(np.linalg.norm(scale * release))
    return DpSgdStepTrace(
        step=t,
        batch_size=len(batch),
        sums={g.group_id: s for g, s in zip(model.groups, sums)},
        releases=released,
        update_norms=update_norms,
    )


def run_dpsgd(
    model: ModelState,
    data: Dataset,
    q: float,
    learning_rate: float,
    steps: int,
    stream: RandomStream,
    on_step=None,
) -> ModelState:
    """Run the reference loop for `steps` steps; `on_step` sees each trace."""
    for t in range(steps):
        trace = dpsgd_step(model, data, q, learning_rate, stream, t)
        if on_step is not None:
            on_step(trace)
    return model

"""Renyi-DP accounting for the Poisson-subsampled Gaussian mechanism.

Per-order bounds use the integer-order binomial expansion evaluated in
log-space, which collapses to the pure-Gaussian value order / (2 sigma^2) at
q = 1 and to zero at q = 0. Composition sums per-step costs over a fixed
order grid; conversion to (epsilon, delta) minimizes over the grid.

Two noise-to-sensitivity ratios appear throughout:
  * joint   — 1 / (beta * sqrt(sum_g sigma_g^-2)), the conservative ratio that
              backs the formal full-step guarantee across groups;
  * marginal — sigma / beta for a single group, a diagnostic only. Every
              marginal output is tagged "marginal-diagnostic" and must never be
              read as a full-model guarantee.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import AccountingError, ParameterError, StateError

DEFAULT_MAX_ORDER = 64
MARGINAL_TAG = "marginal-diagnostic"


@dataclass(frozen=True)
class RdpOrderGrid:
    orders: tuple[int, ...]

    def __post_init__(self):
        orders = tuple(int(o) for o in self.orders)
        if not orders:
            raise ParameterError("order grid must be non-empty")
        if any(o < 2 for o in orders):
            raise ParameterError("all orders must be integers >= 2")
        if any(b <= a for a, b in zip(orders, orders[1:])):
            raise ParameterError("orders must be strictly increasing")
        object.__setattr__(self, "orders", orders)

    @classmethod
    def default(cls, max_order: int = DEFAULT_MAX_ORDER) -> "RdpOrderGrid":
        return cls(tuple(range(2, max_order + 1)))


def _log_binomial(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def rdp_subsampled_gaussian(order: int, q: float, sigma: float) -> float:
    """RDP bound at an integer order for sampling rate q and noise ratio sigma.

    (order - 1)^-1 * log sum_k C(order, k) (1-q)^(order-k) q^k
    exp(k (k-1) / (2 sigma^2)), evaluated via log-sum-exp.
    """
    if int(order) != order or order < 2:
        raise ParameterError(f"order must be an integer >= 2, got {order}")
    order = int(order)
    if not 0.0 <= q <= 1.0:
        raise ParameterError(f"q must lie in [0, 1], got {q}")
    if sigma <= 0.0:
        raise ParameterError(f"sigma must be > 0, got {sigma}")
    if q == 0.0:
        return 0.0
    gauss = 1.0 / (2.0 * sigma * sigma)
    if q == 1.0:
        eps = order * gauss
    else:
        log_q = math.log(q)
        log_1mq = math.log1p(-q)
        terms = [
            _log_binomial(order, k)
            + (order - k) * log_1mq
            + k * log_q
            + k * (k - 1) * gauss
            for k in range(order + 1)
        ]
        peak = max(terms)
        eps = (peak + math.log(sum(math.exp(t - peak) for t in terms))) / (order - 1)
    if not math.isfinite(eps):
        raise AccountingError(
            f"RDP bound overflowed at order {order}; use a larger sigma or a smaller order"
        )
    return max(0.0, eps)


def sigma_eff_joint(beta: float, sigmas) -> float:
    """Conservative joint noise-to-sensitivity ratio across parameter groups."""
    if not 0.0 < beta <= 1.0:
        raise ParameterError(f"beta must lie in (0, 1], got {beta}")
    values = [float(s) for s in np.atleast_1d(sigmas)]
    if not values or any(s <= 0.0 for s in values):
        raise ParameterError("all noise multipliers must be > 0")
    return 1.0 / (beta * math.sqrt(sum(s ** -2 for s in values)))


@lru_cache(maxsize=4096)
def _per_step_costs(orders: tuple[int, ...], q: float, sigma: float) -> np.ndarray:
    """One step's RDP cost at every grid order; runs repeat (q, sigma) pairs
    thousands of times, so this is worth caching."""
    return np.array([rdp_subsampled_gaussian(order, q, sigma) for order in orders])


class PrivacyLedger:
    """Cumulative per-order RDP over a fixed order grid.

    mode is "joint" or "marginal" and only labels outputs; the arithmetic is
    identical. Records are (step, q, sigma_eff) tuples.
    """

    def __init__(self, grid: RdpOrderGrid, mode: str = "joint"):
        if mode not in ("joint", "marginal"):
            raise ParameterError(f"mode must be 'joint' or 'marginal', got {mode!r}")
        self.grid = grid
        self.mode = mode
        self.records: list[tuple[int, float, float]] = []
        self.cumulative = np.zeros(len(grid.orders))

    def compose(self, step: int, q: float, sigma_eff: float, grid: RdpOrderGrid | None = None):
        """Add one step's cost at every order; the grid must not change."""
        if grid is not None and grid.orders != self.grid.orders:
            raise StateError("order grid changed mid-ledger")
        self.cumulative = self.cumulative + _per_step_costs(
            self.grid.orders, float(q), float(sigma_eff)
        )
        self.records.append((step, q, sigma_eff))
        return self

    def epsilon(self, delta: float) -> tuple[float, int]:
        return rdp_to_dp(self, delta)


def rdp_to_dp(ledger: PrivacyLedger, delta: float) -> tuple[float, int]:
    """Convert cumulative RDP to (epsilon, delta)-DP; ties pick the smaller order.

    An empty ledger yields the pure conversion penalty, minimized at the
    largest order.
    """
    if not 0.0 < delta < 1.0:
        raise ParameterError(f"delta must lie in (0, 1), got {delta}")
    orders = np.array(ledger.grid.orders, dtype=float)
    candidates = ledger.cumulative + math.log(1.0 / delta) / (orders - 1.0)
    best = int(np.argmin(candidates))
    return float(candidates[best]), int(orders[best])


def marginal_epsilon_curve(
    beta: float,
    sigma: float,
    q: float,
    steps: int,
    delta: float,
    grid: RdpOrderGrid | None = None,
) -> list[float]:
    """Cumulative (epsilon, delta) curve for the marginal ratio sigma / beta.

    Entry t is the converted epsilon after t composed steps, so the list has
    steps + 1 entries and entry 0 is the conversion penalty alone. Diagnostic
    only; tag every presentation of it with "marginal-diagnostic".
    """
    if steps < 0:
        raise ParameterError("steps must be >= 0")
    if sigma <= 0.0:
        raise ParameterError(f"sigma must be > 0, got {sigma}")
    if not 0.0 < beta <= 1.0:
        raise ParameterError(f"beta must lie in (0, 1], got {beta}")
    grid = grid or RdpOrderGrid.default()
    ledger = PrivacyLedger(grid, mode="marginal")
    ratio = sigma / beta
    curve = [ledger.epsilon(delta)[0]]
    for t in range(steps):
        ledger.compose(t, q, ratio)
        curve.append(ledger.epsilon(delta)[0])
    return curve

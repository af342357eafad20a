"""Virtual-queue bookkeeping and drift-plus-penalty arithmetic.

Queues are stored dimensionless: each slot adds the energy surplus over the
per-slot budget, divided by that budget, clamped at zero.  This keeps the
drift O(1) and commensurable with an Mbps-scale penalty without extreme
trade-off weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "VirtualQueueBank",
    "DppWeights",
    "virtual_queue_update",
    "lyapunov_value",
    "lyapunov_drift",
    "drift_plus_penalty",
    "reward_from_dpp",
]


def _require_finite(name, x):
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} must be finite, got {x!r}")


@dataclass
class VirtualQueueBank:
    """One virtual queue per tracked long-term constraint.

    queues are dimensionless surplus accumulators (>= 0); budgets are the
    per-slot allowances (J/slot) each queue is normalized by.
    """

    queues: np.ndarray
    budgets: np.ndarray

    def __post_init__(self):
        self.queues = np.atleast_1d(np.asarray(self.queues, dtype=float))
        self.budgets = np.atleast_1d(np.asarray(self.budgets, dtype=float))
        if self.queues.shape != self.budgets.shape:
            raise ValueError(
                f"queues and budgets must have equal length, got "
                f"{self.queues.shape} vs {self.budgets.shape}"
            )
        _require_finite("queues", self.queues)
        _require_finite("budgets", self.budgets)
        if np.any(self.queues < 0.0):
            raise ValueError("queue values must be non-negative")
        if np.any(self.budgets <= 0.0):
            raise ValueError("budgets must be positive")

    @property
    def count(self) -> int:
        return self.queues.size

    def copy(self) -> "VirtualQueueBank":
        return VirtualQueueBank(self.queues.copy(), self.budgets.copy())


@dataclass(frozen=True)
class DppWeights:
    """Trade-off weight between queue stability and the performance objective."""

    V: float = 0.5

    def __post_init__(self):
        _require_finite("V", self.V)
        if self.V < 0.0:
            raise ValueError(f"V must be non-negative, got {self.V}")


def virtual_queue_update(q, consumed, budget):
    """Advance a queue by one slot: q' = max(q + (consumed - budget)/budget, 0).

    Accepts scalars or equally-shaped arrays.  `consumed` and `budget` are in
    joules; the stored queue is dimensionless surplus over the budget.
    """
    _require_finite("q", q)
    _require_finite("consumed", consumed)
    _require_finite("budget", budget)
    if np.any(np.asarray(q) < 0.0):
        raise ValueError("q must be non-negative")
    if np.any(np.asarray(consumed) < 0.0):
        raise ValueError("consumed must be non-negative")
    if np.any(np.asarray(budget) <= 0.0):
        raise ValueError("budget must be positive")
    return np.maximum(q + (consumed - budget) / budget, 0.0)


def lyapunov_value(bank: VirtualQueueBank) -> float:
    """Quadratic scalar summary of queue backlog: half the sum of squares."""
    q = bank.queues
    return 0.5 * float(q @ q)


def lyapunov_drift(L_next, L_now):
    """Change of the quadratic summary across one slot (may be negative)."""
    _require_finite("L_next", L_next)
    _require_finite("L_now", L_now)
    return L_next - L_now


def drift_plus_penalty(drift, penalty, w: DppWeights):
    """drift + V * penalty; the per-slot objective the policies minimize."""
    _require_finite("drift", drift)
    _require_finite("penalty", penalty)
    return drift + w.V * penalty


def reward_from_dpp(dpp):
    """RL reward: maximizing it is minimizing the drift-plus-penalty."""
    _require_finite("dpp", dpp)
    return -dpp

"""Comparison policies: myopic per-slot grid solver, vanilla MLP actor, random, static.

The myopic solver is the conventional-method stand-in: it minimizes the
realized per-slot drift-plus-penalty exactly over a coarse finite action
grid, so it doubles as a cheap brute-force oracle in tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env import (
    Action,
    ConfigError,
    EnvConfig,
    EnvState,
    clip_to_area,
    propulsion_power,
    reachability_clamp,
    uplink_rates,
)
from .lyapunov import DppWeights, drift_plus_penalty, virtual_queue_update
from .nn import MlpSpec, ParamTensor, mlp_forward

__all__ = [
    "ActionGrid",
    "make_action_grid",
    "myopic_grid_solve",
    "mlp_actor_action",
    "random_action",
    "static_policy_action",
    "CRUISE_SPEED",
]

# Straight-line cruise speed for the static policy: near the bottom of the
# propulsion curve (126 J/slot), comfortably inside the 140 J budget.
CRUISE_SPEED = 10.0


@dataclass(frozen=True)
class ActionGrid:
    """Finite action set: candidate velocities x candidate bandwidth splits."""

    velocities: np.ndarray  # (M, 2)
    splits: np.ndarray  # (S, N), each row sums to 1

    @property
    def size(self) -> int:
        return self.velocities.shape[0] * self.splits.shape[0]

    def action(self, index: int) -> Action:
        s = self.splits.shape[0]
        return Action(
            velocity=self.velocities[index // s].copy(),
            bandwidth_ratios=self.splits[index % s].copy(),
        )


def make_action_grid(cfg: EnvConfig, speeds=(0.0, 10.0, 20.0, 25.0),
                     n_headings: int = 8) -> ActionGrid:
    """Hover plus `n_headings` compass directions at each nonzero speed,
    crossed with the N one-hot bandwidth splits plus the uniform split."""
    vels = [np.zeros(2)]
    angles = 2.0 * math.pi * np.arange(n_headings) / n_headings
    for speed in speeds:
        if speed == 0.0:
            continue
        if speed > cfg.v_max:
            raise ConfigError(f"grid speed {speed} exceeds v_max {cfg.v_max}")
        for a in angles:
            vels.append(speed * np.array([math.cos(a), math.sin(a)]))
    n = cfg.n_devices
    splits = list(np.eye(n)) + [np.full(n, 1.0 / n)]
    grid = ActionGrid(velocities=np.array(vels), splits=np.array(splits))
    for i in range(grid.size):
        grid.action(i).validate(cfg)
    return grid


def slot_dpp(state: EnvState, action: Action, cfg: EnvConfig) -> float:
    """Realized drift-plus-penalty of one action for the current slot.

    Mirrors env.step_action: clamp, move, rates at the post-move position,
    propulsion energy, queue update.
    """
    v = reachability_clamp(state.position, action.velocity, state.t, cfg)
    pos2 = clip_to_area(state.position + v * cfg.dt, cfg)
    rates = uplink_rates(pos2, cfg, action.bandwidth_ratios)
    energy = propulsion_power(float(np.linalg.norm(v))) * cfg.dt
    q = float(state.queue.queues[0])
    q2 = float(virtual_queue_update(q, energy, float(state.queue.budgets[0])))
    drift = 0.5 * (q2 * q2 - q * q)
    penalty = -float(rates.sum()) / 1e6
    return drift_plus_penalty(drift, penalty, DppWeights(cfg.V))


def myopic_grid_solve(state: EnvState, cfg: EnvConfig, grid: ActionGrid) -> Action:
    """Exact argmin of the realized per-slot drift-plus-penalty over the grid.

    Ties break toward the lowest grid index (velocity-major order).
    """
    if state.done:
        raise RuntimeError("cannot solve a slot for a finished episode")
    if grid.size == 0:
        raise ConfigError("action grid is empty")
    best_idx = 0
    best_dpp = math.inf
    for i in range(grid.size):
        dpp = slot_dpp(state, grid.action(i), cfg)
        if dpp < best_dpp:
            best_dpp = dpp
            best_idx = i
    return grid.action(best_idx)


def mlp_actor_action(obs, params: ParamTensor, spec: MlpSpec) -> np.ndarray:
    """Deterministic raw action from the vanilla MLP actor (squash happens in env)."""
    raw, _ = mlp_forward(params, spec, np.asarray(obs, dtype=params.dtype))
    return raw


def random_action(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Raw action with i.i.d. standard-normal components."""
    return rng.standard_normal(dim)


def static_policy_action(state: EnvState, cfg: EnvConfig) -> Action:
    """Straight-line cruise toward the destination at CRUISE_SPEED, uniform split."""
    to_dest = np.asarray(cfg.dest, dtype=float) - state.position
    dist = float(np.linalg.norm(to_dest))
    if dist == 0.0:
        velocity = np.zeros(2)
    else:
        speed = min(CRUISE_SPEED, dist / cfg.dt)
        velocity = to_dest * (speed / dist)
    return Action(
        velocity=velocity,
        bandwidth_ratios=np.full(cfg.n_devices, 1.0 / cfg.n_devices),
    )

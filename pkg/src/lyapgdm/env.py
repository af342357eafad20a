"""UAV data-collection environment: geometry, channel, propulsion, episode dynamics.

A single rotary-wing UAV flies a fixed-horizon mission from a start point to a
destination over a rectangular area, collecting uplink data from N ground
devices.  Per slot the policy picks a velocity and a bandwidth split; the
environment returns the negative drift-plus-penalty as reward, with one
virtual energy queue tracking the long-term propulsion budget.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from .lyapunov import (
    DppWeights,
    VirtualQueueBank,
    drift_plus_penalty,
    lyapunov_drift,
    lyapunov_value,
    reward_from_dpp,
    virtual_queue_update,
)

__all__ = [
    "ConfigError",
    "EnvConfig",
    "EnvState",
    "Action",
    "Observation",
    "Transition",
    "SlotInfo",
    "channel_gain",
    "channel_gains",
    "uplink_rates",
    "propulsion_power",
    "squash_raw_action",
    "reachability_clamp",
    "clip_to_area",
    "build_observation",
    "reset",
    "step",
    "step_action",
    "random_device_positions",
]

Observation = np.ndarray

# Rotary-wing propulsion model constants: blade profile power, induced power,
# rotor tip speed, mean induced hover velocity, fuselage drag ratio, air
# density, rotor solidity, rotor disc area.  Hover draws P0 + Pi = 168.48 W;
# the curve bottoms out near 10 m/s at about 126 W.
P0_BLADE = 79.8563
PI_INDUCED = 88.6279
U_TIP = 120.0
V0_HOVER = 4.03
D0_DRAG = 0.6
RHO_AIR = 1.225
ROTOR_SOLIDITY = 0.05
DISC_AREA = 0.503

# Affine map of log10 channel gain onto [-1, 1] used by observations.
LOG_GAIN_LO = -12.0
LOG_GAIN_HI = -8.0


class ConfigError(ValueError):
    """Invalid or infeasible configuration."""


@dataclass
class EnvConfig:
    area_x: float = 600.0
    area_y: float = 450.0
    start: tuple[float, float] = (0.0, 0.0)
    dest: tuple[float, float] = (600.0, 0.0)
    altitude: float = 100.0
    v_max: float = 25.0
    horizon: int = 100
    dt: float = 1.0
    bandwidth: float = 1e6
    tx_power: float = 0.1
    energy_budget: float = 140.0
    device_positions: tuple[tuple[float, float], ...] = (
        (100.0, 150.0),
        (300.0, 350.0),
        (500.0, 100.0),
    )
    beta0: float = 1e-5
    noise_psd: float = 1e-20
    V: float = 0.5

    @property
    def n_devices(self) -> int:
        return len(self.device_positions)

    @property
    def obs_dim(self) -> int:
        # pos (2) + t/T (1) + queue (1) + per-device gain (N) + remaining-distance (1)
        return 4 + self.n_devices + 1

    @property
    def action_dim(self) -> int:
        # velocity (2) + bandwidth logits (N)
        return 2 + self.n_devices

    @property
    def area_diagonal(self) -> float:
        return math.hypot(self.area_x, self.area_y)

    def devices(self) -> np.ndarray:
        return _device_array(self.device_positions)

    def validate(self) -> None:
        if self.v_max <= 0:
            raise ConfigError(f"env.v_max must be positive, got {self.v_max}")
        if self.horizon < 1:
            raise ConfigError(f"env.horizon must be >= 1, got {self.horizon}")
        if self.dt <= 0:
            raise ConfigError(f"env.dt must be positive, got {self.dt}")
        if self.bandwidth <= 0:
            raise ConfigError(f"env.bandwidth must be positive, got {self.bandwidth}")
        if self.tx_power <= 0:
            raise ConfigError(f"env.tx_power must be positive, got {self.tx_power}")
        if self.energy_budget <= 0:
            raise ConfigError(
                f"env.energy_budget must be positive, got {self.energy_budget}"
            )
        if self.altitude <= 0:
            raise ConfigError(f"env.altitude must be positive, got {self.altitude}")
        if self.beta0 <= 0:
            raise ConfigError(f"env.beta0 must be positive, got {self.beta0}")
        if self.noise_psd <= 0:
            raise ConfigError(f"env.noise_psd must be positive, got {self.noise_psd}")
        if self.V < 0:
            raise ConfigError(f"env.V must be non-negative, got {self.V}")
        if self.n_devices < 1:
            raise ConfigError("env.device_positions must list at least one device")
        for name, p in (
            ("start", self.start),
            ("dest", self.dest),
            *((f"device {i}", d) for i, d in enumerate(self.device_positions)),
        ):
            if not (0.0 <= p[0] <= self.area_x and 0.0 <= p[1] <= self.area_y):
                raise ConfigError(f"env.{name} {p} lies outside the area rectangle")
        trip = math.dist(self.start, self.dest)
        reach = self.horizon * self.dt * self.v_max
        if trip > reach:
            raise ConfigError(
                f"mission infeasible: start-dest distance {trip:.1f} m exceeds "
                f"horizon reach {reach:.1f} m"
            )


@functools.lru_cache(maxsize=64)
def _device_array(device_positions: tuple) -> np.ndarray:
    arr = np.asarray(device_positions, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass
class EnvState:
    position: np.ndarray
    t: int
    queue: VirtualQueueBank
    done: bool = False


@dataclass
class Action:
    """Physical action: velocity in m/s and a bandwidth split summing to 1."""

    velocity: np.ndarray
    bandwidth_ratios: np.ndarray

    def validate(self, cfg: EnvConfig, tol: float = 1e-9) -> None:
        v = float(np.linalg.norm(self.velocity))
        if v > cfg.v_max + tol:
            raise ValueError(f"velocity norm {v} exceeds v_max {cfg.v_max}")
        r = np.asarray(self.bandwidth_ratios, dtype=float)
        if r.shape != (cfg.n_devices,):
            raise ValueError(f"expected {cfg.n_devices} ratios, got shape {r.shape}")
        if np.any(r < -tol):
            raise ValueError("bandwidth ratios must be non-negative")
        if abs(float(r.sum()) - 1.0) > tol:
            raise ValueError(f"bandwidth ratios sum to {r.sum()}, expected 1")


@dataclass
class Transition:
    obs: np.ndarray
    action_raw: np.ndarray
    reward: float
    obs_next: np.ndarray
    done: bool


@dataclass
class SlotInfo:
    """Per-slot record for traces: everything the eval CSV needs."""

    t: int
    position: np.ndarray
    velocity: np.ndarray
    ratios: np.ndarray
    rates: np.ndarray  # bit/s per device
    rate_total_mbps: float
    energy_j: float
    queue: float
    drift: float
    penalty_mbps: float
    dpp: float
    reward: float


def channel_gain(uav_pos, device_pos, cfg: EnvConfig) -> float:
    """Free-space line-of-sight power gain: beta0 / (horizontal^2 + altitude^2)."""
    dx = uav_pos[0] - device_pos[0]
    dy = uav_pos[1] - device_pos[1]
    return cfg.beta0 / (dx * dx + dy * dy + cfg.altitude * cfg.altitude)


def channel_gains(uav_pos, cfg: EnvConfig) -> np.ndarray:
    """Vector of channel gains to all configured devices."""
    d = cfg.devices() - np.asarray(uav_pos, dtype=float)
    return cfg.beta0 / (np.einsum("ij,ij->i", d, d) + cfg.altitude**2)


def uplink_rates(uav_pos, cfg: EnvConfig, ratios) -> np.ndarray:
    """Shannon rates (bit/s) per device over orthogonal bandwidth shares.

    R_n = b_n B log2(1 + P g_n / (b_n B N0)); a zero share yields zero rate.
    """
    b = np.asarray(ratios, dtype=float) * cfg.bandwidth
    g = channel_gains(uav_pos, cfg)
    rates = np.zeros_like(b)
    live = b > 0.0
    snr = cfg.tx_power * g[live] / (b[live] * cfg.noise_psd)
    rates[live] = b[live] * np.log2(1.0 + snr)
    return rates


def propulsion_power(speed: float) -> float:
    """Rotary-wing propulsion power (W) at horizontal speed v >= 0."""
    if speed < 0.0:
        raise ValueError(f"speed must be non-negative, got {speed}")
    v2 = speed * speed
    blade = P0_BLADE * (1.0 + 3.0 * v2 / (U_TIP * U_TIP))
    v0sq = V0_HOVER * V0_HOVER
    # sqrt(1 + v^4/(4 v0^4)) - v^2/(2 v0^2) >= 0 analytically; guard rounding.
    inner = math.sqrt(1.0 + v2 * v2 / (4.0 * v0sq * v0sq)) - v2 / (2.0 * v0sq)
    induced = PI_INDUCED * math.sqrt(max(inner, 0.0))
    parasite = 0.5 * D0_DRAG * RHO_AIR * ROTOR_SOLIDITY * DISC_AREA * v2 * speed
    return blade + induced + parasite


def squash_raw_action(raw, cfg: EnvConfig) -> Action:
    """Map an unbounded policy output onto the physical action set.

    Velocity: v_max * tanh of the first two components, then norm-clamped to
    v_max.  Bandwidth: softmax of the remaining N components.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.shape != (cfg.action_dim,):
        raise ValueError(f"raw action must have shape ({cfg.action_dim},), got {raw.shape}")
    if not np.all(np.isfinite(raw)):
        raise ValueError("raw action must be finite")
    v = cfg.v_max * np.tanh(raw[:2])
    speed = float(np.linalg.norm(v))
    if speed > cfg.v_max:
        v *= cfg.v_max / speed
    logits = raw[2:] - raw[2:].max()
    e = np.exp(logits)
    return Action(velocity=v, bandwidth_ratios=e / e.sum())


def reachability_clamp(pos, velocity, t: int, cfg: EnvConfig) -> np.ndarray:
    """Override the velocity whenever the destination would become unreachable.

    If flying `velocity` for one slot leaves more distance to the destination
    than the remaining slots can cover at v_max, fly straight at the
    destination instead (at v_max, or slower on the final approach so the
    slot ends exactly on the destination).
    """
    velocity = np.asarray(velocity, dtype=float)
    to_dest = np.asarray(cfg.dest, dtype=float) - pos
    budget = (cfg.horizon - t - 1) * cfg.v_max * cfg.dt
    landing = pos + velocity * cfg.dt
    if math.dist(landing, cfg.dest) <= budget + 1e-9:
        return velocity
    dist = float(np.linalg.norm(to_dest))
    if dist == 0.0:
        return np.zeros(2)
    speed = min(cfg.v_max, dist / cfg.dt)
    return to_dest * (speed / dist)


def clip_to_area(pos, cfg: EnvConfig) -> np.ndarray:
    return np.clip(pos, [0.0, 0.0], [cfg.area_x, cfg.area_y])


def build_observation(state: EnvState, cfg: EnvConfig) -> np.ndarray:
    """Feature vector: pos/area, t/T, queue, squashed log-gains, remaining-distance ratio."""
    g = channel_gains(state.position, cfg)
    g_tilde = np.clip((np.log10(g) - LOG_GAIN_LO) / (LOG_GAIN_HI - LOG_GAIN_LO) * 2.0 - 1.0, -1.0, 1.0)
    remaining = math.dist(state.position, cfg.dest) / cfg.area_diagonal
    obs = np.empty(cfg.obs_dim)
    obs[0] = state.position[0] / cfg.area_x
    obs[1] = state.position[1] / cfg.area_y
    obs[2] = state.t / cfg.horizon
    obs[3] = state.queue.queues[0]
    obs[4 : 4 + cfg.n_devices] = g_tilde
    obs[-1] = remaining
    return obs


def reset(cfg: EnvConfig, seed=None) -> tuple[EnvState, np.ndarray]:
    """Start an episode at the configured start point with an empty queue.

    The dynamics are deterministic; `seed` is accepted for API symmetry with
    stochastic environments and is currently unused.
    """
    cfg.validate()
    state = EnvState(
        position=np.asarray(cfg.start, dtype=float),
        t=0,
        queue=VirtualQueueBank([0.0], [cfg.energy_budget]),
        done=False,
    )
    return state, build_observation(state, cfg)


def step(state: EnvState, raw_action, cfg: EnvConfig):
    """Advance one slot from a raw (pre-squash) policy output."""
    return step_action(state, squash_raw_action(raw_action, cfg), cfg)


def step_action(state: EnvState, action: Action, cfg: EnvConfig):
    """Advance one slot from a physical action.

    Returns (state', obs', reward, done, SlotInfo).  Rates are evaluated at
    the post-move position: where the UAV spends the slot collecting data.
    """
    if state.done:
        raise RuntimeError("cannot step a finished episode; call reset()")
    v = reachability_clamp(state.position, action.velocity, state.t, cfg)
    pos2 = clip_to_area(state.position + v * cfg.dt, cfg)
    rates = uplink_rates(pos2, cfg, action.bandwidth_ratios)
    energy = propulsion_power(float(np.linalg.norm(v))) * cfg.dt

    q_now = state.queue
    q_next = VirtualQueueBank(
        virtual_queue_update(q_now.queues, energy, q_now.budgets), q_now.budgets
    )
    drift = lyapunov_drift(lyapunov_value(q_next), lyapunov_value(q_now))
    penalty = -float(rates.sum()) / 1e6
    dpp = drift_plus_penalty(drift, penalty, DppWeights(cfg.V))
    reward = reward_from_dpp(dpp)

    t2 = state.t + 1
    state2 = EnvState(position=pos2, t=t2, queue=q_next, done=t2 == cfg.horizon)
    info = SlotInfo(
        t=t2,
        position=pos2,
        velocity=v,
        ratios=np.asarray(action.bandwidth_ratios, dtype=float),
        rates=rates,
        rate_total_mbps=-penalty,
        energy_j=energy,
        queue=float(q_next.queues[0]),
        drift=drift,
        penalty_mbps=penalty,
        dpp=dpp,
        reward=reward,
    )
    return state2, build_observation(state2, cfg), reward, state2.done, info


def random_device_positions(n: int, area_x: float, area_y: float, seed: int,
                            margin: float = 50.0) -> tuple[tuple[float, float], ...]:
    """Seeded uniform device placement, kept `margin` metres off the boundary."""
    rng = np.random.default_rng(seed)
    xs = rng.uniform(margin, area_x - margin, size=n)
    ys = rng.uniform(margin, area_y - margin, size=n)
    return tuple((float(x), float(y)) for x, y in zip(xs, ys))

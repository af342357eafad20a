"""DDPG-style training loop: replay, TD critic, actor-through-the-chain, soft targets.

Every source of randomness (warmup actions, chain noise, exploration noise,
replay sampling) draws from one seeded generator in a fixed order, so a
(config, seed) pair fully determines the run.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baselines import (
    make_action_grid,
    mlp_actor_action,
    myopic_grid_solve,
    random_action,
    static_policy_action,
)
from .diffusion import (
    DiffusionConfig,
    NoiseSchedule,
    backprop_through_chain,
    sample_action,
    sample_action_batch,
)
from .env import Action, ConfigError, EnvConfig, SlotInfo, Transition, reset, step, step_action
from .nn import (
    AdamState,
    MlpSpec,
    ParamTensor,
    adam_step,
    clip_grad_norm,
    load_params,
    mlp_backward,
    mlp_forward,
    mlp_init,
    save_params,
    zero_grads,
)

__all__ = [
    "AGENT_KINDS",
    "LEARNED_KINDS",
    "POLICY_KINDS",
    "TrainerConfig",
    "ReplayBuffer",
    "AgentNets",
    "EpisodeMetrics",
    "make_agent",
    "critic_update",
    "actor_update",
    "soft_update",
    "train_run",
    "rollout_episode",
    "make_policy",
    "save_checkpoint",
    "load_checkpoint",
]

LEARNED_KINDS = ("gdm-ddpg", "mlp-ddpg")
AGENT_KINDS = LEARNED_KINDS
POLICY_KINDS = LEARNED_KINDS + ("myopic", "static", "random")


@dataclass
class TrainerConfig:
    gamma: float = 0.99
    tau: float = 0.005
    batch: int = 256
    warmup: int = 1000
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    episodes: int = 1000
    updates_per_step: int = 1
    seed: int = 0
    explore_sigma_start: float = 0.2
    explore_sigma_end: float = 0.01
    grad_clip: float = 1.0
    replay_capacity: int = 100_000
    dtype: str = "float32"

    def validate(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"trainer.gamma must be in [0, 1], got {self.gamma}")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"trainer.tau must be in (0, 1], got {self.tau}")
        if self.batch < 1:
            raise ConfigError(f"trainer.batch must be >= 1, got {self.batch}")
        if self.warmup < 0:
            raise ConfigError(f"trainer.warmup must be >= 0, got {self.warmup}")
        if self.actor_lr <= 0 or self.critic_lr <= 0:
            raise ConfigError("trainer learning rates must be positive")
        if self.episodes < 1:
            raise ConfigError(f"trainer.episodes must be >= 1, got {self.episodes}")
        if self.updates_per_step < 0:
            raise ConfigError(
                f"trainer.updates_per_step must be >= 0, got {self.updates_per_step}"
            )
        if self.explore_sigma_start < 0 or self.explore_sigma_end < 0:
            raise ConfigError("exploration sigmas must be non-negative")
        if self.grad_clip <= 0:
            raise ConfigError(f"trainer.grad_clip must be positive, got {self.grad_clip}")
        if self.replay_capacity < self.batch:
            raise ConfigError("trainer.replay_capacity must be >= trainer.batch")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"trainer.dtype must be float32 or float64, got {self.dtype}")

    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def explore_sigma(self, episode: int) -> float:
        """Exponential decay from sigma_start to sigma_end over the run."""
        if self.explore_sigma_start <= 0.0:
            return 0.0
        frac = episode / max(self.episodes - 1, 1)
        lo = max(self.explore_sigma_end, 1e-12)
        return self.explore_sigma_start * (lo / self.explore_sigma_start) ** frac


class ReplayBuffer:
    """Fixed-capacity ring of transitions in flat preallocated arrays."""

    def __init__(self, capacity: int, obs_dim: int, action_dim: int, dtype=np.float32):
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, obs_dim), dtype=dtype)
        self.action = np.zeros((capacity, action_dim), dtype=dtype)
        self.reward = np.zeros(capacity, dtype=dtype)
        self.obs_next = np.zeros((capacity, obs_dim), dtype=dtype)
        self.done = np.zeros(capacity, dtype=dtype)
        self.size = 0
        self.cursor = 0
        self.total_pushed = 0

    def push(self, tr: Transition) -> None:
        if not (
            np.all(np.isfinite(tr.obs))
            and np.all(np.isfinite(tr.action_raw))
            and math.isfinite(tr.reward)
            and np.all(np.isfinite(tr.obs_next))
        ):
            raise ValueError("transitions must be finite")
        i = self.cursor
        self.obs[i] = tr.obs
        self.action[i] = tr.action_raw
        self.reward[i] = tr.reward
        self.obs_next[i] = tr.obs_next
        self.done[i] = 1.0 if tr.done else 0.0
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.total_pushed += 1

    def sample(self, batch: int, rng: np.random.Generator) -> dict:
        """Uniform sample with replacement; requires size >= batch."""
        if self.size < batch:
            raise ValueError(f"buffer holds {self.size} < batch {batch} transitions")
        idx = rng.integers(0, self.size, size=batch)
        return {
            "obs": self.obs[idx],
            "action": self.action[idx],
            "reward": self.reward[idx],
            "obs_next": self.obs_next[idx],
            "done": self.done[idx],
        }


def denoiser_spec(env_cfg: EnvConfig, dcfg: DiffusionConfig) -> MlpSpec:
    d = env_cfg.action_dim
    return MlpSpec((d + env_cfg.obs_dim + dcfg.embed_dim, 128, 128, 128, d),
                   activation="silu", output_activation="identity")


def mlp_actor_spec(env_cfg: EnvConfig) -> MlpSpec:
    return MlpSpec((env_cfg.obs_dim, 256, 256, env_cfg.action_dim),
                   activation="relu", output_activation="tanh")


def critic_spec(env_cfg: EnvConfig) -> MlpSpec:
    return MlpSpec((env_cfg.obs_dim + env_cfg.action_dim, 256, 256, 1),
                   activation="relu", output_activation="identity")


@dataclass
class AgentNets:
    kind: str
    actor: ParamTensor
    critic: ParamTensor
    target_actor: ParamTensor
    target_critic: ParamTensor
    actor_adam: AdamState
    critic_adam: AdamState


def make_agent(kind: str, env_cfg: EnvConfig, dcfg: DiffusionConfig,
               tcfg: TrainerConfig) -> AgentNets:
    if kind not in AGENT_KINDS:
        raise ConfigError(f"unknown agent kind {kind!r}, expected one of {AGENT_KINDS}")
    dtype = tcfg.np_dtype()
    aspec = denoiser_spec(env_cfg, dcfg) if kind == "gdm-ddpg" else mlp_actor_spec(env_cfg)
    cspec = critic_spec(env_cfg)
    actor_seed, critic_seed = (
        int(s) for s in np.random.SeedSequence(tcfg.seed).generate_state(2)
    )
    actor = mlp_init(aspec, actor_seed, dtype=dtype)
    critic = mlp_init(cspec, critic_seed, dtype=dtype)
    return AgentNets(
        kind=kind,
        actor=actor,
        critic=critic,
        target_actor=actor.copy(),
        target_critic=critic.copy(),
        actor_adam=AdamState.for_params(actor, tcfg.actor_lr),
        critic_adam=AdamState.for_params(critic, tcfg.critic_lr),
    )


def _actor_raw_batch(nets: AgentNets, obs: np.ndarray, schedule: NoiseSchedule,
                     rng: np.random.Generator, record: bool = False,
                     target: bool = False):
    """Raw actions for a batch; returns (raw, trace-or-tape-for-backprop)."""
    params = nets.target_actor if target else nets.actor
    if nets.kind == "gdm-ddpg":
        return sample_action_batch(obs, params, params.spec, schedule, rng,
                                   record=record)
    raw, tape = mlp_forward(params, params.spec, obs)
    return raw, tape


def critic_update(nets: AgentNets, batch: dict, cfg: TrainerConfig,
                  schedule: NoiseSchedule, rng: np.random.Generator) -> float:
    """One TD step: y = r + gamma (1-done) Q'(s', pi'(s')); MSE on Q(s, a_raw)."""
    s, a = batch["obs"], batch["action"]
    a2, _ = _actor_raw_batch(nets, batch["obs_next"], schedule, rng, target=True)
    q2, _ = mlp_forward(nets.target_critic, nets.target_critic.spec,
                        np.concatenate((batch["obs_next"], a2), axis=1))
    y = batch["reward"] + cfg.gamma * (1.0 - batch["done"]) * q2[:, 0]
    q, tape = mlp_forward(nets.critic, nets.critic.spec, np.concatenate((s, a), axis=1))
    err = q[:, 0] - y
    loss = float(np.mean(err * err))
    zero_grads(nets.critic)
    mlp_backward(nets.critic, nets.critic.spec, tape,
                 (2.0 / err.size) * err[:, None])
    clip_grad_norm(nets.critic, cfg.grad_clip)
    adam_step(nets.critic, nets.critic_adam)
    zero_grads(nets.critic)
    return loss


def actor_update(nets: AgentNets, batch: dict, cfg: TrainerConfig,
                 schedule: NoiseSchedule, rng: np.random.Generator) -> float:
    """Maximize Q(s, pi(s)): the critic's action gradient flows into the actor.

    For the diffusion actor the gradient passes through every denoising step
    of freshly sampled chains; the critic's parameters are not touched.
    """
    s = batch["obs"]
    n = s.shape[0]
    obs_dim = s.shape[1]
    zero_grads(nets.actor)
    raw, trace = _actor_raw_batch(nets, s, schedule, rng, record=True)
    q, ctape = mlp_forward(nets.critic, nets.critic.spec,
                           np.concatenate((s, raw), axis=1))
    loss = -float(np.mean(q))
    dq = np.full((n, 1), -1.0 / n, dtype=nets.critic.dtype)
    din = mlp_backward(nets.critic, nets.critic.spec, ctape, dq, accumulate=False)
    d_raw = din[:, obs_dim:]
    if nets.kind == "gdm-ddpg":
        backprop_through_chain(trace, schedule, nets.actor, nets.actor.spec, d_raw)
    else:
        mlp_backward(nets.actor, nets.actor.spec, trace, d_raw)
    clip_grad_norm(nets.actor, cfg.grad_clip)
    adam_step(nets.actor, nets.actor_adam)
    zero_grads(nets.actor)
    return loss


def soft_update(target: ParamTensor, online: ParamTensor, tau: float) -> None:
    """theta' <- tau * theta + (1 - tau) * theta', elementwise."""
    if target.values.shape != online.values.shape:
        raise ValueError("target/online parameter shapes differ")
    target.values *= 1.0 - tau
    target.values += tau * online.values
    target.version += 1


@dataclass
class EpisodeMetrics:
    episode: int
    reward_mean: float
    dpp_mean: float
    rate_mean_mbps: float
    energy_mean_j: float
    queue_final: float
    actor_loss: float
    critic_loss: float
    steps: int
    wall_ms: float


def train_run(env_cfg: EnvConfig, tcfg: TrainerConfig, dcfg: DiffusionConfig,
              kind: str, on_episode=None) -> tuple[list[EpisodeMetrics], AgentNets]:
    """The full loop: roll episodes, push transitions, update after warmup.

    Per env step after warmup: updates_per_step x (critic update, actor
    update, soft update of both targets).  `on_episode(metrics, nets)` runs
    after each episode for streaming CSV rows and checkpoints.
    """
    env_cfg.validate()
    tcfg.validate()
    dcfg.validate()
    schedule = dcfg.schedule()
    rng = np.random.default_rng(tcfg.seed)
    nets = make_agent(kind, env_cfg, dcfg, tcfg)
    buf = ReplayBuffer(tcfg.replay_capacity, env_cfg.obs_dim, env_cfg.action_dim,
                       dtype=tcfg.np_dtype())
    metrics: list[EpisodeMetrics] = []
    total_steps = 0

    for ep in range(tcfg.episodes):
        t_start = time.perf_counter()
        sigma = tcfg.explore_sigma(ep)
        state, obs = reset(env_cfg)
        reward_sum = dpp_sum = rate_sum = energy_sum = 0.0
        closs_sum = aloss_sum = 0.0
        n_updates = 0
        info: SlotInfo | None = None

        while not state.done:
            if total_steps < tcfg.warmup:
                raw = random_action(rng, env_cfg.action_dim)
            else:
                if nets.kind == "gdm-ddpg":
                    raw, _ = sample_action(obs, nets.actor, nets.actor.spec,
                                           schedule, rng)
                else:
                    raw = mlp_actor_action(obs, nets.actor, nets.actor.spec)
                if sigma > 0.0:
                    raw = raw + sigma * rng.standard_normal(env_cfg.action_dim)
            state, obs_next, reward, done, info = step(state, raw, env_cfg)
            buf.push(Transition(obs, np.asarray(raw, dtype=float), reward,
                                obs_next, done))
            obs = obs_next
            total_steps += 1
            reward_sum += reward
            dpp_sum += info.dpp
            rate_sum += info.rate_total_mbps
            energy_sum += info.energy_j

            if total_steps >= tcfg.warmup and buf.size >= tcfg.batch:
                for _ in range(tcfg.updates_per_step):
                    batch = buf.sample(tcfg.batch, rng)
                    closs = critic_update(nets, batch, tcfg, schedule, rng)
                    aloss = actor_update(nets, batch, tcfg, schedule, rng)
                    soft_update(nets.target_actor, nets.actor, tcfg.tau)
                    soft_update(nets.target_critic, nets.critic, tcfg.tau)
                    if not (math.isfinite(closs) and math.isfinite(aloss)):
                        raise RuntimeError(
                            f"non-finite losses at episode {ep}: "
                            f"critic {closs}, actor {aloss}"
                        )
                    closs_sum += closs
                    aloss_sum += aloss
                    n_updates += 1

        steps = state.t
        m = EpisodeMetrics(
            episode=ep,
            reward_mean=reward_sum / steps,
            dpp_mean=dpp_sum / steps,
            rate_mean_mbps=rate_sum / steps,
            energy_mean_j=energy_sum / steps,
            queue_final=info.queue,
            actor_loss=aloss_sum / n_updates if n_updates else 0.0,
            critic_loss=closs_sum / n_updates if n_updates else 0.0,
            steps=steps,
            wall_ms=(time.perf_counter() - t_start) * 1e3,
        )
        metrics.append(m)
        if on_episode is not None:
            on_episode(m, nets)
    return metrics, nets


def rollout_episode(policy, env_cfg: EnvConfig, rng: np.random.Generator) -> list[SlotInfo]:
    """Run one full episode; `policy(obs, state, rng)` returns raw output or an Action."""
    state, obs = reset(env_cfg)
    infos: list[SlotInfo] = []
    while not state.done:
        act = policy(obs, state, rng)
        if isinstance(act, Action):
            state, obs, _, _, info = step_action(state, act, env_cfg)
        else:
            state, obs, _, _, info = step(state, act, env_cfg)
        infos.append(info)
    return infos


def make_policy(kind: str, env_cfg: EnvConfig, dcfg: DiffusionConfig,
                actor: ParamTensor | None = None):
    """Policy callable for rollout_episode; learned kinds need actor parameters."""
    if kind == "gdm-ddpg":
        if actor is None:
            raise ValueError("gdm-ddpg policy needs actor parameters")
        schedule = dcfg.schedule()
        chain_noise = 1.0 if dcfg.eval_chain_noise else 0.0

        def policy(obs, state, rng):
            raw, _ = sample_action(obs, actor, actor.spec, schedule, rng,
                                   chain_noise=chain_noise)
            return raw

        return policy
    if kind == "mlp-ddpg":
        if actor is None:
            raise ValueError("mlp-ddpg policy needs actor parameters")
        return lambda obs, state, rng: mlp_actor_action(obs, actor, actor.spec)
    if kind == "myopic":
        grid = make_action_grid(env_cfg)
        return lambda obs, state, rng: myopic_grid_solve(state, env_cfg, grid)
    if kind == "static":
        return lambda obs, state, rng: static_policy_action(state, env_cfg)
    if kind == "random":
        return lambda obs, state, rng: random_action(rng, env_cfg.action_dim)
    raise ConfigError(f"unknown policy kind {kind!r}, expected one of {POLICY_KINDS}")


_CHECKPOINT_ROLES = ("actor", "critic", "target_actor", "target_critic")


def save_checkpoint(nets: AgentNets, dirpath, episode: int, seed: int,
                    env_cfg: EnvConfig, dcfg: DiffusionConfig) -> Path:
    """One parameter blob per network plus a JSON manifest."""
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    for role in _CHECKPOINT_ROLES:
        save_params(getattr(nets, role), d / f"{role}.mlp", seed=seed)
    manifest = {
        "kind": nets.kind,
        "episode": episode,
        "seed": seed,
        "obs_dim": env_cfg.obs_dim,
        "action_dim": env_cfg.action_dim,
        "diffusion": {
            "steps": dcfg.steps,
            "beta_min": dcfg.beta_min,
            "beta_max": dcfg.beta_max,
            "embed_dim": dcfg.embed_dim,
        },
        "files": {role: f"{role}.mlp" for role in _CHECKPOINT_ROLES},
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return d


def load_checkpoint(dirpath) -> tuple[dict[str, ParamTensor], dict]:
    """Load all four networks plus the manifest from a checkpoint directory."""
    d = Path(dirpath)
    manifest_path = d / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no checkpoint manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    params = {}
    for role, fname in manifest["files"].items():
        params[role], _, _ = load_params(d / fname)
    return params, manifest

"""Conditional denoising-diffusion actor.

Actions are drawn by running a short reverse chain x_K -> x_0: start from
Gaussian noise, and at each step k subtract the denoiser's noise prediction
(conditioned on the observation and a sinusoidal encoding of k) and inject
fresh Gaussian noise scaled by the posterior variance, except at the final
step.  Sampling can record a trace -- every state, injected noise and forward
tape -- so the critic's gradient at x_0 can be pushed back through all K
steps into the denoiser parameters, treating the recorded noises as
constants.

There is no noise-prediction reconstruction objective anywhere: the denoiser
is trained purely by reward maximization through the recorded chain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import ConfigError
from .nn import MlpSpec, ParamTensor, Tape, mlp_backward, mlp_forward

__all__ = [
    "DiffusionConfig",
    "NoiseSchedule",
    "SampleTrace",
    "make_schedule",
    "timestep_embedding",
    "forward_noise",
    "sample_action",
    "sample_action_batch",
    "replay_trace",
    "backprop_through_chain",
]


@dataclass
class DiffusionConfig:
    """Chain hyperparameters: K steps, beta bounds, step-embedding width.

    eval_chain_noise keeps the per-step Gaussian injection on during
    evaluation rollouts; by default only training chains are stochastic
    beyond the Gaussian start.
    """

    steps: int = 5
    beta_min: float = 0.1
    beta_max: float = 10.0
    embed_dim: int = 16
    eval_chain_noise: bool = False

    def validate(self) -> None:
        if self.steps < 1:
            raise ConfigError(f"diffusion.steps must be >= 1, got {self.steps}")
        if not (0.0 < self.beta_min < self.beta_max):
            raise ConfigError(
                f"need 0 < diffusion.beta_min < diffusion.beta_max, got "
                f"({self.beta_min}, {self.beta_max})"
            )
        if self.embed_dim <= 0 or self.embed_dim % 2 != 0:
            raise ConfigError(
                f"diffusion.embed_dim must be a positive even number, got {self.embed_dim}"
            )

    def schedule(self) -> "NoiseSchedule":
        return make_schedule(self.steps, self.beta_min, self.beta_max)


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step variance tables beta / alpha / alpha_bar / posterior_var, index 0 = k=1."""

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    posterior_var: np.ndarray

    @property
    def K(self) -> int:
        return self.beta.size


def make_schedule(K: int = 5, beta_min: float = 0.1, beta_max: float = 10.0) -> NoiseSchedule:
    """Variance-preserving exponential discretization.

    beta_k = 1 - exp(-beta_min/K - (beta_max - beta_min)(2k - 1)/(2 K^2)),
    k = 1..K.  With the defaults and K = 5 this leaves alpha_bar_K ~ 0.006,
    so the chain start is near-pure noise even at five steps.
    """
    if K < 1:
        raise ConfigError(f"diffusion.steps must be >= 1, got {K}")
    if not (0.0 < beta_min < beta_max):
        raise ConfigError(
            f"need 0 < beta_min < beta_max, got ({beta_min}, {beta_max})"
        )
    k = np.arange(1, K + 1, dtype=float)
    beta = 1.0 - np.exp(-beta_min / K - (beta_max - beta_min) * (2.0 * k - 1.0) / (2.0 * K * K))
    if np.any(beta <= 0.0) or np.any(beta >= 1.0):
        raise ConfigError("beta schedule left (0, 1); lower beta_max or raise K")
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    alpha_bar_prev = np.concatenate(([1.0], alpha_bar[:-1]))
    posterior_var = beta * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar)
    return NoiseSchedule(beta=beta, alpha=alpha, alpha_bar=alpha_bar,
                         posterior_var=posterior_var)


def timestep_embedding(k: int, dim: int = 16) -> np.ndarray:
    """Sinusoidal encoding of the denoising step index.

    pe[2i] = sin(k / 10000^(2i/dim)), pe[2i+1] = cos(k / 10000^(2i/dim)).
    """
    if dim % 2 != 0 or dim <= 0:
        raise ConfigError(f"embedding dim must be a positive even number, got {dim}")
    if k < 0:
        raise ValueError(f"step index must be >= 0, got {k}")
    i = np.arange(dim // 2, dtype=float)
    angles = k / np.power(10000.0, 2.0 * i / dim)
    pe = np.empty(dim)
    pe[0::2] = np.sin(angles)
    pe[1::2] = np.cos(angles)
    return pe


def forward_noise(x0, k: int, schedule: NoiseSchedule, eps) -> np.ndarray:
    """Closed-form forward marginal x_k = sqrt(abar_k) x0 + sqrt(1-abar_k) eps.

    Diagnostic only; training never uses the forward process.
    """
    if not 1 <= k <= schedule.K:
        raise ValueError(f"k must be in 1..{schedule.K}, got {k}")
    abar = schedule.alpha_bar[k - 1]
    return np.sqrt(abar) * np.asarray(x0, dtype=float) + np.sqrt(1.0 - abar) * np.asarray(eps, dtype=float)


@dataclass
class SampleTrace:
    """Recorded reverse chain, step-major: index j corresponds to k = K - j.

    states[j] = x_{K-j} (so states[0] is the Gaussian start and states[-1]
    the action), noises[j] = injected z consumed by step k = K - j, eps_hat[j]
    the denoiser outputs, tapes[j] the forward tapes.  Arrays carry a batch
    axis even for single-observation samples.
    """

    states: np.ndarray  # (K+1, B, action_dim)
    noises: np.ndarray  # (K, B, action_dim); last row is zeros (z_1 := 0)
    eps_hat: np.ndarray  # (K, B, action_dim)
    tapes: list[Tape]
    obs: np.ndarray  # (B, obs_dim), as fed to the denoiser
    single: bool


def _embedding_table(schedule: NoiseSchedule, dim: int, dtype) -> np.ndarray:
    table = np.empty((schedule.K, dim))
    for k in range(1, schedule.K + 1):
        table[k - 1] = timestep_embedding(k, dim)
    return table.astype(dtype)


def _reverse_step(x, eps_hat, z, k: int, schedule: NoiseSchedule):
    """Shared arithmetic for sampling and replay so replay is bit-identical."""
    i = k - 1
    coef = schedule.beta[i] / np.sqrt(1.0 - schedule.alpha_bar[i])
    x_prev = (x - coef * eps_hat) / np.sqrt(schedule.alpha[i])
    if k > 1:
        x_prev = x_prev + np.sqrt(schedule.posterior_var[i]) * z
    return x_prev


def _denoiser_dims(spec: MlpSpec, obs_dim: int) -> tuple[int, int]:
    action_dim = spec.out_dim
    embed_dim = spec.in_dim - action_dim - obs_dim
    if embed_dim <= 0 or embed_dim % 2 != 0:
        raise ConfigError(
            f"denoiser input width {spec.in_dim} does not decompose into "
            f"action ({action_dim}) + observation ({obs_dim}) + even embedding"
        )
    return action_dim, embed_dim


def sample_action_batch(obs, params: ParamTensor, spec: MlpSpec,
                        schedule: NoiseSchedule, rng: np.random.Generator,
                        record: bool = False, chain_noise: float = 1.0):
    """Run the reverse chain for a batch of observations.

    Returns (raw_actions, trace-or-None).  `chain_noise` scales the injected
    per-step Gaussian noise (1 = stochastic chain, 0 = deterministic chain
    apart from the Gaussian start); the final step never injects noise.
    """
    obs = np.asarray(obs, dtype=params.dtype)
    single = obs.ndim == 1
    if single:
        obs = obs[None, :]
    action_dim, embed_dim = _denoiser_dims(spec, obs.shape[1])
    emb = _embedding_table(schedule, embed_dim, params.dtype)
    B = obs.shape[0]
    K = schedule.K

    x = rng.standard_normal((B, action_dim), dtype=params.dtype)
    states = np.empty((K + 1, B, action_dim), dtype=params.dtype) if record else None
    noises = np.zeros((K, B, action_dim), dtype=params.dtype) if record else None
    eps_all = np.empty((K, B, action_dim), dtype=params.dtype) if record else None
    tapes: list[Tape] = []
    if record:
        states[0] = x

    for j, k in enumerate(range(K, 0, -1)):
        inp = np.concatenate(
            (x, obs, np.broadcast_to(emb[k - 1], (B, embed_dim))), axis=1
        )
        eps_hat, tape = mlp_forward(params, spec, inp)
        if k > 1 and chain_noise > 0.0:
            z = chain_noise * rng.standard_normal((B, action_dim), dtype=params.dtype)
        else:
            z = np.zeros((B, action_dim), dtype=params.dtype)
        x = _reverse_step(x, eps_hat, z, k, schedule)
        if record:
            states[j + 1] = x
            noises[j] = z
            eps_all[j] = eps_hat
            tapes.append(tape)

    trace = None
    if record:
        trace = SampleTrace(states=states, noises=noises, eps_hat=eps_all,
                            tapes=tapes, obs=obs, single=single)
    return (x[0] if single else x), trace


def sample_action(obs, params: ParamTensor, spec: MlpSpec, schedule: NoiseSchedule,
                  rng: np.random.Generator, record: bool = False,
                  chain_noise: float = 1.0):
    """Single-observation reverse-chain sample; see sample_action_batch."""
    return sample_action_batch(obs, params, spec, schedule, rng,
                               record=record, chain_noise=chain_noise)


def replay_trace(trace: SampleTrace, params: ParamTensor, spec: MlpSpec,
                 schedule: NoiseSchedule) -> np.ndarray:
    """Re-run the chain from the recorded start and noises; bit-identical x_0."""
    if len(trace.tapes) != schedule.K:
        raise ValueError(
            f"trace has {len(trace.tapes)} steps but schedule has K={schedule.K}"
        )
    action_dim, embed_dim = _denoiser_dims(spec, trace.obs.shape[1])
    emb = _embedding_table(schedule, embed_dim, params.dtype)
    B = trace.obs.shape[0]
    x = trace.states[0]
    for j, k in enumerate(range(schedule.K, 0, -1)):
        inp = np.concatenate(
            (x, trace.obs, np.broadcast_to(emb[k - 1], (B, embed_dim))), axis=1
        )
        eps_hat, _ = mlp_forward(params, spec, inp)
        x = _reverse_step(x, eps_hat, trace.noises[j], k, schedule)
    return x[0] if trace.single else x


def backprop_through_chain(trace: SampleTrace, schedule: NoiseSchedule,
                           params: ParamTensor, spec: MlpSpec,
                           d_loss_d_x0) -> np.ndarray:
    """Chain rule through all K reverse steps, recorded noises held constant.

    Accumulates denoiser parameter grads and returns d loss / d x_K.  Each
    step contributes through two paths: the direct linear term x_k / sqrt(a_k)
    and the denoiser evaluated at x_k.
    """
    if len(trace.tapes) != schedule.K:
        raise ValueError(
            f"trace has {len(trace.tapes)} steps but schedule has K={schedule.K}"
        )
    g = np.asarray(d_loss_d_x0, dtype=params.dtype)
    if trace.single and g.ndim == 1:
        g = g[None, :]
    action_dim = spec.out_dim
    # Walk steps in reverse execution order: j = K-1 is the x_1 -> x_0 step.
    for j in range(schedule.K - 1, -1, -1):
        k = schedule.K - j
        i = k - 1
        inv = 1.0 / np.sqrt(schedule.alpha[i])
        coef = schedule.beta[i] / np.sqrt(1.0 - schedule.alpha_bar[i])
        gin = mlp_backward(params, spec, trace.tapes[j], (-coef * inv) * g)
        g = inv * g + gin[:, :action_dim]
    return g[0] if trace.single else g

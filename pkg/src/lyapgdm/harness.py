"""Experiment orchestration: train, evaluate, and sweep runs with CSV outputs.

Every run writes into its own output directory: metrics.csv plus periodic
checkpoints for training, trace.csv with a commented summary footer for
evaluation, sweep.csv with one summary row per swept value.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .config import RunConfig, parse_config, serialize_config
from .env import ConfigError
from .metrics import MetricsWriter, TraceWriter, write_sweep_csv
from .trainer import (
    AGENT_KINDS,
    LEARNED_KINDS,
    load_checkpoint,
    make_policy,
    rollout_episode,
    save_checkpoint,
    train_run,
)

__all__ = ["run_train", "run_eval", "run_sweep"]


def run_train(cfg: RunConfig, out_dir=None) -> dict:
    """Train the configured agent; returns paths to the metrics CSV and final checkpoint."""
    kind = cfg.experiment.agent
    if kind not in AGENT_KINDS:
        raise ConfigError(
            f"experiment.agent must be one of {AGENT_KINDS} for training, got {kind!r}"
        )
    out = Path(out_dir if out_dir is not None else cfg.experiment.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.csv"
    ckpt_root = out / "checkpoints"
    seed = cfg.trainer.seed
    every = cfg.experiment.checkpoint_every

    with MetricsWriter(metrics_path) as writer:

        def on_episode(m, nets):
            writer.write(m)
            done = m.episode + 1
            if done % every == 0 and done < cfg.trainer.episodes:
                save_checkpoint(nets, ckpt_root / f"ep_{done:06d}", episode=done,
                                seed=seed, env_cfg=cfg.env, dcfg=cfg.diffusion)

        metrics, nets = train_run(cfg.env, cfg.trainer, cfg.diffusion, kind,
                                  on_episode=on_episode)

    final = save_checkpoint(nets, ckpt_root / "final", episode=len(metrics),
                            seed=seed, env_cfg=cfg.env, dcfg=cfg.diffusion)
    return {"metrics": metrics_path, "checkpoint": final, "out": out}


def run_eval(cfg: RunConfig, checkpoint=None, out_dir=None, agent=None) -> dict:
    """Roll eval episodes with the chosen policy; write trace.csv plus summary footer."""
    kind = agent if agent is not None else cfg.experiment.agent
    actor = None
    if kind in LEARNED_KINDS:
        if checkpoint is None:
            raise ConfigError(f"eval of {kind} needs --checkpoint")
        params, manifest = load_checkpoint(checkpoint)
        if manifest.get("kind") != kind:
            raise ConfigError(
                f"checkpoint holds a {manifest.get('kind')!r} agent, not {kind!r}"
            )
        actor = params["actor"]
    policy = make_policy(kind, cfg.env, cfg.diffusion, actor)

    out = Path(out_dir if out_dir is not None else cfg.experiment.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace_path = out / "trace.csv"
    rng = np.random.default_rng(cfg.trainer.seed)

    slot_rates, slot_energy, slot_rewards, final_queues = [], [], [], []
    with TraceWriter(trace_path, cfg.env.n_devices) as writer:
        for ep in range(cfg.experiment.eval_episodes):
            writer.start_episode(ep)
            infos = rollout_episode(policy, cfg.env, rng)
            for info in infos:
                writer.write_slot(info)
                slot_rates.append(info.rate_total_mbps)
                slot_energy.append(info.energy_j)
                slot_rewards.append(info.reward)
            final_queues.append(infos[-1].queue)
        summary = {
            "rate_mean_mbps": float(np.mean(slot_rates)),
            "energy_mean_j": float(np.mean(slot_energy)),
            "queue_final_mean": float(np.mean(final_queues)),
            "reward_mean": float(np.mean(slot_rewards)),
        }
        writer.write_summary(summary)
    return {"trace": trace_path, "summary": summary, "out": out}


def run_sweep(cfg: RunConfig, param=None, values=None, mode=None,
              checkpoint=None, out_dir=None) -> dict:
    """Train or evaluate once per parameter value; one summary row per value."""
    param = param if param is not None else cfg.experiment.sweep_param
    values = tuple(values) if values is not None else cfg.experiment.sweep_values
    mode = mode if mode is not None else cfg.experiment.sweep_mode
    if not values:
        raise ConfigError("sweep needs at least one value")
    if mode not in ("eval", "train"):
        raise ConfigError(f"sweep mode must be eval or train, got {mode!r}")

    out = Path(out_dir if out_dir is not None else cfg.experiment.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base_text = serialize_config(cfg)
    rows = []
    for value in values:
        # Round-trip through the parser so unknown/invalid keys fail by name.
        cfg_v = parse_config(base_text, overrides={param: repr(float(value))})
        subdir = out / f"{param.replace('.', '_')}_{value:g}"
        if mode == "train":
            trained = run_train(cfg_v, out_dir=subdir)
            result = run_eval(cfg_v, checkpoint=trained["checkpoint"], out_dir=subdir)
        else:
            result = run_eval(cfg_v, checkpoint=checkpoint, out_dir=subdir)
        rows.append({"value": float(value), **result["summary"]})

    sweep_path = out / "sweep.csv"
    write_sweep_csv(sweep_path, param, rows)
    return {"sweep": sweep_path, "rows": rows, "out": out}

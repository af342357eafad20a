"""CSV schemas for training metrics, evaluation traces, and sweep summaries.

All files are UTF-8, comma-separated, `.` decimal point, mandatory header
row, comment/footer lines prefixed with `#`.  Floats are written with
repr(), which round-trips exactly and never consults the locale.  The only
column excluded from byte-determinism guarantees is wall_ms.
"""

from __future__ import annotations

import csv
import math
from dataclasses import fields as dataclass_fields
from pathlib import Path

import numpy as np

from .env import EnvConfig
from .trainer import EpisodeMetrics

__all__ = [
    "TRAIN_COLUMNS",
    "SWEEP_COLUMNS",
    "trace_columns",
    "MetricsWriter",
    "TraceWriter",
    "write_sweep_csv",
    "read_csv_columns",
    "read_metrics_csv",
    "read_trace_csv",
    "read_sweep_csv",
    "validate_trace",
    "strip_wall_ms",
]

TRAIN_COLUMNS = (
    "episode", "reward_mean", "dpp_mean", "rate_mean_mbps", "energy_mean_j",
    "queue_final", "actor_loss", "critic_loss", "steps", "wall_ms",
)

SWEEP_COLUMNS = (
    "param", "value", "rate_mean_mbps", "energy_mean_j", "queue_final_mean",
    "reward_mean",
)

_INT_COLUMNS = {"episode", "steps", "t"}


def trace_columns(n_devices: int) -> tuple[str, ...]:
    bands = tuple(f"b{i + 1}" for i in range(n_devices))
    return ("t", "x", "y", "vx", "vy") + bands + (
        "rate_mbps", "energy_j", "queue", "reward",
    )


def _fmt(name: str, value) -> str:
    if name in _INT_COLUMNS:
        return str(int(value))
    return repr(float(value))


class MetricsWriter:
    """Streams one training CSV row per episode."""

    def __init__(self, path):
        self.path = Path(path)
        self._f = open(self.path, "w", newline="")
        self._w = csv.writer(self._f, lineterminator="\n")
        self._w.writerow(TRAIN_COLUMNS)

    def write(self, m: EpisodeMetrics) -> None:
        row = {f.name: getattr(m, f.name) for f in dataclass_fields(m)}
        self._w.writerow([_fmt(c, row[c]) for c in TRAIN_COLUMNS])
        self._f.flush()

    def close(self) -> None:
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class TraceWriter:
    """Per-slot evaluation rows, episodes separated by `# episode i` comments,
    with a commented summary footer."""

    def __init__(self, path, n_devices: int):
        self.path = Path(path)
        self.columns = trace_columns(n_devices)
        self._f = open(self.path, "w", newline="")
        self._w = csv.writer(self._f, lineterminator="\n")
        self._w.writerow(self.columns)

    def start_episode(self, index: int) -> None:
        self._f.write(f"# episode {index}\n")

    def write_slot(self, info) -> None:
        vals = (
            [info.t, info.position[0], info.position[1],
             info.velocity[0], info.velocity[1]]
            + list(info.ratios)
            + [info.rate_total_mbps, info.energy_j, info.queue, info.reward]
        )
        self._w.writerow([_fmt(c, v) for c, v in zip(self.columns, vals)])

    def write_summary(self, summary: dict) -> None:
        for key, value in summary.items():
            self._f.write(f"# {key}={_fmt(key, value)}\n")

    def close(self) -> None:
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_sweep_csv(path, param: str, rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([param] + [_fmt(c, r[c]) for c in SWEEP_COLUMNS[1:]])


def read_csv_columns(path, expected_header: tuple[str, ...]) -> dict[str, np.ndarray]:
    """Validating reader: exact header, numeric fields, finite values.

    Comment lines are skipped.  Errors name the offending row.
    """
    path = Path(path)
    columns: dict[str, list[float]] = {c: [] for c in expected_header}
    with open(path, newline="") as f:
        header = None
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = next(csv.reader([line]))
            if header is None:
                header = tuple(parts)
                if header != tuple(expected_header):
                    raise ValueError(
                        f"{path}:{lineno}: header {header} does not match "
                        f"expected {tuple(expected_header)}"
                    )
                continue
            if len(parts) != len(expected_header):
                raise ValueError(
                    f"{path}:{lineno}: expected {len(expected_header)} fields, "
                    f"got {len(parts)}"
                )
            for c, p in zip(expected_header, parts):
                try:
                    v = float(p)
                except ValueError as e:
                    raise ValueError(f"{path}:{lineno}: bad value {p!r} in {c}") from e
                if not math.isfinite(v):
                    raise ValueError(f"{path}:{lineno}: non-finite value in {c}")
                columns[c].append(v)
        if header is None:
            raise ValueError(f"{path}: missing header row")
    return {c: np.asarray(v) for c, v in columns.items()}


def read_metrics_csv(path) -> dict[str, np.ndarray]:
    return read_csv_columns(path, TRAIN_COLUMNS)


def read_trace_csv(path, n_devices: int = 3):
    """Returns (per-episode list of column dicts, summary dict from the footer)."""
    path = Path(path)
    cols = trace_columns(n_devices)
    episodes: list[dict[str, np.ndarray]] = []
    current: list[list[float]] = []
    summary: dict[str, float] = {}

    def flush():
        if current:
            arr = np.asarray(current)
            episodes.append({c: arr[:, i] for i, c in enumerate(cols)})
            current.clear()

    with open(path, newline="") as f:
        header = None
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("episode "):
                    flush()
                elif "=" in body:
                    key, _, value = body.partition("=")
                    summary[key.strip()] = float(value)
                continue
            parts = next(csv.reader([line]))
            if header is None:
                header = tuple(parts)
                if header != cols:
                    raise ValueError(
                        f"{path}:{lineno}: header {header} does not match {cols}"
                    )
                continue
            if len(parts) != len(cols):
                raise ValueError(
                    f"{path}:{lineno}: expected {len(cols)} fields, got {len(parts)}"
                )
            try:
                current.append([float(p) for p in parts])
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: non-numeric field") from e
        if header is None:
            raise ValueError(f"{path}: missing header row")
    flush()
    return episodes, summary


def read_sweep_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = tuple(next(reader))
        if header != SWEEP_COLUMNS:
            raise ValueError(f"{path}: header {header} does not match {SWEEP_COLUMNS}")
        for parts in reader:
            if not parts or parts[0].startswith("#"):
                continue
            row = {"param": parts[0]}
            for c, p in zip(SWEEP_COLUMNS[1:], parts[1:]):
                row[c] = float(p)
            rows.append(row)
    return rows


def validate_trace(episodes: list[dict], cfg: EnvConfig, tol: float = 1e-9) -> None:
    """Check every trace row against the environment invariants."""
    for i, ep in enumerate(episodes):
        n = ep["t"].size
        if n != cfg.horizon:
            raise ValueError(f"episode {i}: {n} slots, expected {cfg.horizon}")
        if not np.array_equal(ep["t"], np.arange(1, n + 1)):
            raise ValueError(f"episode {i}: slot indices are not 1..T")
        if np.any(ep["x"] < -tol) or np.any(ep["x"] > cfg.area_x + tol) \
                or np.any(ep["y"] < -tol) or np.any(ep["y"] > cfg.area_y + tol):
            raise ValueError(f"episode {i}: position left the area")
        speed = np.hypot(ep["vx"], ep["vy"])
        if np.any(speed > cfg.v_max + tol):
            raise ValueError(f"episode {i}: speed exceeds v_max")
        ratios = np.stack([ep[f"b{j + 1}"] for j in range(cfg.n_devices)], axis=1)
        if np.any(ratios < -tol) or np.any(np.abs(ratios.sum(axis=1) - 1.0) > tol):
            raise ValueError(f"episode {i}: bandwidth ratios are not a unit split")
        if np.any(ep["queue"] < -tol):
            raise ValueError(f"episode {i}: negative queue")
        final = np.array([ep["x"][-1] - cfg.dest[0], ep["y"][-1] - cfg.dest[1]])
        if np.linalg.norm(final) > cfg.v_max * cfg.dt + tol:
            raise ValueError(f"episode {i}: final position missed the destination")


def strip_wall_ms(csv_text: str) -> str:
    """Drop the wall_ms column so byte comparisons ignore timing jitter."""
    idx = TRAIN_COLUMNS.index("wall_ms")
    out = []
    for line in csv_text.splitlines():
        parts = line.split(",")
        if not line.startswith("#") and len(parts) == len(TRAIN_COLUMNS):
            del parts[idx]
        out.append(",".join(parts))
    return "\n".join(out) + "\n"

"""Minimal differentiable MLP kernel: forward, reverse-mode gradients, Adam.

Parameters live in one flat array per network with per-layer views, so the
optimizer, soft target updates, and gradient clipping are single vector ops.
Forward returns a tape; backward consumes it, accumulates parameter gradients
and returns the gradient with respect to the input, which is what lets the
critic's gradient flow through the denoising chain.

Inputs may be single vectors or (batch, dim) matrices; parameter gradients
are summed over the batch.

Checkpoint blob layout (little-endian):
    bytes 0..3    magic b"MLP1"
    bytes 4..7    uint32 header length H
    bytes 8..8+H  UTF-8 JSON header: {"layer_widths", "activation",
                  "output_activation", "dtype" ("<f4"|"<f8"), "count",
                  "seed", "extra"}
    remainder     `count` IEEE-754 values, layer-major, W row-major then bias
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ACTIVATIONS",
    "MlpSpec",
    "ParamTensor",
    "AdamState",
    "Tape",
    "mlp_init",
    "mlp_forward",
    "mlp_backward",
    "adam_step",
    "zero_grads",
    "clip_grad_norm",
    "finite_diff_check",
    "save_params",
    "load_params",
]

ACTIVATIONS = ("relu", "silu", "tanh", "identity")

_MAGIC = b"MLP1"


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths plus hidden/output activation names."""

    layer_widths: tuple[int, ...]
    activation: str = "relu"
    output_activation: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if len(self.layer_widths) < 2:
            raise ValueError("MlpSpec needs at least input and output widths")
        if any(w <= 0 for w in self.layer_widths):
            raise ValueError(f"layer widths must be positive, got {self.layer_widths}")
        for name in (self.activation, self.output_activation):
            if name not in ACTIVATIONS:
                raise ValueError(f"unknown activation {name!r}, expected one of {ACTIVATIONS}")

    @property
    def in_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def out_dim(self) -> int:
        return self.layer_widths[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    def layer_shapes(self) -> list[tuple[int, int]]:
        w = self.layer_widths
        return [(w[i], w[i + 1]) for i in range(self.n_layers)]

    def param_count(self) -> int:
        return sum(r * c + c for r, c in self.layer_shapes())


class ParamTensor:
    """Flat parameter and gradient storage with per-layer views.

    `version` increments on every in-place parameter update; tapes remember
    the version they were recorded against so a backward pass against stale
    parameters fails loudly.
    """

    def __init__(self, spec: MlpSpec, values: np.ndarray | None = None,
                 dtype=np.float64):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        n = spec.param_count()
        if values is None:
            values = np.zeros(n, dtype=self.dtype)
        else:
            values = np.ascontiguousarray(values, dtype=self.dtype)
            if values.shape != (n,):
                raise ValueError(f"expected {n} parameters, got shape {values.shape}")
        self.values = values
        self.grads = np.zeros(n, dtype=self.dtype)
        self.version = 0
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        self.weight_grads: list[np.ndarray] = []
        self.bias_grads: list[np.ndarray] = []
        off = 0
        for rows, cols in spec.layer_shapes():
            self.weights.append(self.values[off : off + rows * cols].reshape(rows, cols))
            self.weight_grads.append(self.grads[off : off + rows * cols].reshape(rows, cols))
            off += rows * cols
            self.biases.append(self.values[off : off + cols])
            self.bias_grads.append(self.grads[off : off + cols])
            off += cols

    @property
    def size(self) -> int:
        return self.values.size

    def copy(self) -> "ParamTensor":
        return ParamTensor(self.spec, self.values.copy(), dtype=self.dtype)

    def assign(self, values: np.ndarray) -> None:
        self.values[:] = values
        self.version += 1


@dataclass
class Tape:
    """Forward-pass record: layer inputs and pre-activations, batch-major."""

    layer_inputs: list  # a_{l-1} fed into layer l; [0] is the network input
    pre: list  # z_l per layer
    outputs: list  # activation outputs per layer; [-1] is the network output
    single: bool
    version: int


def mlp_init(spec: MlpSpec, seed: int, dtype=np.float64) -> ParamTensor:
    """Glorot-uniform weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    params = ParamTensor(spec, dtype=dtype)
    for W, b in zip(params.weights, params.biases):
        fan_in, fan_out = W.shape
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        W[:] = rng.uniform(-lim, lim, size=W.shape)
        b[:] = 0.0
    return params


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "silu":
        return z / (1.0 + np.exp(-z))
    if name == "tanh":
        return np.tanh(z)
    return z


def _activate_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    if name == "silu":
        s = 1.0 / (1.0 + np.exp(-z))
        return s * (1.0 + z * (1.0 - s))
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


def mlp_forward(params: ParamTensor, spec: MlpSpec, x) -> tuple[np.ndarray, Tape]:
    """Dense forward pass; returns (output, tape) for a later backward call."""
    x = np.asarray(x, dtype=params.dtype)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.in_dim:
        raise ValueError(f"input must have width {spec.in_dim}, got shape {x.shape}")
    inputs, pre, outputs = [x], [], []
    a = x
    last = spec.n_layers - 1
    for i in range(spec.n_layers):
        z = a @ params.weights[i] + params.biases[i]
        name = spec.output_activation if i == last else spec.activation
        a = _activate(name, z)
        pre.append(z)
        outputs.append(a)
        if i != last:
            inputs.append(a)
    tape = Tape(layer_inputs=inputs, pre=pre, outputs=outputs, single=single,
                version=params.version)
    y = outputs[-1]
    return (y[0] if single else y), tape


def mlp_backward(params: ParamTensor, spec: MlpSpec, tape: Tape, output_grad,
                 accumulate: bool = True) -> np.ndarray:
    """Reverse pass: accumulate parameter grads, return gradient w.r.t. input.

    `accumulate=False` skips the parameter-gradient GEMMs (used when only the
    input gradient is needed, e.g. differentiating a frozen critic w.r.t. its
    action input).
    """
    if tape.version != params.version:
        raise RuntimeError(
            "stale tape: parameters were updated after this forward pass"
        )
    g = np.asarray(output_grad, dtype=params.dtype)
    if tape.single:
        g = g[None, :]
    if g.shape != tape.outputs[-1].shape:
        raise ValueError(
            f"output_grad shape {g.shape} does not match output {tape.outputs[-1].shape}"
        )
    last = spec.n_layers - 1
    delta = g * _activate_grad(
        spec.output_activation, tape.pre[last], tape.outputs[last]
    )
    for i in range(last, -1, -1):
        if accumulate:
            params.weight_grads[i] += tape.layer_inputs[i].T @ delta
            params.bias_grads[i] += delta.sum(axis=0)
        gin = delta @ params.weights[i].T
        if i > 0:
            delta = gin * _activate_grad(spec.activation, tape.pre[i - 1],
                                         tape.outputs[i - 1])
    return gin[0] if tape.single else gin


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ParamTensor, lr: float) -> "AdamState":
        return cls(
            m=np.zeros(params.size, dtype=params.dtype),
            v=np.zeros(params.size, dtype=params.dtype),
            lr=lr,
        )


def adam_step(params: ParamTensor, adam: AdamState) -> None:
    """One bias-corrected Adam step from params.grads; grads are left untouched."""
    if adam.m.shape != params.values.shape:
        raise ValueError("AdamState does not match parameter count")
    adam.step_count += 1
    g = params.grads
    adam.m *= adam.beta1
    adam.m += (1.0 - adam.beta1) * g
    adam.v *= adam.beta2
    adam.v += (1.0 - adam.beta2) * (g * g)
    bc1 = 1.0 - adam.beta1**adam.step_count
    bc2 = 1.0 - adam.beta2**adam.step_count
    params.values -= (adam.lr / bc1) * adam.m / (np.sqrt(adam.v / bc2) + adam.eps)
    params.version += 1


def zero_grads(params: ParamTensor) -> None:
    params.grads[:] = 0.0


def clip_grad_norm(params: ParamTensor, max_norm: float) -> float:
    """Scale grads so their global L2 norm is at most max_norm; returns the pre-clip norm."""
    norm = float(np.linalg.norm(params.grads))
    if norm > max_norm and norm > 0.0:
        params.grads *= max_norm / norm
    return norm


def finite_diff_check(params: ParamTensor, spec: MlpSpec, input, loss_fn,
                      tolerance: float | None = None, n_coords: int = 120,
                      h: float = 1e-5, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference parameter grads.

    `loss_fn` maps the network output to a scalar; it may instead return a
    (loss, dloss_doutput) pair to supply the output gradient analytically.
    Otherwise the output gradient itself is obtained by central differences
    on the (low-dimensional) output.  Checks a random subsample of at least
    `n_coords` parameter coordinates.  Raises if `tolerance` is given and
    exceeded.
    """

    def evaluate(y):
        out = loss_fn(y)
        return out if isinstance(out, tuple) else (out, None)

    y, tape = mlp_forward(params, spec, input)
    loss0, gy = evaluate(y)
    if gy is None:
        gy = np.zeros_like(np.atleast_1d(y))
        flat = np.atleast_1d(y).copy()
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + 1e-6
            lp, _ = evaluate(flat.reshape(np.shape(y)))
            flat[j] = orig - 1e-6
            lm, _ = evaluate(flat.reshape(np.shape(y)))
            flat[j] = orig
            gy[j] = (lp - lm) / 2e-6
        gy = gy.reshape(np.shape(y))

    saved = params.grads.copy()
    zero_grads(params)
    mlp_backward(params, spec, tape, gy)
    analytic = params.grads.copy()
    params.grads[:] = saved

    rng = np.random.default_rng(seed)
    n = min(params.size, max(n_coords, 100))
    idx = rng.choice(params.size, size=n, replace=False)
    max_err = 0.0
    for i in idx:
        orig = params.values[i]
        params.values[i] = orig + h
        lp, _ = evaluate(mlp_forward(params, spec, input)[0])
        params.values[i] = orig - h
        lm, _ = evaluate(mlp_forward(params, spec, input)[0])
        params.values[i] = orig
        fd = (lp - lm) / (2.0 * h)
        err = abs(analytic[i] - fd) / max(abs(analytic[i]), abs(fd), 1e-6)
        max_err = max(max_err, err)
    if tolerance is not None and max_err > tolerance:
        raise AssertionError(
            f"gradient check failed: max relative error {max_err:.3e} > {tolerance:.3e}"
        )
    return max_err


def save_params(params: ParamTensor, path, seed: int | None = None,
                extra: dict | None = None) -> None:
    """Write the documented MLP1 blob (JSON header + little-endian values)."""
    spec = params.spec
    header = {
        "layer_widths": list(spec.layer_widths),
        "activation": spec.activation,
        "output_activation": spec.output_activation,
        "dtype": "<f4" if params.dtype == np.float32 else "<f8",
        "count": int(params.size),
        "seed": seed,
        "extra": extra or {},
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(np.array(len(raw), dtype="<u4").tobytes())
        f.write(raw)
        f.write(params.values.astype(header["dtype"]).tobytes())


def load_params(path) -> tuple[ParamTensor, MlpSpec, dict]:
    """Read an MLP1 blob back into a ParamTensor; returns (params, spec, header)."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _MAGIC:
        raise ValueError(f"{path}: not an MLP1 parameter blob")
    hlen = int(np.frombuffer(blob[4:8], dtype="<u4")[0])
    header = json.loads(blob[8 : 8 + hlen].decode("utf-8"))
    spec = MlpSpec(
        layer_widths=tuple(header["layer_widths"]),
        activation=header["activation"],
        output_activation=header["output_activation"],
    )
    dtype = np.float32 if header["dtype"] == "<f4" else np.float64
    values = np.frombuffer(blob[8 + hlen :], dtype=header["dtype"]).astype(dtype)
    if values.size != header["count"] or values.size != spec.param_count():
        raise ValueError(f"{path}: parameter count mismatch")
    return ParamTensor(spec, values, dtype=dtype), spec, header

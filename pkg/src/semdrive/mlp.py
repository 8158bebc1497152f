"""Fully-connected Q-network in numpy: forward, exact backprop, RMSProp.

Parameters are a list of ``(W, b)`` pairs with ``W`` shaped ``(fan_in, fan_out)``.
Hidden layers use ReLU, the output layer is linear. Arithmetic is float64.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

HIDDEN = (512, 512, 256, 64)
N_OUTPUTS = 5


@dataclass
class NetworkParams:
    layers: list[tuple[np.ndarray, np.ndarray]]

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0][0].shape[0]] + [w.shape[1] for w, _ in self.layers]

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[0]

    def copy(self) -> "NetworkParams":
        return NetworkParams([(w.copy(), b.copy()) for w, b in self.layers])

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in self.layers:
            out += [w, b]
        return out


@dataclass
class OptimizerState:
    mean_square: list[np.ndarray]
    lr: float = 1e-5
    decay: float = 0.95
    eps: float = 1e-8
    steps: int = 0

    @classmethod
    def for_params(cls, params: NetworkParams, lr=1e-5, decay=0.95, eps=1e-8) -> "OptimizerState":
        return cls([np.zeros_like(a) for a in params.arrays()], lr, decay, eps)


def init(input_dim: int, seed: int, hidden=HIDDEN, n_out: int = N_OUTPUTS) -> NetworkParams:
    """Uniform fan-in initialization (He range for ReLU layers), zero biases."""
    if input_dim <= 0:
        raise ValueError("input_dim must be positive")
    rng = np.random.default_rng(seed)
    sizes = [input_dim, *hidden, n_out]
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        gain = 3.0 if i == len(sizes) - 2 else 6.0
        limit = np.sqrt(gain / fan_in)
        layers.append((rng.uniform(-limit, limit, (fan_in, fan_out)), np.zeros(fan_out)))
    return NetworkParams(layers)


def _check_input(params: NetworkParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.input_dim:
        raise ValueError(f"input has {x.shape[-1]} features, network expects {params.input_dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite network input")
    return x


def forward(params: NetworkParams, x: np.ndarray) -> np.ndarray:
    """Q-values for a single input (1-D) or a batch (2-D)."""
    h = _check_input(params, x)
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        h = h @ w + b
        if i < last:
            np.maximum(h, 0.0, out=h)
    return h


def _forward_cache(params: NetworkParams, x: np.ndarray) -> list[np.ndarray]:
    acts = [x]
    h = x
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts


def huber(err: np.ndarray, delta: float = 1.0) -> np.ndarray:
    a = np.abs(err)
    return np.where(a <= delta, 0.5 * err * err, delta * (a - 0.5 * delta))


def loss(params: NetworkParams, x, actions, targets, delta: float = 1.0) -> float:
    x = np.atleast_2d(_check_input(params, x))
    q = forward(params, x)
    idx = np.arange(len(x))
    return float(np.mean(huber(q[idx, np.atleast_1d(actions)] - np.atleast_1d(targets), delta)))


def backward(params: NetworkParams, x, actions, targets, delta: float = 1.0) -> tuple[list[np.ndarray], float]:
    """Gradients of the mean Huber loss between Q(x)[action] and the target.

    Accepts one sample (1-D ``x``, scalar action/target) or a batch. Returns the
    gradients in ``params.arrays()`` order and the loss value.
    """
    x = np.atleast_2d(_check_input(params, x))
    actions = np.atleast_1d(np.asarray(actions, dtype=np.int64))
    targets = np.atleast_1d(np.asarray(targets, dtype=np.float64))
    n = len(x)
    acts = _forward_cache(params, x)
    q = acts[-1]
    idx = np.arange(n)
    err = q[idx, actions] - targets
    loss_value = float(np.mean(huber(err, delta)))

    grad_out = np.zeros_like(q)
    grad_out[idx, actions] = np.clip(err, -delta, delta) / n
    grads: list[np.ndarray] = []
    g = grad_out
    for i in range(len(params.layers) - 1, -1, -1):
        w, _ = params.layers[i]
        h_in = acts[i]
        grads.append(g.sum(axis=0))
        grads.append(h_in.T @ g)
        if i > 0:
            g = (g @ w.T) * (acts[i] > 0)
    grads.reverse()  # now W0, b0, W1, b1, ...
    return grads, loss_value


def rmsprop_step(params: NetworkParams, state: OptimizerState, grads: list[np.ndarray]) -> None:
    """In-place RMSProp update: ms <- d*ms + (1-d)*g^2; p <- p - lr*g/sqrt(ms + eps)."""
    arrays = params.arrays()
    if len(grads) != len(arrays):
        raise ValueError("gradient list does not match parameters")
    d = state.decay
    for p, ms, g in zip(arrays, state.mean_square, grads):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        # in-place to keep the update memory-bound pass count low
        tmp = np.multiply(g, g)
        tmp *= 1.0 - d
        ms *= d
        ms += tmp
        np.add(ms, state.eps, out=tmp)
        np.sqrt(tmp, out=tmp)
        np.divide(g, tmp, out=tmp)
        tmp *= state.lr
        p -= tmp
    state.steps += 1


def copy_into(dst: NetworkParams, src: NetworkParams) -> None:
    for (wd, bd), (ws, bs) in zip(dst.layers, src.layers):
        wd[...] = ws
        bd[...] = bs


def digest(params: NetworkParams) -> str:
    import hashlib

    h = hashlib.sha256()
    for a in params.arrays():
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


# --- checkpoints -----------------------------------------------------------

MANIFEST = "manifest.txt"
WEIGHTS = "weights.bin"


def save_checkpoint(params: NetworkParams, directory: str, meta: dict | None = None) -> None:
    """Write ``manifest.txt`` (key=value) and ``weights.bin`` (<f4, layer order W0 b0 W1 b1 ...)."""
    os.makedirs(directory, exist_ok=True)
    entries = {
        "format": "semdrive-mlp-1",
        "layer_sizes": ",".join(str(n) for n in params.sizes),
        "activation": "relu",
        "output_activation": "linear",
        "input_dim": str(params.input_dim),
        "dtype": "float32-le",
        "order": "W0,b0,W1,b1,...; W row-major (fan_in, fan_out)",
    }
    for k, v in (meta or {}).items():
        entries[k] = str(v)
    blob = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in params.arrays())
    tmp = os.path.join(directory, WEIGHTS + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, os.path.join(directory, WEIGHTS))
    tmp = os.path.join(directory, MANIFEST + ".tmp")
    with open(tmp, "w") as fh:
        for k, v in entries.items():
            fh.write(f"{k}={v}\n")
    os.replace(tmp, os.path.join(directory, MANIFEST))


def read_manifest(directory: str) -> dict[str, str]:
    out = {}
    with open(os.path.join(directory, MANIFEST)) as fh:
        for line in fh:
            line = line.strip()
            if line and "=" in line:
                k, v = line.split("=", 1)
                out[k] = v
    return out


def load_checkpoint(directory: str) -> tuple[NetworkParams, dict[str, str]]:
    meta = read_manifest(directory)
    sizes = [int(n) for n in meta["layer_sizes"].split(",")]
    raw = np.fromfile(os.path.join(directory, WEIGHTS), dtype="<f4")
    expected = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
    if raw.size != expected:
        raise ValueError(f"checkpoint has {raw.size} values, manifest implies {expected}")
    layers = []
    pos = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = raw[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out).astype(np.float64)
        pos += fan_in * fan_out
        b = raw[pos : pos + fan_out].astype(np.float64)
        pos += fan_out
        layers.append((w, b))
    return NetworkParams(layers), meta

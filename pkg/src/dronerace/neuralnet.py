"""Minimal dense-network stack shared by policies, value functions, and
residual dynamics models.

Everything is plain float64 numpy: forward/backward passes are hand-rolled
(reverse-mode, verified against finite differences in the test suite), so
training is bitwise reproducible for a fixed seed and there is no framework
dependency.

Weight file format ("DRWF0001"):

    bytes 0..7    magic b"DRWF0001" (format version is part of the magic)
    bytes 8..11   uint32 little-endian: JSON header length H
    bytes 12..12+H  UTF-8 JSON header:
                    {"kind": str, "meta": {...},
                     "arrays": [{"name": str, "shape": [int, ...]}, ...]}
    remainder     the arrays' payloads, concatenated in manifest order,
                  little-endian IEEE-754 float64, C (row-major) order

The header makes files self-describing: layer sizes, activation, and input
normalization travel with the weights, so a fitted net loads without
out-of-band knowledge.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MAGIC = b"DRWF0001"

_ACTIVATIONS = ("relu", "tanh")


class WeightFileError(IOError):
    """Corrupt, truncated, or version-mismatched weight file."""


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    # a is the stored activation output for the same z
    if name == "relu":
        return np.where(z > 0.0, 1.0, 0.0)
    return 1.0 - a * a


@dataclass
class MlpNet:
    """Fully connected net: normalized input -> hidden (relu/tanh) -> linear out.

    weights[i] has shape (layer_sizes[i+1], layer_sizes[i]); biases[i] has
    shape (layer_sizes[i+1],). Input normalization is applied first:
    ``x_n = (x - input_offset) * input_scale``.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"
    input_offset: np.ndarray = field(default=None)  # type: ignore[assignment]
    input_scale: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {_ACTIVATIONS}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("weights and biases must be non-empty, equal length")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ValueError(f"layer {i}: W {W.shape} and b {b.shape} mismatch")
            if i > 0 and W.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(
                    f"layer {i}: input dim {W.shape[1]} does not chain from "
                    f"previous output {self.weights[i - 1].shape[0]}"
                )
        n_in = self.weights[0].shape[1]
        if self.input_offset is None:
            self.input_offset = np.zeros(n_in)
        if self.input_scale is None:
            self.input_scale = np.ones(n_in)
        self.input_offset = np.asarray(self.input_offset, dtype=float).reshape(n_in)
        self.input_scale = np.asarray(self.input_scale, dtype=float).reshape(n_in)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[0]

    def params(self) -> list[np.ndarray]:
        """Flat parameter list [W0, b0, W1, b1, ...] (live references)."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.append(W)
            out.append(b)
        return out

    def copy(self) -> "MlpNet":
        return MlpNet(
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
            self.input_offset.copy(),
            self.input_scale.copy(),
        )


def init_mlp(
    layer_sizes: Sequence[int],
    activation: str,
    rng: np.random.Generator,
    input_offset: np.ndarray | None = None,
    input_scale: np.ndarray | None = None,
    final_scale: float = 1.0,
) -> MlpNet:
    """Random MlpNet: He init for relu, Xavier for tanh, zero biases.

    final_scale multiplies the output layer's weights (small values keep a
    freshly initialized policy near the center of its action range).
    """
    if len(layer_sizes) < 2:
        raise ValueError("need at least input and output layer sizes")
    weights, biases = [], []
    for i in range(len(layer_sizes) - 1):
        fan_in, fan_out = layer_sizes[i], layer_sizes[i + 1]
        std = np.sqrt(2.0 / fan_in) if activation == "relu" else np.sqrt(1.0 / fan_in)
        W = rng.normal(0.0, std, size=(fan_out, fan_in))
        if i == len(layer_sizes) - 2:
            W *= final_scale
        weights.append(W)
        biases.append(np.zeros(fan_out))
    return MlpNet(weights, biases, activation, input_offset, input_scale)


def zero_mlp(
    layer_sizes: Sequence[int],
    activation: str = "tanh",
    input_offset: np.ndarray | None = None,
    input_scale: np.ndarray | None = None,
) -> MlpNet:
    """All-zero net; forward output is identically zero."""
    weights = [
        np.zeros((layer_sizes[i + 1], layer_sizes[i]))
        for i in range(len(layer_sizes) - 1)
    ]
    biases = [np.zeros(layer_sizes[i + 1]) for i in range(len(layer_sizes) - 1)]
    return MlpNet(weights, biases, activation, input_offset, input_scale)


def _layer_io(net: MlpNet, x: np.ndarray):
    """Forward pass keeping per-layer pre-activations and activations."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.n_in:
        raise ValueError(f"input dim {x.shape[-1]} != net input {net.n_in}")
    a = (x - net.input_offset) * net.input_scale
    acts = [a]  # activations entering each layer
    pre = []
    n_layers = len(net.weights)
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ W.T + b
        pre.append(z)
        a = z if i == n_layers - 1 else _act(net.activation, z)
        acts.append(a)
    return pre, acts


def forward(net: MlpNet, x: np.ndarray) -> np.ndarray:
    """Evaluate the net on x of shape (..., n_in) -> (..., n_out)."""
    _, acts = _layer_io(net, x)
    return acts[-1]


def backward(net: MlpNet, x: np.ndarray, grad_out: np.ndarray):
    """Exact reverse-mode gradients of ``forward`` at x.

    grad_out is dLoss/d(output), shape (..., n_out); parameter gradients are
    summed over any leading batch axes.

    Returns:
        (param_grads, grad_input): param_grads matches ``net.params()``
        order; grad_input is dLoss/dx with the input normalization chain
        included, shape like x.
    """
    grad_out = np.asarray(grad_out, dtype=float)
    pre, acts = _layer_io(net, x)
    if grad_out.shape != acts[-1].shape:
        raise ValueError(
            f"grad_out shape {grad_out.shape} != output shape {acts[-1].shape}"
        )
    batch_shape = grad_out.shape[:-1]
    flat = lambda a: a.reshape(int(np.prod(batch_shape) or 1), a.shape[-1])

    n_layers = len(net.weights)
    grads: list[np.ndarray] = [None] * (2 * n_layers)  # type: ignore[list-item]
    g = grad_out
    for i in range(n_layers - 1, -1, -1):
        if i < n_layers - 1:
            g = g * _act_grad(net.activation, pre[i], acts[i + 1])
        gf, af = flat(g), flat(acts[i])
        grads[2 * i] = gf.T @ af
        grads[2 * i + 1] = gf.sum(axis=0)
        g = g @ net.weights[i]
    grad_input = g * net.input_scale
    return grads, grad_input.reshape(np.asarray(x, dtype=float).shape)


LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class GaussianPolicy:
    """Diagonal-Gaussian policy with a learned per-dimension log std.

    The mean net's output is treated as a normalized command in [-1, 1] and
    mapped affinely onto [act_low, act_high]; the sampling distribution
    lives in action units with std = exp(log_std). Samples are clamped to
    the bounds after the log-probability is taken, so clamping never skews
    the stored distribution parameters.
    """

    mean_net: MlpNet
    log_std: np.ndarray
    act_low: np.ndarray
    act_high: np.ndarray

    def __post_init__(self):
        n_act = self.mean_net.n_out
        self.log_std = np.asarray(self.log_std, dtype=float).reshape(n_act)
        self.act_low = np.asarray(self.act_low, dtype=float).reshape(n_act)
        self.act_high = np.asarray(self.act_high, dtype=float).reshape(n_act)
        if np.any(self.act_low >= self.act_high):
            raise ValueError("act_low must be < act_high per dimension")
        if not np.all(np.isfinite(self.log_std)):
            raise ValueError("log_std must be finite")

    @property
    def n_obs(self) -> int:
        return self.mean_net.n_in

    @property
    def n_act(self) -> int:
        return self.mean_net.n_out

    @property
    def _center(self) -> np.ndarray:
        return 0.5 * (self.act_low + self.act_high)

    @property
    def _half(self) -> np.ndarray:
        return 0.5 * (self.act_high - self.act_low)

    def params(self) -> list[np.ndarray]:
        return self.mean_net.params() + [self.log_std]

    def mean(self, obs: np.ndarray) -> np.ndarray:
        """Distribution mean in action units (may exceed the bounds)."""
        return self._center + self._half * forward(self.mean_net, obs)

    def mean_clamped(self, obs: np.ndarray) -> np.ndarray:
        """Deterministic action: mean clamped into the bounds."""
        return np.clip(self.mean(obs), self.act_low, self.act_high)

    def sample(self, obs: np.ndarray, rng: np.random.Generator):
        """Draw an action; returns (clamped action, log-prob of raw draw)."""
        raw, _clamped, logp = self.sample_raw(obs, rng)
        return np.clip(raw, self.act_low, self.act_high), logp

    def sample_raw(self, obs: np.ndarray, rng: np.random.Generator):
        """Like sample() but also returns the unclamped draw (for training)."""
        mu = self.mean(obs)
        std = np.exp(self.log_std)
        raw = mu + std * rng.standard_normal(mu.shape)
        logp = self._log_prob_given_mean(raw, mu)
        return raw, np.clip(raw, self.act_low, self.act_high), logp

    def log_prob(self, obs: np.ndarray, action_raw: np.ndarray) -> np.ndarray:
        """Log density of unclamped actions under the current parameters."""
        return self._log_prob_given_mean(np.asarray(action_raw, dtype=float), self.mean(obs))

    def _log_prob_given_mean(self, raw: np.ndarray, mu: np.ndarray) -> np.ndarray:
        z = (raw - mu) / np.exp(self.log_std)
        return np.sum(-0.5 * z * z - self.log_std - 0.5 * LOG_2PI, axis=-1)

    def entropy(self) -> float:
        """Differential entropy (independent of the observation)."""
        return float(np.sum(self.log_std + 0.5 * (LOG_2PI + 1.0)))

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(
            self.mean_net.copy(), self.log_std.copy(),
            self.act_low.copy(), self.act_high.copy(),
        )


class Adam:
    """Adam over a list of parameter arrays, updated in place."""

    def __init__(self, params: list[np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if len(params) != len(self.m) or len(grads) != len(self.m):
            raise ValueError("parameter/gradient list length changed")
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


# ---------------------------------------------------------------------------
# Weight files
# ---------------------------------------------------------------------------

def save_arrays(path, kind: str, meta: dict, arrays: dict) -> None:
    """Write the DRWF0001 container (see module docstring for byte layout)."""
    manifest = [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()]
    header = json.dumps(
        {"kind": kind, "meta": meta, "arrays": manifest}, sort_keys=True
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for v in arrays.values():
            f.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_arrays(path):
    """Read a DRWF0001 container -> (kind, meta, {name: float64 array})."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(MAGIC) + 4:
        raise WeightFileError(f"{path}: truncated before header")
    if blob[: len(MAGIC)] != MAGIC:
        raise WeightFileError(
            f"{path}: bad magic {blob[:8]!r}, expected {MAGIC!r} (version mismatch?)"
        )
    (hlen,) = struct.unpack("<I", blob[len(MAGIC): len(MAGIC) + 4])
    off = len(MAGIC) + 4
    if len(blob) < off + hlen:
        raise WeightFileError(f"{path}: truncated inside header")
    try:
        header = json.loads(blob[off: off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise WeightFileError(f"{path}: unreadable header: {e}") from e
    off += hlen
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(int(s) for s in entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        if len(blob) < off + nbytes:
            raise WeightFileError(
                f"{path}: truncated payload for array {entry['name']!r}"
            )
        arr = np.frombuffer(blob[off: off + nbytes], dtype="<f8").astype(
            float, copy=True
        )
        arrays[entry["name"]] = arr.reshape(shape)
        off += nbytes
    if off != len(blob):
        raise WeightFileError(f"{path}: {len(blob) - off} trailing bytes")
    return header["kind"], header.get("meta", {}), arrays


def _net_arrays(net: MlpNet, prefix: str = "") -> dict:
    arrays = {}
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"{prefix}W{i}"] = W
        arrays[f"{prefix}b{i}"] = b
    arrays[f"{prefix}input_offset"] = net.input_offset
    arrays[f"{prefix}input_scale"] = net.input_scale
    return arrays


def _net_from_arrays(meta: dict, arrays: dict, prefix: str = "") -> MlpNet:
    sizes = meta["layer_sizes"]
    try:
        weights = [arrays[f"{prefix}W{i}"] for i in range(len(sizes) - 1)]
        biases = [arrays[f"{prefix}b{i}"] for i in range(len(sizes) - 1)]
        offset = arrays[f"{prefix}input_offset"]
        scale = arrays[f"{prefix}input_scale"]
    except KeyError as e:
        raise WeightFileError(f"missing array {e} for net {prefix!r}") from e
    net = MlpNet(list(weights), list(biases), meta["activation"], offset, scale)
    if net.layer_sizes != list(sizes):
        raise WeightFileError(
            f"declared layer sizes {sizes} do not match arrays {net.layer_sizes}"
        )
    return net


def save_net(net: MlpNet, path) -> None:
    save_arrays(
        path, "mlp",
        {"layer_sizes": net.layer_sizes, "activation": net.activation},
        _net_arrays(net),
    )


def load_net(path) -> MlpNet:
    kind, meta, arrays = load_arrays(path)
    if kind != "mlp":
        raise WeightFileError(f"{path}: expected kind 'mlp', found {kind!r}")
    return _net_from_arrays(meta, arrays)


def save_policy(policy: GaussianPolicy, path) -> None:
    arrays = _net_arrays(policy.mean_net)
    arrays["log_std"] = policy.log_std
    arrays["act_low"] = policy.act_low
    arrays["act_high"] = policy.act_high
    save_arrays(
        path, "gaussian_policy",
        {
            "layer_sizes": policy.mean_net.layer_sizes,
            "activation": policy.mean_net.activation,
        },
        arrays,
    )


def load_policy(path) -> GaussianPolicy:
    kind, meta, arrays = load_arrays(path)
    if kind != "gaussian_policy":
        raise WeightFileError(f"{path}: expected kind 'gaussian_policy', found {kind!r}")
    net = _net_from_arrays(meta, arrays)
    try:
        return GaussianPolicy(net, arrays["log_std"], arrays["act_low"], arrays["act_high"])
    except KeyError as e:
        raise WeightFileError(f"{path}: missing policy array {e}") from e

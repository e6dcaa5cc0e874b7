"""Small tanh MLPs with hand-written backprop, a diagonal Gaussian head and Adam.

Parameters live in one flat float64 vector per network; layer weights and
biases are views into it, so optimisers and gradient surgery work on plain
vectors.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
ACTOR_SIZES = (8, 256, 256, 4)
CRITIC_SIZES = (128, 256, 256, 3)


@dataclass(frozen=True)
class Architecture:
    """Layer widths; hidden layers use tanh, the last layer is linear."""

    sizes: tuple

    def __post_init__(self):
        if len(self.sizes) < 2 or any(int(s) < 1 for s in self.sizes):
            raise ValueError(f"invalid layer sizes {self.sizes}")
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))

    @property
    def shapes(self):
        return [(a, b) for a, b in zip(self.sizes[:-1], self.sizes[1:])]

    @property
    def n_params(self):
        return sum(a * b + b for a, b in self.shapes)

    @property
    def activations(self):
        n = len(self.shapes)
        return tuple("tanh" if k < n - 1 else "linear" for k in range(n))


class MLPParams:
    """Flat parameter vector with per-layer ``(W, b)`` views; ``W`` is (fan_in, fan_out)."""

    def __init__(self, arch: Architecture, flat=None):
        self.arch = arch
        self.flat = np.zeros(arch.n_params) if flat is None else np.ascontiguousarray(flat, dtype=np.float64)
        if self.flat.shape != (arch.n_params,):
            raise ValueError(f"expected {arch.n_params} parameters, got {self.flat.shape}")
        self.layers = []
        k = 0
        for a, b in arch.shapes:
            W = self.flat[k:k + a * b].reshape(a, b)
            k += a * b
            bias = self.flat[k:k + b]
            k += b
            self.layers.append((W, bias))

    def copy(self):
        return MLPParams(self.arch, self.flat.copy())

    def is_finite(self):
        return bool(np.isfinite(self.flat).all())


def _orthogonal(rng, shape, gain):
    a, b = shape
    m = rng.standard_normal((max(a, b), min(a, b)))
    q, r = np.linalg.qr(m)
    q = q * np.sign(np.diag(r))
    if a < b:
        q = q.T
    return gain * q[:a, :b]


def init_params(rng, arch: Architecture, out_gain=1.0, hidden_gain=math.sqrt(2.0)) -> MLPParams:
    """Orthogonal weights, zero biases."""
    params = MLPParams(arch)
    n = len(params.layers)
    for k, (W, _) in enumerate(params.layers):
        W[...] = _orthogonal(rng, W.shape, hidden_gain if k < n - 1 else out_gain)
    return params


def init_actor(rng):
    return init_params(rng, Architecture(ACTOR_SIZES), out_gain=0.01)


def init_critic(rng):
    return init_params(rng, Architecture(CRITIC_SIZES), out_gain=1.0)


def forward(params: MLPParams, x):
    """Batch forward pass. Returns ``(output, cache)``; ``x`` is (B, fan_in)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    acts = [x]
    h = x
    for (W, b), act in zip(params.layers, params.arch.activations):
        h = h @ W + b
        if act == "tanh":
            h = np.tanh(h)
        acts.append(h)
    return h, acts


def backward(params: MLPParams, cache, grad_out):
    """Gradient of ``sum(grad_out * output)`` w.r.t. the flat parameters."""
    grad = MLPParams(params.arch)
    g = np.asarray(grad_out, dtype=np.float64).reshape(cache[-1].shape)
    n = len(params.layers)
    for k in range(n - 1, -1, -1):
        if params.arch.activations[k] == "tanh":
            g = g * (1.0 - cache[k + 1] ** 2)
        gW, gb = grad.layers[k]
        gW[...] = cache[k].T @ g
        gb[...] = g.sum(0)
        if k:
            g = g @ params.layers[k][0].T
    return grad.flat


# ---------------------------------------------------------------------------
# policy head

def split_head(out):
    """Split raw actor output (B, 4) into mean and clamped log-std."""
    out = np.atleast_2d(out)
    return out[:, :2], np.clip(out[:, 2:], LOG_STD_MIN, LOG_STD_MAX)


def actor_forward(params, obs):
    out, _ = forward(params, obs)
    mean, log_std = split_head(out)
    if np.ndim(obs) == 1:
        return mean[0], log_std[0]
    return mean, log_std


def critic_forward(params, joint_obs):
    out, _ = forward(params, joint_obs)
    return out[0] if np.ndim(joint_obs) == 1 else out


def log_prob(mean, log_std, action):
    """Diagonal Gaussian log-density summed over the last axis."""
    z = (action - mean) * np.exp(-log_std)
    return (-0.5 * z * z - log_std - HALF_LOG_2PI).sum(-1)


def log_prob_grads(mean, log_std, action):
    """Partial derivatives of :func:`log_prob` w.r.t. mean and log_std."""
    inv = np.exp(-log_std)
    z = (action - mean) * inv
    return z * inv, z * z - 1.0


def entropy(log_std):
    return (0.5 + HALF_LOG_2PI + np.asarray(log_std)).sum(-1)


def sample_action(mean, log_std, rng):
    """Draw ``a ~ N(mean, exp(log_std)**2)``.

    Returns ``(clamped_action, raw_action, log_prob)``; the log-probability
    is evaluated on the raw sample.
    """
    mean = np.asarray(mean, dtype=np.float64)
    raw = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    return np.clip(raw, -1.0, 1.0), raw, log_prob(mean, log_std, raw)


def head_backward(out, g_mean, g_log_std):
    """Map loss gradients on (mean, clamped log_std) back to the raw output layer.

    Outside the clamp the true derivative is zero, which would leave a
    saturated log_std stuck for good. There the gradient is passed through
    only when a descent step moves the raw output back towards the range.
    """
    pre = np.atleast_2d(out)[:, 2:]
    keep = ((pre >= LOG_STD_MIN) & (pre <= LOG_STD_MAX)) | ((pre > LOG_STD_MAX) & (g_log_std > 0)) \
        | ((pre < LOG_STD_MIN) & (g_log_std < 0))
    return np.concatenate([g_mean, g_log_std * keep], axis=1)


# ---------------------------------------------------------------------------
# optimiser

class Adam:
    """Bias-corrected Adam over a flat vector."""

    def __init__(self, n, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, params, grad):
        """In-place update of ``params`` (a flat array); returns it."""
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return params


def adam_step(params, grad, state: Adam, lr=None):
    if lr is not None:
        state.lr = lr
    return state.step(params, grad)


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, vectors: dict, header: dict):
    """Write ``<path>.bin`` (little-endian float64) and ``<path>.json``.

    ``vectors`` maps names to flat arrays, concatenated in insertion order;
    their offsets are recorded in the header.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    offsets, k = {}, 0
    for name, vec in vectors.items():
        offsets[name] = [k, int(np.size(vec))]
        k += int(np.size(vec))
    blob = np.concatenate([np.asarray(v, dtype="<f8").ravel() for v in vectors.values()]) if vectors else np.zeros(0)
    blob.astype("<f8").tofile(path.with_suffix(".bin"))
    meta = dict(header, offsets=offsets, dtype="<f8", n_values=k)
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(vectors, header)``."""
    path = Path(path)
    if path.suffix in (".bin", ".json"):
        path = path.with_suffix("")
    header = json.loads(path.with_suffix(".json").read_text())
    blob = np.fromfile(path.with_suffix(".bin"), dtype="<f8")
    if blob.size != header["n_values"]:
        raise ValueError(f"checkpoint {path}: expected {header['n_values']} values, found {blob.size}")
    vectors = {name: blob[a:a + n].astype(np.float64) for name, (a, n) in header["offsets"].items()}
    return vectors, header

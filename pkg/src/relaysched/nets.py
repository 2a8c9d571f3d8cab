"""Minimal float64 neural-network core: MLP, Adam, Gaussian policy head.

Everything is plain numpy with analytic gradients so training is bit-
deterministic for a given seed and checkpoints round-trip exactly.
"""

from __future__ import annotations

import json

import numpy as np

__all__ = [
    "Adam",
    "Mlp",
    "gaussian_entropy",
    "gaussian_logprob",
    "gaussian_sample",
    "load_checkpoint",
    "orthogonal_init",
    "save_checkpoint",
]

CHECKPOINT_VERSION = 1

_LOG_2PI = float(np.log(2.0 * np.pi))


def orthogonal_init(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float) -> np.ndarray:
    """Orthogonal weight matrix of shape (fan_in, fan_out), scaled by ``gain``."""
    rows, cols = (fan_in, fan_out) if fan_in >= fan_out else (fan_out, fan_in)
    a = rng.standard_normal((rows, cols))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diagonal(r))  # fix the sign ambiguity of the factorization
    if fan_in < fan_out:
        q = q.T
    return np.ascontiguousarray(gain * q[:fan_in, :fan_out], dtype=np.float64)


class Mlp:
    """Fully connected net with ReLU hidden layers and a linear output.

    ``sizes`` lists the layer widths, e.g. (68, 256, 256, 16).  Hidden
    weights use orthogonal init with gain sqrt(2); the output layer uses
    ``out_gain`` (small values give near-zero initial outputs).  forward()
    caches activations for the following backward() call.
    """

    def __init__(self, sizes, rng: np.random.Generator, out_gain: float = 1.0):
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 2:
            raise ValueError("need at least an input and an output width")
        if min(sizes) < 1:
            raise ValueError("layer widths must be positive")
        self.sizes = sizes
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        last = len(sizes) - 2
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            gain = out_gain if i == last else float(np.sqrt(2.0))
            self.weights.append(orthogonal_init(rng, fan_in, fan_out, gain))
            self.biases.append(np.zeros(fan_out, dtype=np.float64))
        self._inputs: list[np.ndarray] | None = None
        self._pre_acts: list[np.ndarray] | None = None

    @property
    def params(self) -> list[np.ndarray]:
        """Parameter arrays, interleaved [W0, b0, W1, b1, ...] (live views)."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.append(W)
            out.append(b)
        return out

    def copy(self) -> "Mlp":
        dup = object.__new__(Mlp)
        dup.sizes = self.sizes
        dup.weights = [W.copy() for W in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        dup._inputs = None
        dup._pre_acts = None
        return dup

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Batched forward pass; a 1-D input returns a 1-D output."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        a = x[None, :] if single else x
        if a.shape[1] != self.sizes[0]:
            raise ValueError(f"expected input width {self.sizes[0]}, got {a.shape[1]}")
        inputs, pre_acts = [], []
        n_layers = len(self.weights)
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(a)
            z = a @ W + b
            pre_acts.append(z)
            a = np.maximum(z, 0.0) if i < n_layers - 1 else z
        self._inputs = inputs
        self._pre_acts = pre_acts
        return a[0] if single else a

    def backward(self, grad_out: np.ndarray) -> list[np.ndarray]:
        """Gradients of a scalar loss given d(loss)/d(output of forward()).

        Returns arrays aligned with ``params``.  Must follow a forward()
        call; the cached activations are consumed.
        """
        if self._inputs is None:
            raise RuntimeError("backward() called before forward()")
        g = np.asarray(grad_out, dtype=np.float64)
        if g.ndim == 1:
            g = g[None, :]
        grads: list[np.ndarray] = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            grads[2 * i] = self._inputs[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = g @ self.weights[i].T
                g = g * (self._pre_acts[i - 1] > 0.0)
        self._inputs = None
        self._pre_acts = None
        return grads


class Adam:
    """Adam optimizer over a list of parameter arrays (updated in place)."""

    def __init__(self, params, lr=2.5e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads) -> None:
        if len(params) != len(self.m) or len(grads) != len(self.m):
            raise ValueError("parameter/gradient lists changed length")
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise FloatingPointError("non-finite gradient")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# ---------------------------------------------------------------------------
# diagonal Gaussian head


def gaussian_sample(mu: np.ndarray, log_std: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw from N(mu, diag(exp(log_std)^2)); broadcasts over a batch axis."""
    mu = np.asarray(mu, dtype=np.float64)
    noise = rng.standard_normal(mu.shape)
    return mu + np.exp(log_std) * noise


def gaussian_logprob(mu: np.ndarray, log_std: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Log density of ``x`` under the diagonal Gaussian, summed over components."""
    mu = np.asarray(mu, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    z = (x - mu) * np.exp(-log_std)
    per_comp = -0.5 * np.square(z) - log_std - 0.5 * _LOG_2PI
    return per_comp.sum(axis=-1)


def gaussian_entropy(log_std: np.ndarray) -> float:
    """Differential entropy, summed over components: each adds 0.5*log(2*pi*sigma^2) + 0.5."""
    log_std = np.asarray(log_std, dtype=np.float64)
    return float(np.sum(log_std + 0.5 * _LOG_2PI + 0.5))


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, arrays: dict, meta: dict) -> None:
    """Versioned tensor dump; float64 arrays round-trip bit-exactly."""
    payload = dict(arrays)
    header = {"format_version": CHECKPOINT_VERSION, **meta}
    payload["__meta__"] = np.frombuffer(
        json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8
    )
    np.savez(path, **payload)


def load_checkpoint(path) -> tuple[dict, dict]:
    """Inverse of save_checkpoint: (arrays, meta)."""
    with np.load(path) as data:
        if "__meta__" not in data:
            raise ValueError(f"{path} is not a checkpoint (missing header)")
        meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
        version = meta.pop("format_version", None)
        if version != CHECKPOINT_VERSION:
            raise ValueError(
                f"unsupported checkpoint version {version!r} (expected {CHECKPOINT_VERSION})"
            )
        arrays = {k: data[k] for k in data.files if k != "__meta__"}
    return arrays, meta

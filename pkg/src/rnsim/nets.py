"""Minimal feed-forward networks with hand-rolled reverse-mode gradients.

Everything runs in float64 numpy on desk-scale problems; a dependency-free
substrate keeps training bit-reproducible for a fixed seed, which the
pipeline's determinism contract relies on.
"""

from __future__ import annotations

import numpy as np

from .errors import ConvergenceError, DataError

__all__ = ["Mlp", "Adam", "softmax", "EarlyStopper"]


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax; strictly positive rows summing to 1."""
    z = np.asarray(logits, dtype=float)
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


class Mlp:
    """Fully connected network with tanh hidden activations.

    ``widths`` lists layer sizes from input to output; the output layer is
    linear. With ``zero_final=True`` the last layer starts at zero so the
    initial output is exactly zero regardless of the input (softmax of the
    output is then exactly uniform).
    """

    def __init__(self, widths, rng: np.random.Generator, zero_final: bool = False):
        widths = [int(w) for w in widths]
        if len(widths) < 2:
            raise DataError("an Mlp needs at least input and output widths")
        if min(widths[1:]) < 1 or widths[0] < 0:
            raise DataError("layer widths must be positive (input may be 0)")
        self.widths = widths
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            last = i == len(widths) - 2
            if last and zero_final:
                w = np.zeros((fan_in, fan_out))
                b = np.zeros(fan_out)
            else:
                scale = 1.0 / np.sqrt(max(fan_in, 1))
                w = rng.uniform(-scale, scale, size=(fan_in, fan_out))
                b = rng.uniform(-scale, scale, size=fan_out)
            self.weights.append(w)
            self.biases.append(b)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list[np.ndarray]:
        """Flat list of parameter arrays (weights interleaved with biases)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def forward(self, x: np.ndarray, cache: list | None = None) -> np.ndarray:
        """Evaluate the network on rows of ``x`` ((B, in) or (in,)).

        When ``cache`` is a list, layer inputs/activations are appended to
        it for a subsequent :meth:`backward` call.
        """
        a = np.asarray(x, dtype=float)
        squeeze = a.ndim == 1
        if squeeze:
            a = a[None, :]
        if a.shape[1] != self.widths[0]:
            raise DataError(
                f"input width {a.shape[1]} does not match the network ({self.widths[0]})"
            )
        if cache is not None:
            cache.append(a)
        for i in range(self.n_layers):
            z = a @ self.weights[i] + self.biases[i]
            if i < self.n_layers - 1:
                a = np.tanh(z)
            else:
                a = z
            if cache is not None:
                cache.append(a)
        if not np.all(np.isfinite(a)):
            raise ConvergenceError("non-finite network output")
        return a[0] if squeeze else a

    def backward(self, cache: list, output_grad: np.ndarray):
        """Exact gradients of ``sum(output * output_grad)`` from a cached pass.

        Returns ``(param_grads, input_grad)`` with ``param_grads`` matching
        :meth:`parameters` order.
        """
        if len(cache) != self.n_layers + 1:
            raise DataError("activation cache does not match this network")
        g = np.asarray(output_grad, dtype=float)
        squeeze = g.ndim == 1
        if squeeze:
            g = g[None, :]
        grads_w = [None] * self.n_layers
        grads_b = [None] * self.n_layers
        for i in range(self.n_layers - 1, -1, -1):
            a_prev = cache[i]
            if i < self.n_layers - 1:
                a_out = cache[i + 1]
                g = g * (1.0 - a_out**2)  # through tanh
            grads_w[i] = a_prev.T @ g
            grads_b[i] = g.sum(axis=0)
            g = g @ self.weights[i].T
        param_grads = []
        for gw, gb in zip(grads_w, grads_b):
            param_grads.append(gw)
            param_grads.append(gb)
        return param_grads, (g[0] if squeeze else g)

    def copy_parameters(self) -> list[np.ndarray]:
        return [p.copy() for p in self.parameters()]

    def load_parameters(self, values) -> None:
        params = self.parameters()
        if len(values) != len(params):
            raise DataError("parameter list length mismatch")
        for dst, src in zip(params, values):
            if dst.shape != np.shape(src):
                raise DataError("parameter shape mismatch")
            dst[...] = src

    def to_dict(self) -> dict:
        return {
            "widths": list(self.widths),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Mlp":
        net = cls(data["widths"], rng=np.random.default_rng(0))
        net.load_parameters(
            [np.asarray(v, dtype=float) for pair in zip(data["weights"], data["biases"]) for v in pair]
        )
        return net


class Adam:
    """Bias-corrected adaptive-moment optimizer over a list of arrays.

    Updates are applied in place to the registered parameter arrays.
    Gradients are clipped to a global norm before the moment updates.
    """

    def __init__(
        self,
        params: list[np.ndarray],
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        clip_norm: float | None = 10.0,
    ):
        self.params = list(params)
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.clip_norm = clip_norm
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise DataError("gradient list does not match registered parameters")
        sq = 0.0
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise ConvergenceError("non-finite gradient")
            sq += float(np.sum(np.asarray(g) ** 2))
        norm = np.sqrt(sq)
        scale = 1.0
        if self.clip_norm is not None and norm > self.clip_norm:
            scale = self.clip_norm / norm
        self.step_count += 1
        t = self.step_count
        b1c = 1.0 - self.beta1**t
        b2c = 1.0 - self.beta2**t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            g = np.asarray(g) * scale
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g**2
            p -= self.learning_rate * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


class EarlyStopper:
    """Track the best validation loss and signal patience exhaustion."""

    def __init__(self, patience: int = 50, min_epochs: int = 100):
        self.patience = int(patience)
        self.min_epochs = int(min_epochs)
        self.best_loss = np.inf
        self.best_epoch = -1
        self.best_state = None

    def update(self, epoch: int, loss: float, state_fn) -> bool:
        """Record epoch ``loss``; return True when training should stop.

        ``state_fn`` is called (lazily) to snapshot parameters whenever the
        loss improves.
        """
        if not np.isfinite(loss):
            raise ConvergenceError(f"non-finite validation loss at epoch {epoch}")
        if loss < self.best_loss:
            self.best_loss = float(loss)
            self.best_epoch = int(epoch)
            self.best_state = state_fn()
        if epoch + 1 < self.min_epochs:
            return False
        return epoch - self.best_epoch >= self.patience

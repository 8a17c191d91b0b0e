"""Minimal differentiable-computation core.

Dense ReLU networks with hand-rolled reverse-mode gradients, the
negative-exponent softmax used throughout the package (smaller scores get
larger probability, matching cost minimization), a tempered KL loss, and
the Adam update rule. Everything is plain numpy, float64, and deterministic
given a seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, TrainingDivergedError


# ---------------------------------------------------------------------------
# Dense network
# ---------------------------------------------------------------------------

@dataclass
class DenseNet:
    """Fully connected net: ReLU on hidden layers, identity on the output."""

    layer_sizes: list[int]
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if len(self.layer_sizes) < 2 or any(n <= 0 for n in self.layer_sizes):
            raise ConfigError(f"layer_sizes must be >=2 positive ints, got {self.layer_sizes}")
        if not self.weights:
            self.weights = [np.zeros((a, b)) for a, b in zip(self.layer_sizes, self.layer_sizes[1:])]
            self.biases = [np.zeros(b) for b in self.layer_sizes[1:]]
        for w, b, (a, o) in zip(self.weights, self.biases, zip(self.layer_sizes, self.layer_sizes[1:])):
            if w.shape != (a, o) or b.shape != (o,):
                raise ConfigError(f"parameter shapes do not match layer_sizes {self.layer_sizes}")

    @property
    def num_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def params(self) -> list[np.ndarray]:
        """Flat list of parameter arrays, weights and biases interleaved per layer."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "DenseNet":
        return DenseNet(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )


def init_dense(layer_sizes: list[int], rng: np.random.Generator) -> DenseNet:
    """Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] per layer."""
    net = DenseNet(list(layer_sizes))
    for i, (fan_in, fan_out) in enumerate(zip(layer_sizes, layer_sizes[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        net.weights[i] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        net.biases[i] = rng.uniform(-bound, bound, size=fan_out)
    return net


@dataclass
class GradBundle:
    """Per-parameter gradients, shape-aligned with the owning DenseNet."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.params())


def dense_forward(net: DenseNet, x: np.ndarray) -> np.ndarray:
    """Forward pass for a single input vector."""
    x = np.asarray(x, dtype=float)
    if x.shape != (net.layer_sizes[0],):
        raise ConfigError(f"input shape {x.shape} does not match net input size {net.layer_sizes[0]}")
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if i != last:
            h = np.maximum(h, 0.0)
    return h


def dense_forward_batch(net: DenseNet, xs: np.ndarray) -> np.ndarray:
    """Forward pass for a (batch, n_in) matrix of inputs."""
    acts, _ = _forward_cached(net, np.asarray(xs, dtype=float))
    return acts[-1]


def _forward_cached(net: DenseNet, xs: np.ndarray):
    """Returns (post-activation list incl. input and output, pre-activation list)."""
    if xs.ndim == 1:
        xs = xs[None, :]
    if xs.shape[1] != net.layer_sizes[0]:
        raise ConfigError(f"input width {xs.shape[1]} does not match net input size {net.layer_sizes[0]}")
    acts = [xs]
    pre = []
    last = len(net.weights) - 1
    h = xs
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        pre.append(z)
        h = z if i == last else np.maximum(z, 0.0)
        acts.append(h)
    return acts, pre


def dense_backward(net: DenseNet, x: np.ndarray, output_grad: np.ndarray) -> GradBundle:
    """Reverse accumulation of d(loss)/d(params) for a single input."""
    output_grad = np.asarray(output_grad, dtype=float)
    if output_grad.shape != (net.layer_sizes[-1],):
        raise ConfigError(
            f"output_grad shape {output_grad.shape} does not match net output size {net.layer_sizes[-1]}"
        )
    return dense_backward_batch(net, np.asarray(x, dtype=float)[None, :], output_grad[None, :])


def dense_backward_batch(net: DenseNet, xs: np.ndarray, output_grads: np.ndarray) -> GradBundle:
    """Reverse accumulation over a batch; gradients are summed over rows."""
    acts, pre = _forward_cached(net, xs)
    return _backward_from_cache(net, acts, pre, output_grads)


def _backward_from_cache(net: DenseNet, acts, pre, output_grads: np.ndarray) -> GradBundle:
    if output_grads.shape != acts[-1].shape:
        raise ConfigError(f"output_grads shape {output_grads.shape} does not match output {acts[-1].shape}")
    grad_w = [np.empty_like(w) for w in net.weights]
    grad_b = [np.empty_like(b) for b in net.biases]
    delta = output_grads
    for i in range(len(net.weights) - 1, -1, -1):
        grad_w[i] = acts[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ net.weights[i].T) * (pre[i - 1] > 0.0)
    return GradBundle(grad_w, grad_b)


# ---------------------------------------------------------------------------
# Probability pieces
# ---------------------------------------------------------------------------

def softmax_neg(w: np.ndarray) -> np.ndarray:
    """Negative-exponent softmax: p_i = exp(-w_i) / sum_k exp(-w_k).

    The smallest entry receives the largest probability. Shifted by the
    exponent maximum before exponentiating, so any finite input is safe.
    """
    w = np.asarray(w, dtype=float)
    z = -w
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_neg(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    z = -w
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sigmoid(z):
    """Numerically stable logistic function; works elementwise on arrays."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    if out.ndim == 0:
        return float(out)
    return out


def kl_tempered(teacher_q: np.ndarray, student_q: np.ndarray, temperature: float) -> float:
    """KL divergence between tempered negative-exponent softmaxes of two score vectors.

    Both vectors are divided by the temperature before the softmax; the
    teacher side is the reference distribution. Non-negative, zero iff the
    induced distributions coincide.
    """
    teacher_q = np.asarray(teacher_q, dtype=float)
    student_q = np.asarray(student_q, dtype=float)
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    if teacher_q.shape != student_q.shape:
        raise ConfigError(f"score vectors differ in shape: {teacher_q.shape} vs {student_q.shape}")
    log_p = log_softmax_neg(teacher_q / temperature)
    log_s = log_softmax_neg(student_q / temperature)
    p = np.exp(log_p)
    return float(np.sum(p * (log_p - log_s)))


def kl_tempered_grad(teacher_q: np.ndarray, student_q: np.ndarray, temperature: float) -> np.ndarray:
    """Gradient of kl_tempered with respect to the student scores: (P - S) / tau."""
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    p = softmax_neg(np.asarray(teacher_q, dtype=float) / temperature)
    s = softmax_neg(np.asarray(student_q, dtype=float) / temperature)
    return (p - s) / temperature


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Bias-corrected Adam moments for a fixed list of parameter arrays."""

    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params: list[np.ndarray], learning_rate: float = 0.001) -> "AdamState":
        return cls(
            first_moment=[np.zeros_like(p) for p in params],
            second_moment=[np.zeros_like(p) for p in params],
            learning_rate=learning_rate,
        )


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> None:
    """One Adam update, in place on ``params``. Raises on non-finite gradients."""
    if len(params) != len(state.first_moment) or len(grads) != len(params):
        raise ConfigError("parameter/gradient/moment lists are misaligned")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient at adam step {state.step_count + 1}")
    state.step_count += 1
    bc1 = 1.0 - state.beta1 ** state.step_count
    bc2 = 1.0 - state.beta2 ** state.step_count
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)

"""Dense numerical kernel: seeded init, activations, MSE, Adam, gradient checking.

Everything is float64. Initialization uses a fixed, explicitly specified PRNG
(xorshift64* seeded through splitmix64) so that a given (seed, name) pair
yields bit-identical values on every platform and run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyInputError,
    LengthMismatchError,
    NonDeterministicForwardError,
    ShapeMismatchError,
)

_MASK64 = (1 << 64) - 1


def _fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


class Rng:
    """xorshift64* stream; the state is scrambled so any seed (even 0) works.

    Stream derivation: state = splitmix64(seed XOR fnv1a64(name)), which gives
    every named parameter its own independent, reproducible stream.
    """

    def __init__(self, seed: int, name: str = ""):
        state = (seed & _MASK64) ^ _fnv1a64(name)
        state = _splitmix64(state)
        self._state = state if state != 0 else 0x9E3779B97F4A7C15

    def next_u64(self) -> int:
        x = self._state
        x ^= x >> 12
        x = (x ^ (x << 25)) & _MASK64
        x ^= x >> 27
        self._state = x
        return (x * 0x2545F4914F6CDD1D) & _MASK64

    def next_float(self) -> float:
        # 53 high bits -> uniform double in [0, 1)
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def uniform(self, lo: float, hi: float, n: int) -> np.ndarray:
        return np.array([lo + (hi - lo) * self.next_float() for _ in range(n)], dtype=np.float64)

    def shuffle(self, items: list) -> None:
        # Fisher-Yates with the same stream, for seeded mini-batch ordering.
        for i in range(len(items) - 1, 0, -1):
            j = self.next_u64() % (i + 1)
            items[i], items[j] = items[j], items[i]


def init_params(shape: tuple[int, ...], fan_in: int, fan_out: int, seed: int, name: str) -> np.ndarray:
    """Glorot-uniform init: entries in +/- sqrt(6 / (fan_in + fan_out))."""
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    rng = Rng(seed, name)
    flat = rng.uniform(-bound, bound, int(np.prod(shape)))
    return flat.reshape(shape)


def zeros(shape: tuple[int, ...]) -> np.ndarray:
    return np.zeros(shape, dtype=np.float64)


# --- activations ----------------------------------------------------------


def sigmoid(x):
    # exp of -|x| never overflows; the two branches are algebraically the
    # same function evaluated on the stable side.
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def tanh(x):
    return np.tanh(np.asarray(x, dtype=np.float64))


def activation(kind: str, x):
    try:
        return _ACTIVATIONS[kind][0](x)
    except KeyError:
        raise ShapeMismatchError(f"unknown activation {kind!r}") from None


def activation_grad(kind: str, x):
    """Derivative evaluated at the pre-activation x. relu'(0) is defined as 0."""
    try:
        return _ACTIVATIONS[kind][1](x)
    except KeyError:
        raise ShapeMismatchError(f"unknown activation {kind!r}") from None


def _sigmoid_grad(x):
    s = sigmoid(x)
    return s * (1.0 - s)


_ACTIVATIONS = {
    "relu": (relu, lambda x: (np.asarray(x) > 0).astype(np.float64)),
    "sigmoid": (sigmoid, _sigmoid_grad),
    "tanh": (tanh, lambda x: 1.0 - np.tanh(x) ** 2),
}


# --- dense layer / loss -----------------------------------------------------


def dense_forward(inputs: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if inputs.ndim != 2 or weights.ndim != 2 or inputs.shape[1] != weights.shape[0]:
        raise ShapeMismatchError(
            f"cannot multiply input {inputs.shape} by weights {weights.shape}"
        )
    if bias.shape != (weights.shape[1],):
        raise ShapeMismatchError(f"bias shape {bias.shape} != ({weights.shape[1]},)")
    return inputs @ weights + bias


def mse_loss(pred, actual) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient with respect to pred."""
    pred = np.asarray(pred, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if pred.shape != actual.shape:
        raise LengthMismatchError(f"pred shape {pred.shape} != actual shape {actual.shape}")
    n = pred.size
    if n == 0:
        raise EmptyInputError("mse_loss of empty input")
    diff = pred - actual
    return float(np.mean(diff * diff)), (2.0 / n) * diff


# --- Adam -------------------------------------------------------------------


@dataclass
class AdamState:
    """Per-tensor Adam moments; t counts completed steps."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    alpha: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    _scratch: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def for_shape(cls, shape, **hyper) -> "AdamState":
        return cls(m=zeros(shape), v=zeros(shape), **hyper)


def adam_step(value: np.ndarray, grad: np.ndarray, state: AdamState) -> None:
    """One Adam update, in place. Epsilon is added outside the square root.

        m' = b1 m + (1 - b1) g        mhat = m' / (1 - b1^t)
        v' = b2 v + (1 - b2) g^2      vhat = v' / (1 - b2^t)
        value -= alpha * mhat / (sqrt(vhat) + eps)

    Written with in-place ufuncs and one scratch buffer; the update runs every
    optimizer step on the full flat parameter vector.
    """
    if grad.shape != state.m.shape or grad.shape != value.shape:
        raise ShapeMismatchError(
            f"grad shape {grad.shape} does not match state shape {state.m.shape}"
        )
    if state._scratch is None or state._scratch.shape != grad.shape:
        state._scratch = np.empty_like(grad)
    buf = state._scratch
    state.t += 1
    np.multiply(state.m, state.beta1, out=state.m)
    np.multiply(grad, 1.0 - state.beta1, out=buf)
    state.m += buf
    np.multiply(state.v, state.beta2, out=state.v)
    np.multiply(grad, grad, out=buf)
    buf *= 1.0 - state.beta2
    state.v += buf
    np.divide(state.v, 1.0 - state.beta2 ** state.t, out=buf)  # vhat
    np.sqrt(buf, out=buf)
    buf += state.epsilon
    np.divide(state.m, buf, out=buf)  # m / (sqrt(vhat) + eps)
    buf *= state.alpha / (1.0 - state.beta1 ** state.t)
    value -= buf


class Adam:
    """Adam over a named parameter set; one shared step counter per tensor."""

    def __init__(self, params: dict[str, np.ndarray], alpha: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.states = {
            name: AdamState.for_shape(value.shape, alpha=alpha, beta1=beta1,
                                      beta2=beta2, epsilon=epsilon)
            for name, value in params.items()
        }

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, value in params.items():
            adam_step(value, grads[name], self.states[name])


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients by s = min(1, max_norm / ||g||); returns s."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    norm = np.sqrt(total)
    if norm <= max_norm or norm == 0.0:
        return 1.0
    scale = max_norm / norm
    for g in grads.values():
        g *= scale
    return scale


# --- finite-difference gradient checking -----------------------------------


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    failures: list[tuple[str, tuple[int, ...], float, float, float]] = field(default_factory=list)
    checked: int = 0


def grad_check(
    loss_fn,
    params: dict[str, np.ndarray],
    analytic: dict[str, np.ndarray],
    delta: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Central-difference check of analytic gradients for every entry.

    ``loss_fn`` must be a deterministic zero-argument callable that reads the
    current contents of ``params``. Relative error per entry is
    |ga - gn| / max(|ga|, |gn|, 1e-8).
    """
    base = loss_fn()
    if loss_fn() != base:
        raise NonDeterministicForwardError("two identical forward evaluations disagree")

    report = GradCheckReport(passed=True, max_rel_error=0.0)
    for name, value in params.items():
        grads = analytic[name]
        if grads.shape != value.shape:
            raise ShapeMismatchError(f"{name}: grad shape {grads.shape} != {value.shape}")
        it = np.nditer(value, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            original = value[idx]
            value[idx] = original + delta
            plus = loss_fn()
            value[idx] = original - delta
            minus = loss_fn()
            value[idx] = original
            numeric = (plus - minus) / (2.0 * delta)
            analytic_entry = float(grads[idx])
            rel = abs(analytic_entry - numeric) / max(abs(analytic_entry), abs(numeric), 1e-8)
            report.checked += 1
            if rel > report.max_rel_error:
                report.max_rel_error = rel
            if rel > tolerance:
                report.passed = False
                report.failures.append((name, idx, analytic_entry, numeric, rel))
            it.iternext()
    return report

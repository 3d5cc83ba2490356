"""Dense numeric substrate: affine layers, L2 normalization, Adam, and a
finite-difference gradient checker.

Tensors are plain 2-D float64 numpy arrays in row-major order. There is no
implicit computation graph: forward functions return outputs, backward
functions take the upstream gradient and accumulate parameter gradients
explicitly (populate -> step -> zero).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, DimensionError, NumericError

_ZERO_NORM_TOL = 1e-12


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    """Validate and convert to a 2-D float64 array; reject non-finite entries."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name}: expected 2-D array, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name}: contains non-finite values")
    return np.ascontiguousarray(arr)


@dataclass
class ParamBlock:
    """One affine layer's parameters and their gradient accumulators.

    `weights` has shape (fan_in, fan_out); `bias` has shape (fan_out,).
    Gradient arrays always mirror the parameter shapes.
    """

    name: str
    weights: np.ndarray
    bias: np.ndarray
    grad_weights: np.ndarray = field(default=None)  # type: ignore[assignment]
    grad_bias: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.weights = as_matrix(self.weights, f"{self.name}.weights")
        self.bias = np.ascontiguousarray(np.asarray(self.bias, dtype=np.float64))
        if self.bias.ndim != 1:
            raise DimensionError(f"{self.name}.bias: expected 1-D array")
        if self.bias.shape[0] != self.weights.shape[1]:
            raise DimensionError(
                f"{self.name}: bias length {self.bias.shape[0]} != fan_out "
                f"{self.weights.shape[1]}"
            )
        if self.grad_weights is None:
            self.grad_weights = np.zeros_like(self.weights)
        if self.grad_bias is None:
            self.grad_bias = np.zeros_like(self.bias)
        if self.grad_weights.shape != self.weights.shape:
            raise DimensionError(f"{self.name}: grad_weights shape mismatch")
        if self.grad_bias.shape != self.bias.shape:
            raise DimensionError(f"{self.name}: grad_bias shape mismatch")

    @property
    def fan_in(self) -> int:
        return self.weights.shape[0]

    @property
    def fan_out(self) -> int:
        return self.weights.shape[1]

    def zero_grad(self) -> None:
        self.grad_weights.fill(0.0)
        self.grad_bias.fill(0.0)

    def copy(self) -> "ParamBlock":
        return ParamBlock(
            name=self.name,
            weights=self.weights.copy(),
            bias=self.bias.copy(),
            grad_weights=self.grad_weights.copy(),
            grad_bias=self.grad_bias.copy(),
        )


def affine_forward(inp: np.ndarray, params: ParamBlock) -> np.ndarray:
    """Row-wise affine map: out[i] = inp[i] @ W + b."""
    inp = np.asarray(inp, dtype=np.float64)
    if inp.ndim != 2:
        raise DimensionError("affine_forward: input must be 2-D")
    if inp.shape[1] != params.fan_in:
        raise DimensionError(
            f"affine_forward: input cols {inp.shape[1]} != weights rows "
            f"{params.fan_in} ({params.name})"
        )
    return inp @ params.weights + params.bias


def affine_backward(
    inp: np.ndarray, params: ParamBlock, grad_out: np.ndarray
) -> np.ndarray:
    """Accumulate parameter gradients for affine_forward and return the
    gradient with respect to the input rows."""
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != (inp.shape[0], params.fan_out):
        raise DimensionError(
            f"affine_backward: grad_out shape {grad_out.shape} incompatible "
            f"with ({inp.shape[0]}, {params.fan_out})"
        )
    params.grad_weights += inp.T @ grad_out
    params.grad_bias += grad_out.sum(axis=0)
    return grad_out @ params.weights.T


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Scale a nonzero vector to unit Euclidean norm."""
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm < _ZERO_NORM_TOL:
        raise DegenerateInputError("l2_normalize: zero-norm input")
    return v / norm


def l2_normalize_backward(v: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Backward pass of l2_normalize: applies (I - u u^T) / ||v|| to grad_out,
    where u = v / ||v||."""
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm < _ZERO_NORM_TOL:
        raise DegenerateInputError("l2_normalize_backward: zero-norm input")
    u = v / norm
    return (grad_out - u * float(u @ grad_out)) / norm


def l2_normalize_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise unit normalization of a 2-D array."""
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms < _ZERO_NORM_TOL):
        raise DegenerateInputError("l2_normalize_rows: zero-norm row")
    return m / norms[:, None]


@dataclass
class AdamState:
    """Adam moment estimates for one ParamBlock; moments start at zero."""

    m_weights: np.ndarray
    v_weights: np.ndarray
    m_bias: np.ndarray
    v_bias: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_block(
        cls,
        block: ParamBlock,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ) -> "AdamState":
        return cls(
            m_weights=np.zeros_like(block.weights),
            v_weights=np.zeros_like(block.weights),
            m_bias=np.zeros_like(block.bias),
            v_bias=np.zeros_like(block.bias),
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )


def adam_step(params: ParamBlock, state: AdamState, lr: float) -> None:
    """One Adam update with bias correction; zeroes the gradients afterwards.

    Mutates `params` and `state` in place; not safe for concurrent writers.
    """
    if not (np.all(np.isfinite(params.grad_weights)) and np.all(np.isfinite(params.grad_bias))):
        raise NumericError(f"adam_step: non-finite gradient in {params.name}")
    t = state.step_count + 1
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    for p, g, m, v in (
        (params.weights, params.grad_weights, state.m_weights, state.v_weights),
        (params.bias, params.grad_bias, state.m_bias, state.v_bias),
    ):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    state.step_count = t
    params.zero_grad()


def check_gradient(f, point: np.ndarray, h: float = 1e-5) -> float:
    """Compare an analytic gradient against central finite differences.

    `f` maps a 1-D point to (scalar value, gradient vector). Returns the
    maximum over coordinates of |analytic - numeric| / max(1, |analytic|).
    """
    point = np.asarray(point, dtype=np.float64)
    _, grad = f(point)
    grad = np.asarray(grad, dtype=np.float64)
    worst = 0.0
    for i in range(point.size):
        bumped = point.copy()
        bumped[i] += h
        hi, _ = f(bumped)
        bumped[i] -= 2.0 * h
        lo, _ = f(bumped)
        numeric = (hi - lo) / (2.0 * h)
        err = abs(grad[i] - numeric) / max(1.0, abs(grad[i]))
        worst = max(worst, err)
    return worst


def log1p_sum_exp(xs: np.ndarray) -> float:
    """Numerically stable log(1 + sum(exp(xs))); xs may be empty."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size == 0:
        return 0.0
    m = max(float(xs.max()), 0.0)
    return m + float(np.log(np.exp(-m) + np.exp(xs - m).sum()))

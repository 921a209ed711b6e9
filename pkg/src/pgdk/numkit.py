"""Small dense linear-algebra and optimization toolkit.

Matrices are plain 2-D ``float64`` numpy arrays. The helpers here add the
dimension and finiteness checks the rest of the package relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
import scipy.linalg

DEFAULT_RIDGE = 1e-6
# condition-number ceiling for an unregularized normal matrix
SINGULAR_COND = 1e12


class DimensionError(ValueError):
    pass


class SingularMatrixError(np.linalg.LinAlgError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def as_matrix(values, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Coerce ``values`` to a finite 2-D float64 array, optionally checking shape."""
    m = np.array(values, dtype=np.float64, ndmin=2)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {m.shape}")
    if rows is not None and m.shape[0] != rows:
        raise DimensionError(f"expected {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        raise DimensionError(f"expected {cols} cols, got {m.shape[1]}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteError("matrix has non-finite entries")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def ridge_least_squares(Y: np.ndarray, Z: np.ndarray, lam: float = DEFAULT_RIDGE) -> np.ndarray:
    """Solve ``min_W ||Y - W Z||_F^2 + lam ||W||_F^2``.

    Columns of ``Y`` and ``Z`` are samples. The normal matrix ``Z Z' + lam I`` is
    Cholesky-factored; with ``lam == 0`` the result is ``Y pinv(Z)`` for a full
    row-rank ``Z`` and a :class:`SingularMatrixError` is raised otherwise.
    """
    Y = np.asarray(Y, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    if Y.ndim != 2 or Z.ndim != 2 or Y.shape[1] != Z.shape[1]:
        raise DimensionError(f"sample counts differ: Y {Y.shape}, Z {Z.shape}")
    if lam < 0:
        raise ValueError("ridge lambda must be non-negative")
    gram = Z @ Z.T
    if lam > 0:
        gram[np.diag_indices_from(gram)] += lam
    elif gram.size == 0 or np.linalg.cond(gram) > SINGULAR_COND:
        raise SingularMatrixError("normal matrix is numerically singular; use lam > 0")
    rhs = Z @ Y.T
    try:
        factor = scipy.linalg.cho_factor(gram, lower=True, check_finite=False)
        W_t = scipy.linalg.cho_solve(factor, rhs, check_finite=False)
    except np.linalg.LinAlgError:
        # tiny lam on a rank-deficient batch can leave gram indefinite in floating point
        W_t = np.linalg.lstsq(gram, rhs, rcond=None)[0]
    return W_t.T


@dataclass
class AdamState:
    learning_rate: float
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("Adam epsilon must be positive")
        if self.first_moment.shape != self.second_moment.shape:
            raise DimensionError("Adam moment vectors differ in length")

    @classmethod
    def zeros(cls, size: int, learning_rate: float, **kw) -> "AdamState":
        return cls(learning_rate, np.zeros(size), np.zeros(size), **kw)

    def copy(self) -> "AdamState":
        return replace(self, first_moment=self.first_moment.copy(), second_moment=self.second_moment.copy())


def all_finite(a: np.ndarray) -> bool:
    # a single reduction is far cheaper than an elementwise mask; fall back only on overflow
    total = np.add.reduce(a, axis=None)
    return bool(np.isfinite(total)) or bool(np.all(np.isfinite(a)))


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray) -> tuple[AdamState, np.ndarray]:
    """Pure Adam step with bias correction; inputs are left untouched."""
    new_state = state.copy()
    new_params = np.array(params, dtype=np.float64)
    adam_step_inplace(new_state, new_params, grad)
    return new_state, new_params


_SMALLEST_NORMAL = np.finfo(np.float64).tiny
_FLUSH_EVERY = 16


def adam_step_inplace(state: AdamState, params: np.ndarray, grad: np.ndarray) -> None:
    """Same recurrence as :func:`adam_step`, mutating ``state`` and ``params``."""
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape or params.shape != state.first_moment.shape:
        raise DimensionError(
            f"length mismatch: params {params.shape}, grad {grad.shape}, moments {state.first_moment.shape}"
        )
    if not all_finite(grad):
        raise NonFiniteError("non-finite gradient passed to adam_step")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    m, v = state.first_moment, state.second_moment
    tmp = np.multiply(grad, 1.0 - b1)
    m *= b1
    m += tmp
    np.multiply(grad, grad, out=tmp)
    tmp *= 1.0 - b2
    v *= b2
    v += tmp
    # params -= lr * m_hat / (sqrt(v_hat) + eps)
    np.sqrt(v, out=tmp)
    tmp *= 1.0 / np.sqrt(1.0 - b2**t)
    tmp += state.epsilon
    np.divide(m, tmp, out=tmp)
    tmp *= state.learning_rate / (1.0 - b1**t)
    params -= tmp
    # Moments of parameters whose gradient stays at zero (dead ReLU units) decay
    # geometrically into the subnormal range, where x86 arithmetic is ~30x slower.
    # Their contribution to a step is below 1e-290; flush them every few steps.
    if t % _FLUSH_EVERY == 0:
        for a in (m, v):
            np.abs(a, out=tmp)
            a[tmp < _SMALLEST_NORMAL] = 0.0
    state.step_count = t


def finite_difference_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    for i in range(x.size):
        orig = x.flat[i]
        x.flat[i] = orig + h
        fp = f(x)
        x.flat[i] = orig - h
        fm = f(x)
        x.flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"f is not finite near coordinate {i}")
        grad.flat[i] = (fp - fm) / (2.0 * h)
    return grad


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent, reproducible generator for ``(seed, stream)``.

    Backed by numpy's PCG64 seeded through ``SeedSequence([seed, stream])``;
    distinct stream ids give statistically independent sequences.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed) & (2**64 - 1), int(stream)])))


# stream ids used across the package
STREAM_INIT_LIFT = 1
STREAM_INIT_CRITIC = 2
STREAM_INIT_ACTOR = 3
STREAM_RESET = 10
STREAM_SAMPLE = 11
STREAM_NOISE = 12
STREAM_EVAL = 20


@dataclass
class RunningMean:
    total: float = 0.0
    count: int = 0

    def add(self, x: float) -> None:
        self.total += x
        self.count += 1

    @property
    def mean(self) -> float:
        return self.total / self.count if self.count else 0.0

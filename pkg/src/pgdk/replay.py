"""Transition memory with FIFO eviction, Ornstein-Uhlenbeck exploration and its decay schedule."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .numkit import DimensionError, NonFiniteError


class Transition(NamedTuple):
    x: np.ndarray
    u: np.ndarray
    x_next: np.ndarray


class TransitionBatch(NamedTuple):
    """Row-per-sample arrays ``x (N, n)``, ``u (N, m)``, ``x_next (N, n)``."""

    x: np.ndarray
    u: np.ndarray
    x_next: np.ndarray

    def __len__(self) -> int:
        return self.x.shape[0]


class InsufficientDataError(RuntimeError):
    pass


class ReplayMemory:
    """Ring buffer of transitions holding at most ``capacity`` items."""

    def __init__(self, capacity: int, state_dim: int, input_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.state_dim, self.input_dim = state_dim, input_dim
        # grown on demand so that huge capacities cost nothing up front
        self._x = np.empty((0, state_dim))
        self._u = np.empty((0, input_dim))
        self._xn = np.empty((0, state_dim))
        self.inserted = 0

    def __len__(self) -> int:
        return min(self.inserted, self.capacity)

    def _grow(self, need: int) -> None:
        size = min(self.capacity, max(need, 2 * self._x.shape[0], 1024))
        for name in ("_x", "_u", "_xn"):
            old = getattr(self, name)
            new = np.empty((size, old.shape[1]))
            new[:old.shape[0]] = old
            setattr(self, name, new)

    def push(self, x, u, x_next) -> None:
        x = np.asarray(x, dtype=np.float64)
        u = np.atleast_1d(np.asarray(u, dtype=np.float64))
        x_next = np.asarray(x_next, dtype=np.float64)
        if x.shape != (self.state_dim,) or x_next.shape != (self.state_dim,) or u.shape != (self.input_dim,):
            raise DimensionError("transition dimensions do not match the memory")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u)) and np.all(np.isfinite(x_next))):
            raise NonFiniteError("refusing to store a non-finite transition")
        slot = self.inserted % self.capacity
        if slot >= self._x.shape[0]:
            self._grow(slot + 1)
        self._x[slot], self._u[slot], self._xn[slot] = x, u, x_next
        self.inserted += 1

    def _order(self) -> np.ndarray:
        """Storage slots from oldest to newest."""
        n = len(self)
        start = self.inserted % self.capacity if self.inserted > self.capacity else 0
        return (start + np.arange(n)) % self.capacity

    def contents(self) -> TransitionBatch:
        idx = self._order()
        return TransitionBatch(self._x[idx].copy(), self._u[idx].copy(), self._xn[idx].copy())

    def __getitem__(self, i: int) -> Transition:
        slot = self._order()[i]
        return Transition(self._x[slot].copy(), self._u[slot].copy(), self._xn[slot].copy())

    def sample(self, n: int, rng: np.random.Generator) -> TransitionBatch:
        """``n`` distinct transitions chosen uniformly without replacement."""
        size = len(self)
        if size < n:
            raise InsufficientDataError(f"memory holds {size} transitions, batch needs {n}")
        idx = rng.choice(size, size=n, replace=False)
        return TransitionBatch(self._x[idx], self._u[idx], self._xn[idx])

    @classmethod
    def from_batch(cls, batch: TransitionBatch, capacity: int | None = None) -> "ReplayMemory":
        n, s = batch.x.shape
        mem = cls(capacity or max(n, 1), s, batch.u.shape[1])
        for row in zip(*batch):
            mem.push(*row)
        return mem

    # Replay file: magic b"PGDKRPL1" | uint32 header length | JSON {state_dim, input_dim, count}
    # | count rows of float64 LE [x, u, x_next], oldest first.
    def dump(self, path: str | Path) -> None:
        data = self.contents()
        header = json.dumps({"state_dim": self.state_dim, "input_dim": self.input_dim, "count": len(self)}).encode()
        rows = np.hstack([data.x, data.u, data.x_next]).astype("<f8")
        with open(path, "wb") as fh:
            fh.write(b"PGDKRPL1")
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            fh.write(rows.tobytes())


def load_replay(path: str | Path, state_dim: int | None = None, input_dim: int | None = None) -> TransitionBatch:
    raw = Path(path).read_bytes()
    if raw[:8] != b"PGDKRPL1":
        raise ValueError(f"{path} is not a replay file")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + hlen])
    n, m, count = header["state_dim"], header["input_dim"], header["count"]
    if (state_dim is not None and n != state_dim) or (input_dim is not None and m != input_dim):
        raise DimensionError(f"replay file holds n={n}, m={m}; expected n={state_dim}, m={input_dim}")
    if count == 0:
        raise ValueError(f"{path} holds no transitions")
    rows = np.frombuffer(raw[12 + hlen:], dtype="<f8")
    if rows.size != count * (2 * n + m):
        raise ValueError(f"{path} is truncated or corrupt")
    rows = rows.reshape(count, 2 * n + m).astype(np.float64)
    return TransitionBatch(rows[:, :n], rows[:, n:n + m], rows[:, n + m:])


@dataclass
class OuProcess:
    """Discrete Ornstein-Uhlenbeck noise ``W <- W + theta (mean - W) dt + sigma sqrt(dt) N(0, I)``."""

    size: int
    theta: float = 0.15
    sigma_base: float = 0.2
    dt: float = 1.0
    mean: np.ndarray | None = None
    state: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.theta < 0 or self.sigma_base < 0 or self.dt <= 0:
            raise ValueError("OU process needs theta >= 0, sigma >= 0, dt > 0")
        self.mean = np.zeros(self.size) if self.mean is None else np.asarray(self.mean, dtype=np.float64)
        self.state = self.mean.copy()

    def step(self, rng: np.random.Generator) -> np.ndarray:
        self.state = (self.state + self.theta * (self.mean - self.state) * self.dt
                      + self.sigma_base * np.sqrt(self.dt) * rng.standard_normal(self.size))
        return self.state

    @property
    def stationary_variance(self) -> float:
        a = self.theta * self.dt
        return self.sigma_base**2 * self.dt / (2.0 * a - a * a)


def reset_noise(ou: OuProcess) -> OuProcess:
    ou.state = ou.mean.copy()
    return ou


@dataclass(frozen=True)
class DecaySchedule:
    sigma0: float = 1.0
    decay: float = 0.97
    floor: float = 0.0

    def __post_init__(self):
        if self.sigma0 < 0 or self.floor < 0 or not 0.0 < self.decay <= 1.0:
            raise ValueError("decay schedule needs sigma0 >= 0, floor >= 0, 0 < decay <= 1")

    def __call__(self, episode: int) -> float:
        return max(self.floor, self.sigma0 * self.decay**episode)


def explore(actor_output, ou: OuProcess, sigma_t: float, rng: np.random.Generator,
            action_box: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    """Perturb the policy action with OU noise scaled to half the box width, then clip."""
    if sigma_t < 0:
        raise ValueError("exploration scale must be non-negative")
    u = np.atleast_1d(np.asarray(actor_output, dtype=np.float64))
    if sigma_t == 0:
        return u.copy()
    lo, hi = (np.asarray(b, dtype=np.float64) for b in action_box)
    w = ou.step(rng)
    return np.clip(u + sigma_t * 0.5 * (hi - lo) * w, lo, hi)

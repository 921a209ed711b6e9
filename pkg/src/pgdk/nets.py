"""Feed-forward MLPs with hand-written reverse-mode gradients.

Parameters live in one flat float64 vector laid out layer by layer as
``W_0, b_0, W_1, b_1, ...`` where ``W_l`` has shape ``(in_l, out_l)``
stored row-major. Inputs are rows: a batch is an ``(N, input_dim)`` array.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import erf

from .numkit import DimensionError, NonFiniteError, all_finite

ACTIVATIONS = ("linear", "relu", "leaky_relu", "tanh", "silu", "gelu")
_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class Activation:
    kind: str = "linear"
    slope: float = 0.01

    def __post_init__(self):
        if self.kind not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.kind!r}")
        if self.kind == "leaky_relu" and not 0.0 < self.slope < 1.0:
            raise ValueError("LeakyReLU slope must lie in (0, 1)")

    @classmethod
    def parse(cls, text: str) -> "Activation":
        kind, _, slope = text.strip().lower().replace("leakyrelu", "leaky_relu").partition("(")
        if slope:
            return cls(kind, float(slope.rstrip(")")))
        return cls(kind)

    def __call__(self, z: np.ndarray) -> np.ndarray:
        k = self.kind
        if k == "linear":
            return z
        if k == "relu":
            return np.maximum(z, 0.0)
        if k == "leaky_relu":
            return np.where(z > 0, z, self.slope * z)
        if k == "tanh":
            return np.tanh(z)
        if k == "silu":
            return z / (1.0 + np.exp(-z))
        return 0.5 * z * (1.0 + erf(z / _SQRT2))

    def derivative(self, z: np.ndarray) -> np.ndarray:
        k = self.kind
        if k == "linear":
            return np.ones_like(z)
        if k == "relu":
            return (z > 0).astype(np.float64)
        if k == "leaky_relu":
            return np.where(z > 0, 1.0, self.slope)
        if k == "tanh":
            return 1.0 - np.tanh(z) ** 2
        if k == "silu":
            s = 1.0 / (1.0 + np.exp(-z))
            return s * (1.0 + z * (1.0 - s))
        return 0.5 * (1.0 + erf(z / _SQRT2)) + z * _INV_SQRT_2PI * np.exp(-0.5 * z * z)

    def to_str(self) -> str:
        return f"leaky_relu({self.slope})" if self.kind == "leaky_relu" else self.kind


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    layers: tuple[tuple[int, Activation], ...]
    # affine map of a final Tanh onto the box [lo, hi]
    output_scale: tuple[tuple[float, ...], tuple[float, ...]] | None = None

    def __post_init__(self):
        if self.input_dim < 1 or not self.layers:
            raise ValueError("an MLP needs a positive input dim and at least one layer")
        layers = tuple((int(w), a if isinstance(a, Activation) else Activation.parse(a)) for w, a in self.layers)
        object.__setattr__(self, "layers", layers)
        if any(w < 1 for w, _ in layers):
            raise ValueError("layer widths must be positive")
        if self.output_scale is not None:
            lo, hi = (tuple(float(v) for v in b) for b in self.output_scale)
            if len(lo) != self.output_dim or len(hi) != self.output_dim:
                raise DimensionError("output_scale does not match the output width")
            if not all(a < b for a, b in zip(lo, hi)):
                raise ValueError("output_scale needs lo < hi componentwise")
            if layers[-1][1].kind != "tanh":
                raise ValueError("output_scale requires a Tanh output layer")
            object.__setattr__(self, "output_scale", (lo, hi))

    @classmethod
    def from_string(cls, input_dim: int, text: str, output_scale=None) -> "MlpSpec":
        """Build from ``"relu:400,relu:300,linear:8"``."""
        layers = []
        for item in text.split(","):
            act, _, width = item.strip().rpartition(":")
            layers.append((int(width), Activation.parse(act)))
        return cls(input_dim, tuple(layers), output_scale)

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0]

    @property
    def shapes(self) -> list[tuple[int, int]]:
        dims = [self.input_dim] + [w for w, _ in self.layers]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.shapes)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "layers": [[w, a.to_str()] for w, a in self.layers],
            "output_scale": None if self.output_scale is None else [list(self.output_scale[0]), list(self.output_scale[1])],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        scale = d.get("output_scale")
        return cls(d["input_dim"], tuple((w, Activation.parse(a)) for w, a in d["layers"]),
                   None if scale is None else (tuple(scale[0]), tuple(scale[1])))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Tape:
    inputs: list = field(default_factory=list)
    preacts: list = field(default_factory=list)
    squeeze: bool = False
    n_params: int = 0


class Mlp:
    def __init__(self, spec: MlpSpec, params: np.ndarray | None = None):
        self.spec = spec
        if params is None:
            params = np.zeros(spec.n_params)
        params = np.array(params, dtype=np.float64)
        if params.shape != (spec.n_params,):
            raise DimensionError(f"expected {spec.n_params} params, got {params.shape}")
        self._params = params
        self._bind_views()
        if spec.output_scale is not None:
            lo, hi = (np.asarray(b) for b in spec.output_scale)
            self._center = 0.5 * (hi + lo)
            self._half_width = 0.5 * (hi - lo)

    def _bind_views(self):
        self.weights, self.biases = [], []
        offset = 0
        for i, o in self.spec.shapes:
            self.weights.append(self._params[offset:offset + i * o].reshape(i, o))
            offset += i * o
            self.biases.append(self._params[offset:offset + o])
            offset += o

    @property
    def params(self) -> np.ndarray:
        return self._params

    @params.setter
    def params(self, value: np.ndarray):
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self._params.shape:
            raise DimensionError(f"expected {self._params.shape} params, got {value.shape}")
        if not all_finite(value):
            raise NonFiniteError("non-finite network parameters")
        self._params[:] = value

    def copy(self) -> "Mlp":
        return Mlp(self.spec, self._params.copy())

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, Tape]:
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        h = x[None, :] if squeeze else x
        if h.ndim != 2 or h.shape[1] != self.spec.input_dim:
            raise DimensionError(f"expected input width {self.spec.input_dim}, got shape {x.shape}")
        tape = Tape(squeeze=squeeze, n_params=self.spec.n_params)
        for W, b, (_, act) in zip(self.weights, self.biases, self.spec.layers):
            tape.inputs.append(h)
            z = h @ W
            z += b
            tape.preacts.append(z)
            h = act(z)
        if self.spec.output_scale is not None:
            h = self._center + self._half_width * h
        return (h[0] if squeeze else h), tape

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, tape: Tape, dL_dy: np.ndarray, need_params: bool = True) -> tuple[np.ndarray | None, np.ndarray]:
        """Gradients of ``sum(y * dL_dy)`` w.r.t. the flat params and the input.

        Parameter gradients are summed over the batch rows; input gradients
        keep one row per sample.
        """
        if tape.n_params != self.spec.n_params or len(tape.inputs) != len(self.weights):
            raise DimensionError("tape was produced by a different network")
        g = np.asarray(dL_dy, dtype=np.float64)
        g = g[None, :] if tape.squeeze else g
        if g.shape != tape.preacts[-1].shape:
            raise DimensionError(f"dL_dy has shape {g.shape}, expected {tape.preacts[-1].shape}")
        if self.spec.output_scale is not None:
            g = g * self._half_width
        grad = np.empty(self.spec.n_params) if need_params else None
        offsets = self._offsets
        for layer in range(len(self.weights) - 1, -1, -1):
            act = self.spec.layers[layer][1]
            z = tape.preacts[layer]
            if act.kind == "relu":
                g = g * (z > 0)
            elif act.kind != "linear":
                g = g * act.derivative(z)
            if need_params:
                start, mid, end = offsets[layer]
                i, o = self.weights[layer].shape
                np.matmul(tape.inputs[layer].T, g, out=grad[start:mid].reshape(i, o))
                np.sum(g, axis=0, out=grad[mid:end])
            g = g @ self.weights[layer].T
        return grad, (g[0] if tape.squeeze else g)

    @property
    def _offsets(self):
        if self.__dict__.get("_offset_cache") is None:
            self._offset_cache = self._compute_offsets()
        return self._offset_cache

    def _compute_offsets(self):
        out, offset = [], 0
        for i, o in self.spec.shapes:
            out.append((offset, offset + i * o, offset + i * o + o))
            offset += i * o + o
        return out

    def save(self, path: str | Path) -> None:
        save_params(self, path)


def init(spec: MlpSpec, rng: np.random.Generator) -> Mlp:
    """Fan-in scaled uniform weights ``U(-1/sqrt(in), 1/sqrt(in))``, zero biases."""
    net = Mlp(spec)
    for W in net.weights:
        bound = 1.0 / np.sqrt(W.shape[0])
        W[:] = rng.uniform(-bound, bound, size=W.shape)
    return net


def forward(net: Mlp, x: np.ndarray):
    return net.forward(x)


def backward(net: Mlp, tape: Tape, dL_dy: np.ndarray):
    return net.backward(tape, dL_dy)


# Binary parameter file:
#   magic b"PGDKMLP1" | uint32 header length | UTF-8 JSON header | float64 LE params
_MAGIC = b"PGDKMLP1"


def save_params(net: Mlp, path: str | Path) -> None:
    header = json.dumps({"digest": net.spec.digest(), "n_params": net.spec.n_params, "spec": net.spec.to_dict()}).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(net.params.astype("<f8").tobytes())


def load_params(path: str | Path, spec: MlpSpec | None = None) -> Mlp:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError(f"{path} is not an MLP parameter file")
    (hlen,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12:12 + hlen])
    file_spec = MlpSpec.from_dict(header["spec"])
    if spec is not None and spec.digest() != header["digest"]:
        raise DimensionError(f"{path} holds a network with a different spec")
    params = np.frombuffer(data[12 + hlen:], dtype="<f8")
    if params.size != header["n_params"]:
        raise ValueError(f"{path} is truncated")
    return Mlp(file_spec, params.astype(np.float64))

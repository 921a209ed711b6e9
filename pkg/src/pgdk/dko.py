"""Deep Koopman dynamics: a learned lifting with linear lifted evolution.

Data matrices follow the column convention (one sample per column):
``X`` is ``n x N``, ``U`` is ``m x N``. The model predicts
``x+ = C (A g(x) + B u)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nets import Mlp, MlpSpec, init, load_params, save_params
from .numkit import DEFAULT_RIDGE, AdamState, DimensionError, NonFiniteError, adam_step_inplace, ridge_least_squares


class DkoModel:
    def __init__(self, lift_net: Mlp, input_dim: int, ridge_lambda: float = DEFAULT_RIDGE):
        n = lift_net.spec.input_dim
        r = lift_net.spec.output_dim
        if r < n:
            raise DimensionError(f"lift dimension {r} must be >= state dimension {n}")
        self.lift_net = lift_net
        self.state_dim, self.lift_dim, self.input_dim = n, r, input_dim
        self.ridge_lambda = ridge_lambda
        self.A = np.zeros((r, r))
        self.B = np.zeros((r, input_dim))
        self.C = np.zeros((n, r))
        self.iteration = 0

    @classmethod
    def create(cls, spec: MlpSpec, input_dim: int, rng: np.random.Generator, ridge_lambda: float = DEFAULT_RIDGE):
        return cls(init(spec, rng), input_dim, ridge_lambda)

    def set_matrices(self, A, B, C) -> None:
        A, B, C = (np.asarray(M, dtype=np.float64) for M in (A, B, C))
        r, n, m = self.lift_dim, self.state_dim, self.input_dim
        if A.shape != (r, r) or B.shape != (r, m) or C.shape != (n, r):
            raise DimensionError(f"matrix shapes {A.shape}, {B.shape}, {C.shape} do not fit r={r}, n={n}, m={m}")
        if not all(np.all(np.isfinite(M)) for M in (A, B, C)):
            raise NonFiniteError("non-finite Koopman matrices")
        self.A, self.B, self.C = A, B, C

    @property
    def input_jacobian(self) -> np.ndarray:
        """``d x+ / d u = C B``; constant for fixed matrices."""
        return self.C @ self.B


@dataclass
class DkoBatch:
    X: np.ndarray
    U: np.ndarray
    X_next: np.ndarray
    G: np.ndarray | None = None
    G_next: np.ndarray | None = None
    # forward tape of the lifting over [X, X_next]; valid until the lifting changes
    tape: object = None

    @classmethod
    def from_rows(cls, x, u, x_next) -> "DkoBatch":
        """Build from row-per-sample arrays, as stored in the replay memory."""
        return cls(np.asarray(x, dtype=np.float64).T, np.asarray(u, dtype=np.float64).T,
                   np.asarray(x_next, dtype=np.float64).T)

    @property
    def size(self) -> int:
        return self.X.shape[1]


def lift_batch(model: DkoModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != model.state_dim:
        raise DimensionError(f"expected {model.state_dim} x N states, got {X.shape}")
    if X.shape[1] == 0:
        return np.zeros((model.lift_dim, 0))
    return model.lift_net(X.T).T


def _relift(model: DkoModel, batch: DkoBatch) -> None:
    _check_batch(model, batch)
    N = batch.size
    if N == 0:
        batch.G = batch.G_next = np.zeros((model.lift_dim, 0))
        batch.tape = None
        return
    both, batch.tape = model.lift_net.forward(np.hstack([batch.X, batch.X_next]).T)
    batch.G, batch.G_next = both[:N].T, both[N:].T


def _check_batch(model: DkoModel, batch: DkoBatch) -> None:
    n, m = model.state_dim, model.input_dim
    N = batch.X.shape[1]
    if batch.X.shape != (n, N) or batch.X_next.shape != (n, N) or batch.U.shape != (m, N):
        raise DimensionError(f"batch shapes {batch.X.shape}, {batch.U.shape}, {batch.X_next.shape} "
                             f"inconsistent with n={n}, m={m}")


def solve_matrices(model: DkoModel, batch: DkoBatch) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Least-squares A, B, C for the batch under the current lifting; replaces the model's matrices."""
    if batch.size < 1:
        raise ValueError("cannot solve Koopman matrices from an empty batch")
    _relift(model, batch)
    r = model.lift_dim
    AB = ridge_least_squares(batch.G_next, np.vstack([batch.G, batch.U]), model.ridge_lambda)
    C = ridge_least_squares(batch.X_next, batch.G_next, model.ridge_lambda)
    model.set_matrices(AB[:, :r], AB[:, r:], C)
    return model.A, model.B, model.C


def _residuals(model: DkoModel, batch: DkoBatch):
    lifted_res = batch.G_next - model.A @ batch.G - model.B @ batch.U
    recon_res = batch.X_next - model.C @ batch.G_next
    return lifted_res, recon_res


def dko_loss(model: DkoModel, batch: DkoBatch) -> float:
    """``(||G+ - A G - B U||_F^2 + ||X+ - C G+||_F^2) / (2N)`` at the current lifting."""
    _check_batch(model, batch)
    if batch.size == 0:
        return 0.0
    G, G_next = lift_batch(model, batch.X), lift_batch(model, batch.X_next)
    lifted_res = G_next - model.A @ G - model.B @ batch.U
    recon_res = batch.X_next - model.C @ G_next
    return float((np.sum(lifted_res**2) + np.sum(recon_res**2)) / (2.0 * batch.size))


def dko_loss_grad(model: DkoModel, batch: DkoBatch) -> tuple[float, np.ndarray]:
    """Loss and its gradient w.r.t. the lifting parameters, with A, B, C held fixed.

    A lifting cached by :func:`solve_matrices` is reused, so the network must
    not change between the two calls.
    """
    if batch.tape is None:
        _relift(model, batch)
    N = batch.size
    lifted_res, recon_res = _residuals(model, batch)
    loss = float((np.sum(lifted_res**2) + np.sum(recon_res**2)) / (2.0 * N))
    dG = -(model.A.T @ lifted_res) / N
    dG_next = (lifted_res - model.C.T @ recon_res) / N
    grad, _ = model.lift_net.backward(batch.tape, np.vstack([dG.T, dG_next.T]))
    return loss, grad


def update_lift_params(model: DkoModel, batch: DkoBatch, adam: AdamState) -> tuple[AdamState, float]:
    """One optimizer step on the lifting network; returns the new Adam state and the pre-step loss.

    Reuses the lifting cached on ``batch`` by :func:`solve_matrices` when present.
    """
    loss, grad = dko_loss_grad(model, batch)
    adam_step_inplace(adam, model.lift_net.params, grad)
    batch.G = batch.G_next = batch.tape = None
    model.iteration += 1
    return adam, loss


def predict_next(model: DkoModel, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """``C (A g(x) + B u)`` for one state (1-D) or a row batch (2-D)."""
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if x.shape[-1] != model.state_dim or u.shape[-1] != model.input_dim:
        raise DimensionError(f"state/input widths {x.shape}, {u.shape} do not match the model")
    g = model.lift_net(x)
    return (g @ model.A.T + u @ model.B.T) @ model.C.T


def save_model(model: DkoModel, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_params(model.lift_net, directory / "lift.bin")
    blocks = np.concatenate([model.A.ravel(), model.B.ravel(), model.C.ravel()]).astype("<f8")
    (directory / "koopman.bin").write_bytes(blocks.tobytes())
    manifest = {
        "state_dim": model.state_dim, "lift_dim": model.lift_dim, "input_dim": model.input_dim,
        "ridge_lambda": model.ridge_lambda, "iteration": model.iteration,
        "blocks": ["A", "B", "C"], "layout": "row-major float64 little-endian",
    }
    (directory / "dko.json").write_text(json.dumps(manifest, indent=2))


def load_model(directory: str | Path) -> DkoModel:
    directory = Path(directory)
    manifest = json.loads((directory / "dko.json").read_text())
    model = DkoModel(load_params(directory / "lift.bin"), manifest["input_dim"], manifest["ridge_lambda"])
    if (model.state_dim, model.lift_dim) != (manifest["state_dim"], manifest["lift_dim"]):
        raise DimensionError("lifting network does not match the manifest")
    r, n, m = model.lift_dim, model.state_dim, model.input_dim
    flat = np.frombuffer((directory / "koopman.bin").read_bytes(), dtype="<f8").astype(np.float64)
    if flat.size != r * r + r * m + n * r:
        raise ValueError("koopman.bin size does not match the manifest")
    model.set_matrices(flat[:r * r].reshape(r, r), flat[r * r:r * r + r * m].reshape(r, m), flat[r * r + r * m:].reshape(n, r))
    model.iteration = manifest["iteration"]
    return model

"""
Iterative baseline: every weight trained by backpropagation through the full Q-step unroll.

Note:
- Covers the fully connected, LSTM and GRU kinds with the same cell equations and
  activations as the hidden-state kernels, vectorised over a mini-batch
- Gradients are hand-derived; gradient_check compares them with central differences
"""

import time
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from app.architectures import ArchitectureSpec, ArchKind, init_weights
from app.dataset import TimeSeriesDataset
from app.errors import DivergenceError, InvalidSpecError
from app.tensor import Activation, SeededRng, activation_array
from application_sdk.observability.logger_adaptor import get_logger

logger = get_logger(__name__)

Params = Dict[str, np.ndarray]

SUPPORTED = (ArchKind.FULLY_CONNECTED, ArchKind.LSTM, ArchKind.GRU)


class Optimizer(str, Enum):
    SGD = "sgd"
    ADAM = "adam"


@dataclass(frozen=True)
class BpttConfig:
    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: Optimizer = Optimizer.ADAM
    loss: str = "mse"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "optimizer", Optimizer(self.optimizer))
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidSpecError(
                f"epochs and batch_size must be at least 1, got {self.epochs} and {self.batch_size}"
            )
        if self.loss != "mse":
            raise InvalidSpecError(f"only the mse loss is supported, got {self.loss}")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    seconds: float
    mse: float


@dataclass(frozen=True)
class TrainTrace:
    epochs: Tuple[EpochRecord, ...]

    @property
    def total_seconds(self) -> float:
        return self.epochs[-1].seconds if self.epochs else 0.0

    @property
    def mse(self) -> List[float]:
        return [record.mse for record in self.epochs]


@dataclass(eq=False)
class BpttModel:
    spec: ArchitectureSpec
    params: Params

    def predict(self, X: np.ndarray) -> np.ndarray:
        y_hat, _ = forward(self.spec, self.params, X)
        return y_hat


def _derivative(kind: Activation, y: np.ndarray) -> np.ndarray:
    """Activation derivative expressed through the activation output y."""
    if kind is Activation.SIGMOID:
        return y * (1.0 - y)
    return 1.0 - y * y


def initial_params(spec: ArchitectureSpec, rng: SeededRng) -> Params:
    if spec.kind not in SUPPORTED:
        raise InvalidSpecError(f"backpropagation baseline does not support {spec.kind.value}")
    weights = init_weights(spec, rng)
    params = {name: np.array(array) for name, array in weights.arrays().items()}
    # readout starts small so early epochs are not dominated by it
    params["beta"] = rng.uniform(spec.M, -1.0, 1.0) / spec.M
    return params


def forward(spec: ArchitectureSpec, params: Params, X: np.ndarray) -> Tuple[np.ndarray, dict]:
    """Run the unrolled recurrence over a batch X (B x S x Q); returns y_hat and a cache."""
    B, Q, M = X.shape[0], spec.Q, spec.M
    acts = spec.activations
    hs = np.zeros((Q + 1, B, M))
    cache: dict = {"hs": hs}

    if spec.kind is ArchKind.FULLY_CONNECTED:
        A = params["alpha"].sum(axis=1)
        cache["A"] = A
        for t in range(1, Q + 1):
            pre = X[:, :, t - 1] @ params["W"] + params["b"]
            for k in range(1, t):
                pre = pre + A[:, k - 1] * hs[t - k]
            hs[t] = activation_array(acts.g, pre)

    elif spec.kind is ArchKind.LSTM:
        gW, gu, gb = params["gate_W"], params["gate_u"], params["gate_b"]
        cs = np.zeros((Q + 1, B, M))
        gates = np.zeros((5, Q + 1, B, M))
        kinds = (acts.g_o, acts.g_lambda, acts.g_in, acts.g_c)
        for t in range(1, Q + 1):
            xt, hp = X[:, :, t - 1], hs[t - 1]
            for g, kind in enumerate(kinds):
                gates[g, t] = activation_array(kind, xt @ gW[g] + gu[g] * hp + gb[g])
            o, forget, admit, candidate = gates[0, t], gates[1, t], gates[2, t], gates[3, t]
            cs[t] = forget * cs[t - 1] + admit * candidate
            gates[4, t] = activation_array(acts.g_f, cs[t])
            hs[t] = o * gates[4, t]
        cache.update(cs=cs, gates=gates)

    else:
        gW, gu, gb = params["gate_W"], params["gate_u"], params["gate_b"]
        gates = np.zeros((3, Q + 1, B, M))
        for t in range(1, Q + 1):
            xt, hp = X[:, :, t - 1], hs[t - 1]
            z = activation_array(acts.g_z, xt @ gW[1] + gu[1] * hp + gb[1])
            r = activation_array(acts.g_r, xt @ gW[2] + gu[2] * hp + gb[2])
            candidate = activation_array(acts.g_f, xt @ gW[0] + gu[0] * (r * hp) + gb[0])
            gates[0, t], gates[1, t], gates[2, t] = candidate, z, r
            hs[t] = (1.0 - z) * hp + z * candidate
        cache["gates"] = gates

    return hs[Q] @ params["beta"], cache


def loss_and_grads(
    spec: ArchitectureSpec, params: Params, X: np.ndarray, Y: np.ndarray
) -> Tuple[float, Params]:
    """Mean squared error of the batch and its gradient with respect to every parameter."""
    B, Q = X.shape[0], spec.Q
    acts = spec.activations
    y_hat, cache = forward(spec, params, X)
    residual = y_hat - Y
    loss = float(np.mean(residual**2))
    hs = cache["hs"]
    grads = {name: np.zeros_like(value) for name, value in params.items()}

    dy = 2.0 * residual / B
    grads["beta"] = hs[Q].T @ dy
    dh = np.zeros_like(hs)
    dh[Q] = np.outer(dy, params["beta"])

    if spec.kind is ArchKind.FULLY_CONNECTED:
        A = cache["A"]
        dA = np.zeros_like(A)
        for t in range(Q, 0, -1):
            dpre = dh[t] * _derivative(acts.g, hs[t])
            grads["W"] += X[:, :, t - 1].T @ dpre
            grads["b"] += dpre.sum(axis=0)
            for k in range(1, t):
                dA[:, k - 1] += (dpre * hs[t - k]).sum(axis=0)
                dh[t - k] += dpre * A[:, k - 1]
        grads["alpha"] = np.repeat(dA[:, np.newaxis, :], spec.M, axis=1)

    elif spec.kind is ArchKind.LSTM:
        gu = params["gate_u"]
        cs, gates = cache["cs"], cache["gates"]
        kinds = (acts.g_o, acts.g_lambda, acts.g_in, acts.g_c)
        dc = np.zeros_like(hs[0])
        for t in range(Q, 0, -1):
            xt, hp = X[:, :, t - 1], hs[t - 1]
            o, forget, admit, candidate, squashed = (gates[g, t] for g in range(5))
            dc = dc + dh[t] * o * _derivative(acts.g_f, squashed)
            d_gate = (
                dh[t] * squashed,
                dc * cs[t - 1],
                dc * candidate,
                dc * admit,
            )
            dc = dc * forget
            for g, kind in enumerate(kinds):
                da = d_gate[g] * _derivative(kind, gates[g, t])
                grads["gate_W"][g] += xt.T @ da
                grads["gate_b"][g] += da.sum(axis=0)
                grads["gate_u"][g] += (da * hp).sum(axis=0)
                dh[t - 1] += da * gu[g]

    else:
        gu = params["gate_u"]
        gates = cache["gates"]
        for t in range(Q, 0, -1):
            xt, hp = X[:, :, t - 1], hs[t - 1]
            candidate, z, r = gates[0, t], gates[1, t], gates[2, t]
            dz = dh[t] * (candidate - hp)
            dh[t - 1] += dh[t] * (1.0 - z)
            da_f = dh[t] * z * _derivative(acts.g_f, candidate)
            grads["gate_W"][0] += xt.T @ da_f
            grads["gate_b"][0] += da_f.sum(axis=0)
            grads["gate_u"][0] += (da_f * r * hp).sum(axis=0)
            dr = da_f * gu[0] * hp
            dh[t - 1] += da_f * gu[0] * r
            for g, (d_out, kind) in ((1, (dz, acts.g_z)), (2, (dr, acts.g_r))):
                da = d_out * _derivative(kind, gates[g, t])
                grads["gate_W"][g] += xt.T @ da
                grads["gate_b"][g] += da.sum(axis=0)
                grads["gate_u"][g] += (da * hp).sum(axis=0)
                dh[t - 1] += da * gu[g]

    return loss, grads


def gradient_check(
    spec: ArchitectureSpec,
    params: Params,
    X: np.ndarray,
    Y: np.ndarray,
    eps: float = 1e-6,
) -> Dict[str, float]:
    """Relative error ||g - g_fd|| / (||g|| + ||g_fd||) per parameter array."""
    _, grads = loss_and_grads(spec, params, X, Y)
    errors = {}
    for name, value in params.items():
        numeric = np.zeros_like(value)
        flat, flat_numeric = value.reshape(-1), numeric.reshape(-1)
        for k in range(flat.size):
            original = flat[k]
            flat[k] = original + eps
            plus, _ = loss_and_grads(spec, params, X, Y)
            flat[k] = original - eps
            minus, _ = loss_and_grads(spec, params, X, Y)
            flat[k] = original
            flat_numeric[k] = (plus - minus) / (2.0 * eps)
        scale = np.linalg.norm(grads[name]) + np.linalg.norm(numeric)
        errors[name] = 0.0 if scale < 1e-12 else float(np.linalg.norm(grads[name] - numeric) / scale)
    return errors


class _Adam:
    def __init__(self, params: Params, cfg: BpttConfig):
        self.cfg = cfg
        self.m = {name: np.zeros_like(v) for name, v in params.items()}
        self.v = {name: np.zeros_like(v) for name, v in params.items()}
        self.steps = 0

    def update(self, params: Params, grads: Params) -> None:
        cfg = self.cfg
        self.steps += 1
        correction1 = 1.0 - cfg.adam_beta1**self.steps
        correction2 = 1.0 - cfg.adam_beta2**self.steps
        for name, grad in grads.items():
            self.m[name] = cfg.adam_beta1 * self.m[name] + (1.0 - cfg.adam_beta1) * grad
            self.v[name] = cfg.adam_beta2 * self.v[name] + (1.0 - cfg.adam_beta2) * grad * grad
            m_hat = self.m[name] / correction1
            v_hat = self.v[name] / correction2
            params[name] -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def bptt_fit(
    ds: TimeSeriesDataset,
    spec: ArchitectureSpec,
    bcfg: BpttConfig,
    seed: int,
) -> Tuple[BpttModel, TrainTrace]:
    """Train every weight of `spec` with mini-batch gradient descent on the training rows.

    Args:
        ds: Windowed, normalised dataset; only its training rows are used.
        spec: A fully connected, LSTM or GRU architecture.
        bcfg: Optimiser settings.
        seed: Seeds both the initial weights and the batch order.

    Returns:
        Tuple[BpttModel, TrainTrace]: The trained model and the per-epoch trace;
        trace times count training only, not the per-epoch MSE evaluation.
    """
    rng = SeededRng(seed)
    params = initial_params(spec, rng)
    X, Y = ds.X[: ds.n_train], ds.Y[: ds.n_train]
    adam = _Adam(params, bcfg) if bcfg.optimizer is Optimizer.ADAM else None

    records = []
    elapsed = 0.0
    for epoch in range(1, bcfg.epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(X.shape[0])
        for first in range(0, order.size, bcfg.batch_size):
            batch = order[first : first + bcfg.batch_size]
            loss, grads = loss_and_grads(spec, params, X[batch], Y[batch])
            if not np.isfinite(loss):
                logger.error(f"loss diverged at epoch {epoch}")
                raise DivergenceError(
                    f"loss became {loss} at epoch {epoch}; lower the learning rate "
                    f"(currently {bcfg.learning_rate})"
                )
            if adam is not None:
                adam.update(params, grads)
            else:
                for name, grad in grads.items():
                    params[name] -= bcfg.learning_rate * grad
        elapsed += time.perf_counter() - started

        y_hat, _ = forward(spec, params, X)
        mse = float(np.mean((y_hat - Y) ** 2))
        if not np.isfinite(mse):
            raise DivergenceError(f"training MSE became {mse} at epoch {epoch}; lower the learning rate")
        records.append(EpochRecord(epoch=epoch, seconds=elapsed, mse=mse))
        logger.debug(f"bptt epoch {epoch}: mse={mse:.6f} t={elapsed:.3f}s")

    logger.info(
        f"bptt {spec.kind.value} M={spec.M}: {bcfg.epochs} epochs in {elapsed:.3f}s, "
        f"final mse={records[-1].mse:.6f}"
    )
    return BpttModel(spec=spec, params=params), TrainTrace(epochs=tuple(records))


def time_to_target(trace: TrainTrace, target_mse: float) -> Optional[float]:
    """First cumulative time with training MSE <= target_mse, or None if never reached."""
    for record in trace.epochs:
        if record.mse <= target_mse:
            return record.seconds
    return None

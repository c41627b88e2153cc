"""
The six recurrent cell programs and the fixed random weights they run on.

Note:
- Each cell program computes one hidden value h_ij[t] from the input projection of
  neuron j, its own history and column-j weights only, which is what lets the
  backends give every (i, j) cell to an independent work item
- Jordan and NARMAX read the teacher signal y(tau) instead of their own prediction,
  and NARMAX error feedback is zero while H is built
- LSTM and GRU recurrent gate weights are diagonal: one scalar per neuron and gate
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np
from numba import njit

from app.constants import INIT_HIGH, INIT_LOW
from app.errors import DimensionError, InvalidSpecError
from app.tensor import Activation, SeededRng, activate, freeze, uniform_fill
from application_sdk.observability.logger_adaptor import get_logger

logger = get_logger(__name__)

ELMAN = 0
JORDAN = 1
NARMAX = 2
FULLY_CONNECTED = 3
LSTM = 4
GRU = 5

# positions inside the activation code vector handed to the kernels
ACT_G = 0
ACT_O = 1
ACT_LAMBDA = 2
ACT_IN = 3
ACT_C = 4
ACT_F = 5
ACT_Z = 6
ACT_R = 7

LSTM_GATES = ("o", "lambda", "in", "c")
GRU_GATES = ("f", "z", "r")


class ArchKind(str, Enum):
    ELMAN = "elman"
    JORDAN = "jordan"
    NARMAX = "narmax"
    FULLY_CONNECTED = "fully"
    LSTM = "lstm"
    GRU = "gru"

    @property
    def code(self) -> int:
        return _KIND_CODES[self]

    @property
    def gates(self) -> Tuple[str, ...]:
        if self is ArchKind.LSTM:
            return LSTM_GATES
        if self is ArchKind.GRU:
            return GRU_GATES
        return ()

    @property
    def is_gated(self) -> bool:
        return bool(self.gates)


_KIND_CODES = {
    ArchKind.ELMAN: ELMAN,
    ArchKind.JORDAN: JORDAN,
    ArchKind.NARMAX: NARMAX,
    ArchKind.FULLY_CONNECTED: FULLY_CONNECTED,
    ArchKind.LSTM: LSTM,
    ArchKind.GRU: GRU,
}


@dataclass(frozen=True)
class Activations:
    g: Activation = Activation.SIGMOID
    g_o: Activation = Activation.SIGMOID
    g_lambda: Activation = Activation.SIGMOID
    g_in: Activation = Activation.SIGMOID
    g_c: Activation = Activation.TANH
    g_f: Activation = Activation.TANH
    g_z: Activation = Activation.SIGMOID
    g_r: Activation = Activation.SIGMOID

    def codes(self) -> np.ndarray:
        return np.array(
            [
                self.g.code,
                self.g_o.code,
                self.g_lambda.code,
                self.g_in.code,
                self.g_c.code,
                self.g_f.code,
                self.g_z.code,
                self.g_r.code,
            ],
            dtype=np.int64,
        )

    def to_dict(self) -> Dict[str, str]:
        return {name: getattr(self, name).value for name in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, values: Dict[str, str]) -> "Activations":
        return cls(**{name: Activation(kind) for name, kind in values.items()})


@dataclass(frozen=True)
class ArchitectureSpec:
    kind: ArchKind
    M: int
    Q: int
    S: int = 1
    F: int = 0
    R: int = 0
    activations: Activations = field(default_factory=Activations)

    def __post_init__(self):
        object.__setattr__(self, "kind", ArchKind(self.kind))
        if self.M < 1 or self.Q < 1 or self.S < 1:
            raise InvalidSpecError(
                f"M, Q and S must be at least 1, got M={self.M} Q={self.Q} S={self.S}"
            )
        if self.F < 0 or self.R < 0:
            raise InvalidSpecError(f"F and R must be non-negative, got F={self.F} R={self.R}")

    @property
    def gate_count(self) -> int:
        return len(self.kind.gates)

    def to_dict(self) -> Dict[str, object]:
        return {
            "kind": self.kind.value,
            "M": self.M,
            "Q": self.Q,
            "S": self.S,
            "F": self.F,
            "R": self.R,
            "activations": self.activations.to_dict(),
        }


@dataclass(frozen=True, eq=False)
class WeightSet:
    """Fixed random weights of one architecture plus the readout beta.

    Shapes: W (S, M) and b (M,) for the non-gated kinds; alpha (M, Q) for
    Elman/Jordan and (M, M, Q) for the fully connected kind; w_out (M, F) and
    w_err (M, R) for NARMAX; gate_W (G, S, M), gate_u (G, M) and gate_b (G, M)
    for LSTM (gates o, lambda, in, c) and GRU (gates f, z, r).
    """

    W: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None
    alpha: Optional[np.ndarray] = None
    w_out: Optional[np.ndarray] = None
    w_err: Optional[np.ndarray] = None
    gate_W: Optional[np.ndarray] = None
    gate_u: Optional[np.ndarray] = None
    gate_b: Optional[np.ndarray] = None
    beta: Optional[np.ndarray] = None

    def __post_init__(self):
        for name, array in self.arrays().items():
            if name != "beta":
                object.__setattr__(
                    self, name, freeze(np.ascontiguousarray(array, dtype=np.float64))
                )
        if self.beta is not None:
            object.__setattr__(self, "beta", np.array(self.beta, dtype=np.float64))

    def arrays(self) -> Dict[str, np.ndarray]:
        names = ("W", "b", "alpha", "w_out", "w_err", "gate_W", "gate_u", "gate_b", "beta")
        return {name: getattr(self, name) for name in names if getattr(self, name) is not None}

    def with_beta(self, beta: np.ndarray) -> "WeightSet":
        return replace(self, beta=np.array(beta, dtype=np.float64))

    def projection_stack(self) -> Tuple[np.ndarray, np.ndarray]:
        """Input weights and biases stacked per gate: (G, S, M) and (G, M)."""
        if self.gate_W is not None:
            return self.gate_W, self.gate_b
        return self.W[np.newaxis], self.b[np.newaxis]

    def equals(self, other: "WeightSet") -> bool:
        mine, theirs = self.arrays(), other.arrays()
        return mine.keys() == theirs.keys() and all(
            np.array_equal(mine[name], theirs[name]) for name in mine
        )

    def validate(self, spec: ArchitectureSpec) -> None:
        expected = expected_shapes(spec)
        actual = {name: a.shape for name, a in self.arrays().items() if name != "beta"}
        if actual != expected:
            logger.error(f"weights {actual} do not match spec shapes {expected}")
            raise DimensionError(f"weight shapes {actual} do not match {expected}")
        if self.beta is not None and self.beta.shape != (spec.M,):
            raise DimensionError(f"beta must have shape ({spec.M},), got {self.beta.shape}")


def expected_shapes(spec: ArchitectureSpec) -> Dict[str, Tuple[int, ...]]:
    M, Q, S = spec.M, spec.Q, spec.S
    if spec.kind.is_gated:
        G = spec.gate_count
        return {"gate_W": (G, S, M), "gate_u": (G, M), "gate_b": (G, M)}
    shapes = {"W": (S, M), "b": (M,)}
    if spec.kind in (ArchKind.ELMAN, ArchKind.JORDAN):
        shapes["alpha"] = (M, Q)
    elif spec.kind is ArchKind.FULLY_CONNECTED:
        shapes["alpha"] = (M, M, Q)
    else:
        shapes["w_out"] = (M, spec.F)
        shapes["w_err"] = (M, spec.R)
    return shapes


def init_weights(
    spec: ArchitectureSpec,
    rng: SeededRng,
    lo: float = INIT_LOW,
    hi: float = INIT_HIGH,
) -> WeightSet:
    """Draw every fixed weight of `spec` uniformly from [lo, hi).

    Draw order is W, b, then alpha or (w_out, w_err) for the non-gated kinds,
    and gate_W, gate_u, gate_b for the gated ones. Zero-length NARMAX feedback
    arrays consume no draws.
    """
    M, Q, S = spec.M, spec.Q, spec.S
    if spec.kind.is_gated:
        G = spec.gate_count
        return WeightSet(
            gate_W=uniform_fill(rng, (G, S, M), lo, hi),
            gate_u=uniform_fill(rng, (G, M), lo, hi),
            gate_b=uniform_fill(rng, (G, M), lo, hi),
        )
    W = uniform_fill(rng, (S, M), lo, hi)
    b = uniform_fill(rng, (M,), lo, hi)
    if spec.kind in (ArchKind.ELMAN, ArchKind.JORDAN):
        return WeightSet(W=W, b=b, alpha=uniform_fill(rng, (M, Q), lo, hi))
    if spec.kind is ArchKind.FULLY_CONNECTED:
        return WeightSet(W=W, b=b, alpha=uniform_fill(rng, (M, M, Q), lo, hi))
    w_out = uniform_fill(rng, (M, spec.F), lo, hi) if spec.F else np.zeros((M, 0))
    w_err = uniform_fill(rng, (M, spec.R), lo, hi) if spec.R else np.zeros((M, 0))
    return WeightSet(W=W, b=b, w_out=w_out, w_err=w_err)


@njit(cache=True, nogil=True)
def elman_cell(pre, alpha, j, history, t, act):
    lags = min(t - 1, alpha.shape[1])
    for k in range(1, lags + 1):
        pre += alpha[j, k - 1] * history[t - 1 - k]
    return activate(act, pre)


@njit(cache=True, nogil=True)
def jordan_cell(pre, alpha, j, signal, t, act):
    lags = min(t - 1, alpha.shape[1])
    for k in range(1, lags + 1):
        pre += alpha[j, k - 1] * signal[t - 1 - k]
    return activate(act, pre)


@njit(cache=True, nogil=True)
def narmax_cell(pre, w_out, w_err, j, signal, errors, t, act):
    for l in range(1, w_out.shape[1] + 1):
        if t - l >= 1:
            pre += w_out[j, l - 1] * signal[t - l - 1]
    for l in range(1, w_err.shape[1] + 1):
        if t - l >= 1:
            pre += w_err[j, l - 1] * errors[t - l - 1]
    return activate(act, pre)


@njit(cache=True, nogil=True)
def fully_connected_cell(pre, alpha, j, history, t, act):
    lags = min(t - 1, alpha.shape[2])
    for k in range(1, lags + 1):
        for l in range(alpha.shape[1]):
            pre += alpha[j, l, k - 1] * history[t - 1 - k]
    return activate(act, pre)


@njit(cache=True, nogil=True)
def lstm_cell(a_o, a_lambda, a_in, a_c, u, b, j, h_prev, c_prev, acts):
    o = activate(acts[ACT_O], a_o + u[0, j] * h_prev + b[0, j])
    forget = activate(acts[ACT_LAMBDA], a_lambda + u[1, j] * h_prev + b[1, j])
    admit = activate(acts[ACT_IN], a_in + u[2, j] * h_prev + b[2, j])
    candidate = activate(acts[ACT_C], a_c + u[3, j] * h_prev + b[3, j])
    c = forget * c_prev + admit * candidate
    return o * activate(acts[ACT_F], c), c


@njit(cache=True, nogil=True)
def gru_cell(a_f, a_z, a_r, u, b, j, h_prev, acts):
    z = activate(acts[ACT_Z], a_z + u[1, j] * h_prev + b[1, j])
    r = activate(acts[ACT_R], a_r + u[2, j] * h_prev + b[2, j])
    candidate = activate(acts[ACT_F], a_f + u[0, j] * (r * h_prev) + b[0, j])
    return (1.0 - z) * h_prev + z * candidate


@njit(cache=True, nogil=True)
def project(W, j, x):
    acc = 0.0
    for s in range(W.shape[0]):
        acc += W[s, j] * x[s]
    return acc


@dataclass(frozen=True, eq=False)
class CellContext:
    """One (row, column) cell at time t, as seen by its owning work item.

    `history[tau - 1]` holds h_ij[tau] for tau < t and `signal[tau - 1]` the
    teacher value y(tau); `errors` holds NARMAX error feedback e(tau) and
    defaults to zeros.
    """

    row: int
    col: int
    t: int
    x: np.ndarray
    history: np.ndarray = field(default_factory=lambda: np.zeros(0))
    signal: np.ndarray = field(default_factory=lambda: np.zeros(0))
    errors: Optional[np.ndarray] = None
    c_prev: float = 0.0

    def __post_init__(self):
        if self.t < 1:
            raise DimensionError(f"t starts at 1, got {self.t}")
        width = max(self.t - 1, 1)
        for name in ("history", "signal"):
            values = np.zeros(width)
            given = np.asarray(getattr(self, name), dtype=np.float64)
            values[: min(given.size, width)] = given[:width]
            object.__setattr__(self, name, values)
        errors = np.zeros(width)
        if self.errors is not None:
            given = np.asarray(self.errors, dtype=np.float64)
            errors[: min(given.size, width)] = given[:width]
        object.__setattr__(self, "errors", errors)
        object.__setattr__(self, "x", np.ascontiguousarray(self.x, dtype=np.float64))

    def past(self, tau: int) -> float:
        """h_ij[tau], zero for tau <= 0."""
        return float(self.history[tau - 1]) if 1 <= tau < self.t else 0.0

    @property
    def h_prev(self) -> float:
        return self.past(self.t - 1)


def _require(spec: ArchitectureSpec, kind: ArchKind, ctx: CellContext) -> None:
    if spec.kind is not kind:
        raise InvalidSpecError(f"step for {kind.value} called with a {spec.kind.value} spec")
    if ctx.x.shape != (spec.S,):
        raise DimensionError(f"input slice must have shape ({spec.S},), got {ctx.x.shape}")


def step_elman(ctx: CellContext, spec: ArchitectureSpec, weights: WeightSet) -> float:
    _require(spec, ArchKind.ELMAN, ctx)
    pre = project(weights.W, ctx.col, ctx.x) + weights.b[ctx.col]
    return float(
        elman_cell(pre, weights.alpha, ctx.col, ctx.history, ctx.t, spec.activations.g.code)
    )


def step_jordan(ctx: CellContext, spec: ArchitectureSpec, weights: WeightSet) -> float:
    _require(spec, ArchKind.JORDAN, ctx)
    pre = project(weights.W, ctx.col, ctx.x) + weights.b[ctx.col]
    return float(
        jordan_cell(pre, weights.alpha, ctx.col, ctx.signal, ctx.t, spec.activations.g.code)
    )


def step_narmax(ctx: CellContext, spec: ArchitectureSpec, weights: WeightSet) -> float:
    _require(spec, ArchKind.NARMAX, ctx)
    pre = project(weights.W, ctx.col, ctx.x) + weights.b[ctx.col]
    return float(
        narmax_cell(
            pre,
            weights.w_out,
            weights.w_err,
            ctx.col,
            ctx.signal,
            ctx.errors,
            ctx.t,
            spec.activations.g.code,
        )
    )


def step_fully_connected(
    ctx: CellContext, spec: ArchitectureSpec, weights: WeightSet
) -> float:
    _require(spec, ArchKind.FULLY_CONNECTED, ctx)
    pre = project(weights.W, ctx.col, ctx.x) + weights.b[ctx.col]
    return float(
        fully_connected_cell(
            pre, weights.alpha, ctx.col, ctx.history, ctx.t, spec.activations.g.code
        )
    )


def step_lstm(
    ctx: CellContext, spec: ArchitectureSpec, weights: WeightSet
) -> Tuple[float, float]:
    _require(spec, ArchKind.LSTM, ctx)
    a = [project(weights.gate_W[g], ctx.col, ctx.x) for g in range(4)]
    h, c = lstm_cell(
        a[0],
        a[1],
        a[2],
        a[3],
        weights.gate_u,
        weights.gate_b,
        ctx.col,
        ctx.h_prev,
        ctx.c_prev,
        spec.activations.codes(),
    )
    return float(h), float(c)


def step_gru(ctx: CellContext, spec: ArchitectureSpec, weights: WeightSet) -> float:
    _require(spec, ArchKind.GRU, ctx)
    a = [project(weights.gate_W[g], ctx.col, ctx.x) for g in range(3)]
    return float(
        gru_cell(
            a[0],
            a[1],
            a[2],
            weights.gate_u,
            weights.gate_b,
            ctx.col,
            ctx.h_prev,
            spec.activations.codes(),
        )
    )

"""
Counting interpreter: a pure-Python, deterministic replay of the basic and tiled backends.

Note:
- Every scalar load, store and arithmetic operation the compiled cell program executes
  is tallied per (i, j) cell; the cell arithmetic runs in the same order, so the
  replayed H matches the kernels'
- Tiled blocks move their shared operands through a StagingBuffer, so a value consumed
  before the barrier that publishes it raises BarrierViolationError
- H goes through a WriteShadow; an entry written other than exactly once raises
  WriteDisciplineError
- Refused under the release profile (RELM_PROFILE=release)

Executed counts, per cell and step t:
- one read per scalar load: x[s] once per s, then W, bias, recurrence weights and
  history or teacher values; history loads hit H in the basic backend
- one FLOP per scalar add or multiply; activation functions are not FLOPs
- one write, the H store

Work the closed forms charge but the cell program never executes is tallied apart, as
ClosedFormCharge events, so executed counts plus charges reconcile with the closed forms.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Hashable, List, Optional, Set

import numpy as np

from app.architectures import (
    ACT_C,
    ACT_F,
    ACT_G,
    ACT_IN,
    ACT_LAMBDA,
    ACT_O,
    ACT_R,
    ACT_Z,
    ArchitectureSpec,
    ArchKind,
    WeightSet,
)
from app.constants import RELEASE_PROFILE, profile
from app.dataset import TimeSeriesDataset
from app.errors import BarrierViolationError, CountingModeError, WriteDisciplineError
from app.hidden import Backend, ExecConfig, KernelInputs, block_grid, kernel_inputs
from app.tensor import activate
from application_sdk.observability.logger_adaptor import get_logger

logger = get_logger(__name__)


class ClosedFormCharge(Enum):
    """Work present in the closed forms and absent from the cell program."""

    # Elman, Jordan: the k = t recurrence term against h(0) = y(0) = 0
    ZERO_LAG = "zero_lag"
    # Jordan: every fed-back y(t-k) rebuilt through the readout, 2M loads and
    # 2SM + M FLOPs in place of one teacher load and a multiply-add
    READOUT_REBUILD = "readout_rebuild"
    # fully connected: lags k = t..Q against zero history
    PADDED_LAGS = "padded_lags"
    # fully connected: Q per-lag partial sums merged with Q - 1 adds per step
    LAG_MERGE = "lag_merge"
    # LSTM reloads h(t-1) per gate plus c(t-1); GRU reloads h(t-1) twice per step
    STATE_LOADS = "state_loads"
    # LSTM stores four gate values per step, GRU two
    GATE_STORES = "gate_stores"
    # LSTM counts two squashers per step as FLOPs, GRU three
    SQUASH_FLOPS = "squash_flops"
    # GRU counts a projection multiply-add as one FLOP
    FUSED_PROJECTION = "fused_projection"


@dataclass
class Events:
    reads: int = 0
    writes: int = 0
    flops: int = 0

    def add(self, other: "Events") -> None:
        self.reads += other.reads
        self.writes += other.writes
        self.flops += other.flops


@dataclass
class CellTally:
    """Memory and arithmetic events of one (i, j) work item.

    Stream loads are global reads in the basic backend and staged reads in the
    tiled one; history loads hit global H in the basic backend and the cell-local
    buffer in the tiled one.
    """

    global_reads: int = 0
    staged_reads: int = 0
    local_reads: int = 0
    bias_keys: Set[Hashable] = field(default_factory=set)
    writes: int = 0
    flops: int = 0
    charges: Dict[ClosedFormCharge, Events] = field(default_factory=dict)

    def amortised_reads(self, tile_width: int) -> int:
        """Global reads of a tiled cell: staged traffic shared by tile_width**2 cells, plus biases."""
        return math.ceil(self.staged_reads / (tile_width * tile_width)) + len(self.bias_keys)


class StagingBuffer:
    """Block-shared scratch with barrier epochs."""

    def __init__(self, name: str):
        self.name = name
        self.epoch = 0
        self._slots: Dict[Hashable, tuple] = {}

    def store(self, key: Hashable, value: float) -> None:
        self._slots[key] = (value, self.epoch)

    def barrier(self) -> None:
        self.epoch += 1

    def load(self, key: Hashable) -> float:
        if key not in self._slots:
            raise BarrierViolationError(f"{self.name}: {key} was never staged")
        value, stamp = self._slots[key]
        if stamp >= self.epoch:
            raise BarrierViolationError(
                f"{self.name}: {key} read in the phase that stored it"
            )
        return value


class WriteShadow:
    """Write counter laid over H."""

    def __init__(self, H: np.ndarray):
        self.H = H
        self.counts = np.zeros(H.shape, dtype=np.int64)

    def write(self, i: int, j: int, t: int, value: float) -> None:
        self.counts[i, j, t - 1] += 1
        if self.counts[i, j, t - 1] > 1:
            raise WriteDisciplineError(f"H[{i}, {j}, t={t}] written twice")
        self.H[i, j, t - 1] = value

    def verify(self) -> None:
        wrong = np.argwhere(self.counts != 1)
        if wrong.size:
            i, j, t = wrong[0]
            raise WriteDisciplineError(
                f"{len(wrong)} H entries not written exactly once, first at H[{i}, {j}, t={t + 1}]"
            )


class _Reader:
    """Operand access and event tally for one cell."""

    def __init__(
        self, inputs: KernelInputs, tally: CellTally, staging: Optional[StagingBuffer] = None
    ):
        self.inputs = inputs
        self.tally = tally
        self.staging = staging
        self.history: List[float] = []
        self.c = 0.0

    def stream(self, name: str, index: tuple) -> float:
        if self.staging is not None:
            self.tally.staged_reads += 1
            return self.staging.load((name, *index))
        self.tally.global_reads += 1
        return float(getattr(self.inputs, name)[index])

    def bias(self, g: int, j: int) -> float:
        key = ("in_b", g, j)
        self.tally.bias_keys.add(key)
        if self.staging is not None:
            return self.staging.load(key)
        self.tally.global_reads += 1
        return float(self.inputs.in_b[g, j])

    def past(self, tau: int) -> float:
        """h[tau] of this cell; callers only ask for tau >= 1."""
        if self.staging is not None:
            self.tally.local_reads += 1
        else:
            self.tally.global_reads += 1
        return self.history[tau - 1]

    def flop(self, count: int = 1) -> None:
        self.tally.flops += count

    def charge(self, kind: ClosedFormCharge, reads: int = 0, writes: int = 0, flops: int = 0) -> None:
        self.tally.charges.setdefault(kind, Events()).add(Events(reads, writes, flops))


def _project(r: _Reader, gates: int, i: int, j: int, t: int) -> List[float]:
    acc = [0.0] * gates
    for s in range(r.inputs.in_W.shape[1]):
        x = r.stream("X", (i, s, t - 1))
        for g in range(gates):
            acc[g] += r.stream("in_W", (g, s, j)) * x
            r.flop(2)
    return acc


def _biased(r: _Reader, i: int, j: int, t: int) -> float:
    pre = _project(r, 1, i, j, t)[0] + r.bias(0, j)
    r.flop()
    return pre


def _elman(r: _Reader, i: int, j: int, t: int) -> float:
    pre = _biased(r, i, j, t)
    lags = min(t - 1, r.inputs.alpha2.shape[1])
    for k in range(1, lags + 1):
        pre += r.stream("alpha2", (j, k - 1)) * r.past(t - k)
        r.flop(2)
    r.charge(ClosedFormCharge.ZERO_LAG, reads=2 * (t - lags), flops=2 * (t - lags))
    return activate(int(r.inputs.acts[ACT_G]), pre)


def _jordan(r: _Reader, i: int, j: int, t: int) -> float:
    S, M = r.inputs.in_W.shape[1], r.inputs.in_W.shape[2]
    pre = _biased(r, i, j, t)
    lags = min(t - 1, r.inputs.alpha2.shape[1])
    for k in range(1, lags + 1):
        pre += r.stream("alpha2", (j, k - 1)) * r.stream("teacher", (i, t - k - 1))
        r.flop(2)
    r.charge(ClosedFormCharge.ZERO_LAG, reads=2 * (t - lags), flops=2 * (t - lags))
    r.charge(
        ClosedFormCharge.READOUT_REBUILD,
        reads=t * (2 * M - 1),
        flops=t * (2 * S * M + M - 2),
    )
    return activate(int(r.inputs.acts[ACT_G]), pre)


def _narmax(r: _Reader, i: int, j: int, t: int) -> float:
    pre = _biased(r, i, j, t)
    for l in range(1, r.inputs.w_out.shape[1] + 1):
        if t - l >= 1:
            pre += r.stream("w_out", (j, l - 1)) * r.stream("teacher", (i, t - l - 1))
            r.flop(2)
    for l in range(1, r.inputs.w_err.shape[1] + 1):
        if t - l >= 1:
            pre += r.stream("w_err", (j, l - 1)) * r.stream("errors", (t - l - 1,))
            r.flop(2)
    return activate(int(r.inputs.acts[ACT_G]), pre)


def _fully_connected(r: _Reader, i: int, j: int, t: int) -> float:
    M, Q = r.inputs.alpha3.shape[1], r.inputs.alpha3.shape[2]
    pre = _biased(r, i, j, t)
    lags = min(t - 1, Q)
    for k in range(1, lags + 1):
        for l in range(M):
            pre += r.stream("alpha3", (j, l, k - 1)) * r.past(t - k)
            r.flop(2)
    padded = Q - lags
    r.charge(ClosedFormCharge.PADDED_LAGS, reads=2 * M * padded, flops=2 * M * padded)
    r.charge(ClosedFormCharge.LAG_MERGE, flops=Q - 1)
    return activate(int(r.inputs.acts[ACT_G]), pre)


def _gate(r: _Reader, code: int, a: float, g: int, j: int, h_prev: float) -> float:
    value = activate(int(code), a + r.stream("gate_u", (g, j)) * h_prev + r.bias(g, j))
    r.flop(3)
    return value


def _lstm(r: _Reader, i: int, j: int, t: int) -> float:
    acts = r.inputs.acts
    proj = _project(r, 4, i, j, t)
    h_prev = r.past(t - 1) if t > 1 else 0.0
    codes = (acts[ACT_O], acts[ACT_LAMBDA], acts[ACT_IN], acts[ACT_C])
    o, forget, admit, candidate = (
        _gate(r, code, proj[g], g, j, h_prev) for g, code in enumerate(codes)
    )
    # c stays in a register between steps
    r.c = forget * r.c + admit * candidate
    r.flop(3)
    h = o * activate(int(acts[ACT_F]), r.c)
    r.flop()
    r.charge(ClosedFormCharge.STATE_LOADS, reads=5 - (1 if t > 1 else 0))
    r.charge(ClosedFormCharge.GATE_STORES, writes=4)
    r.charge(ClosedFormCharge.SQUASH_FLOPS, flops=2)
    return h


def _gru(r: _Reader, i: int, j: int, t: int) -> float:
    S = r.inputs.in_W.shape[1]
    acts = r.inputs.acts
    proj = _project(r, 3, i, j, t)
    h_prev = r.past(t - 1) if t > 1 else 0.0
    z = _gate(r, acts[ACT_Z], proj[1], 1, j, h_prev)
    reset = _gate(r, acts[ACT_R], proj[2], 2, j, h_prev)
    candidate = activate(
        int(acts[ACT_F]), proj[0] + r.stream("gate_u", (0, j)) * (reset * h_prev) + r.bias(0, j)
    )
    r.flop(4)
    h = (1.0 - z) * h_prev + z * candidate
    r.flop(4)
    r.charge(ClosedFormCharge.STATE_LOADS, reads=2 - (1 if t > 1 else 0))
    r.charge(ClosedFormCharge.GATE_STORES, writes=2)
    r.charge(ClosedFormCharge.SQUASH_FLOPS, flops=3)
    r.charge(ClosedFormCharge.FUSED_PROJECTION, flops=-3 * S)
    return h


_PROGRAMS = {
    ArchKind.ELMAN: _elman,
    ArchKind.JORDAN: _jordan,
    ArchKind.NARMAX: _narmax,
    ArchKind.FULLY_CONNECTED: _fully_connected,
    ArchKind.LSTM: _lstm,
    ArchKind.GRU: _gru,
}


def _step(kind: ArchKind, r: _Reader, shadow: WriteShadow, i: int, j: int, t: int) -> None:
    h = _PROGRAMS[kind](r, i, j, t)
    r.history.append(h)
    r.tally.writes += 1
    shadow.write(i, j, t, h)


def _stage_block(buffer: StagingBuffer, inputs: KernelInputs, rows: range, cols: range) -> None:
    """Block prelude: biases, diagonal gate weights, feedback weights, teacher rows."""
    for j in cols:
        for g in range(inputs.in_b.shape[0]):
            buffer.store(("in_b", g, j), float(inputs.in_b[g, j]))
        for g in range(inputs.gate_u.shape[0]):
            buffer.store(("gate_u", g, j), float(inputs.gate_u[g, j]))
        for l in range(inputs.w_out.shape[1]):
            buffer.store(("w_out", j, l), float(inputs.w_out[j, l]))
        for l in range(inputs.w_err.shape[1]):
            buffer.store(("w_err", j, l), float(inputs.w_err[j, l]))
    for i in rows:
        for tau in range(inputs.teacher.shape[1]):
            buffer.store(("teacher", i, tau), float(inputs.teacher[i, tau]))
    for tau in range(inputs.errors.shape[0]):
        buffer.store(("errors", tau), float(inputs.errors[tau]))
    buffer.barrier()


def _stage_step(
    buffer: StagingBuffer, inputs: KernelInputs, rows: range, cols: range, t: int
) -> None:
    """Step tiles: W and X at t, then the recurrence weights of lags 1..t-1."""
    G, S = inputs.in_W.shape[0], inputs.in_W.shape[1]
    for s in range(S):
        for j in cols:
            for g in range(G):
                buffer.store(("in_W", g, s, j), float(inputs.in_W[g, s, j]))
        for i in rows:
            buffer.store(("X", i, s, t - 1), float(inputs.X[i, s, t - 1]))
    for j in cols:
        for k in range(min(t - 1, inputs.alpha2.shape[1])):
            buffer.store(("alpha2", j, k), float(inputs.alpha2[j, k]))
        for l in range(inputs.alpha3.shape[1]):
            for k in range(min(t - 1, inputs.alpha3.shape[2])):
                buffer.store(("alpha3", j, l, k), float(inputs.alpha3[j, l, k]))
    buffer.barrier()


def _mean(total: int, cells: int, name: str) -> int:
    value, remainder = divmod(total, cells)
    if remainder:
        logger.debug(f"{name} differ between cells; reporting the rounded mean")
        value = round(total / cells)
    return value


@dataclass
class SimulationResult:
    H: np.ndarray
    tallies: Dict[tuple, CellTally]
    backend: Backend
    tile_width: int

    @property
    def cells(self) -> int:
        return len(self.tallies)

    def per_cell(self) -> Dict[str, int]:
        """Executed reads, writes and FLOPs per cell; tiled reads are amortised over the tile."""
        if self.backend is Backend.TILED_PARALLEL:
            reads = sum(t.amortised_reads(self.tile_width) for t in self.tallies.values())
        else:
            reads = sum(t.global_reads for t in self.tallies.values())
        totals = {
            "reads": reads,
            "writes": sum(t.writes for t in self.tallies.values()),
            "flops": sum(t.flops for t in self.tallies.values()),
        }
        return {name: _mean(total, self.cells, name) for name, total in totals.items()}

    def charges_per_cell(self) -> Dict[ClosedFormCharge, Events]:
        """Closed-form charges per cell, by kind of charge."""
        totals: Dict[ClosedFormCharge, Events] = {}
        for tally in self.tallies.values():
            for kind, events in tally.charges.items():
                totals.setdefault(kind, Events()).add(events)
        return {
            kind: Events(
                _mean(events.reads, self.cells, kind.value),
                _mean(events.writes, self.cells, kind.value),
                _mean(events.flops, self.cells, kind.value),
            )
            for kind, events in totals.items()
        }


def require_counting_mode() -> None:
    if profile() == RELEASE_PROFILE:
        logger.error("counting interpreter requested under the release profile")
        raise CountingModeError(
            "counting mode is unavailable in the release profile; unset RELM_PROFILE"
        )


def simulate(
    ds: TimeSeriesDataset,
    spec: ArchitectureSpec,
    weights: WeightSet,
    cfg: ExecConfig,
) -> SimulationResult:
    """Replay the basic or tiled backend block by block with counters attached.

    The sequential backend replays as basic: both run the same cell program.
    Tiled blocks advance in lock step: each step's W, X and recurrence tiles are
    staged behind a barrier before any cell of the block consumes them.

    Raises:
        CountingModeError: Under the release profile.
    """
    require_counting_mode()
    backend = Backend.BASIC_PARALLEL if cfg.backend is Backend.SEQUENTIAL else cfg.backend
    inputs = kernel_inputs(ds, spec, weights)
    n, M, Q, bs = ds.n, spec.M, spec.Q, cfg.block_size
    shadow = WriteShadow(np.zeros((n, M, Q)))
    tallies: Dict[tuple, CellTally] = {}
    row_blocks, col_blocks = block_grid(n, M, bs)

    for block in range(row_blocks * col_blocks):
        r0, c0 = (block // col_blocks) * bs, (block % col_blocks) * bs
        rows, cols = range(r0, min(r0 + bs, n)), range(c0, min(c0 + bs, M))
        buffer = None
        if backend is Backend.TILED_PARALLEL:
            buffer = StagingBuffer(f"block-{block}")
            _stage_block(buffer, inputs, rows, cols)
        readers = {}
        for i in rows:
            for j in cols:
                tallies[(i, j)] = CellTally()
                readers[(i, j)] = _Reader(inputs, tallies[(i, j)], buffer)
        for t in range(1, Q + 1):
            if buffer is not None:
                _stage_step(buffer, inputs, rows, cols, t)
            for (i, j), reader in readers.items():
                _step(spec.kind, reader, shadow, i, j, t)

    shadow.verify()
    logger.debug(f"counting replay of {spec.kind.value} on {backend.value}: {len(tallies)} cells")
    return SimulationResult(H=shadow.H, tallies=tallies, backend=backend, tile_width=bs)

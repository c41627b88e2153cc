"""
Hidden-state tensor construction with the sequential, basic-parallel and tiled-parallel backends.

Note:
- The sequential backend is the correctness oracle; the parallel backends must match it
- Parallel backends split a grid of block_size x block_size cell blocks into contiguous
  chunks and run each chunk on a worker thread; kernels release the GIL
"""

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, NamedTuple, Optional, Tuple

import numpy as np

from app.architectures import ArchitectureSpec, ArchKind, WeightSet, init_weights
from app.constants import DEFAULT_BLOCK_SIZE, chunks_per_worker, workers_cap
from app.dataset import RawSeries, TimeSeriesDataset, window
from app.errors import (
    DimensionError,
    ExecutionEnvironmentError,
    InvalidSpecError,
    NotAvailableError,
)
from app.kernels import hidden_blocks, hidden_sequential, hidden_tiled_blocks
from app.tensor import SeededRng
from application_sdk.observability.logger_adaptor import get_logger

logger = get_logger(__name__)


class Backend(str, Enum):
    SEQUENTIAL = "seq"
    BASIC_PARALLEL = "basic"
    TILED_PARALLEL = "tiled"


@dataclass(frozen=True)
class ExecConfig:
    backend: Backend = Backend.SEQUENTIAL
    block_size: int = DEFAULT_BLOCK_SIZE
    worker_count: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "backend", Backend(self.backend))
        if self.block_size < 1:
            raise InvalidSpecError(f"block_size must be positive, got {self.block_size}")
        if self.worker_count is not None and self.worker_count < 1:
            raise InvalidSpecError(f"worker_count must be positive, got {self.worker_count}")

    @property
    def tile_width(self) -> int:
        return self.block_size

    def resolved_workers(self) -> int:
        """Explicit worker count, or the CPU count; RELM_WORKERS caps either."""
        workers = self.worker_count or os.cpu_count() or 1
        cap = workers_cap()
        return min(workers, cap) if cap else workers

    def to_dict(self) -> dict:
        return {
            "backend": self.backend.value,
            "block_size": self.block_size,
            "worker_count": self.worker_count,
        }


@dataclass(frozen=True)
class HiddenTiming:
    staging: float
    h_compute: float

    @property
    def total(self) -> float:
        return self.staging + self.h_compute


@dataclass(frozen=True, eq=False)
class HiddenTensor:
    H: np.ndarray
    backend: Backend
    timing: HiddenTiming

    @property
    def final(self) -> np.ndarray:
        """H(Q): the last time slice, one row per sample."""
        return self.H[:, :, -1]


class KernelInputs(NamedTuple):
    kind: int
    X: np.ndarray
    in_W: np.ndarray
    in_b: np.ndarray
    gate_u: np.ndarray
    alpha2: np.ndarray
    alpha3: np.ndarray
    w_out: np.ndarray
    w_err: np.ndarray
    teacher: np.ndarray
    errors: np.ndarray
    acts: np.ndarray


def kernel_inputs(
    ds: TimeSeriesDataset, spec: ArchitectureSpec, weights: WeightSet
) -> KernelInputs:
    """Validate shapes and lay every array out the way the kernels expect."""
    if ds.S != spec.S or ds.Q != spec.Q:
        logger.error(f"dataset (S={ds.S}, Q={ds.Q}) does not fit spec (S={spec.S}, Q={spec.Q})")
        raise DimensionError(
            f"dataset has S={ds.S}, Q={ds.Q} but spec expects S={spec.S}, Q={spec.Q}"
        )
    weights.validate(spec)
    M = spec.M
    in_W, in_b = weights.projection_stack()
    alpha = weights.alpha
    alpha2 = alpha if alpha is not None and alpha.ndim == 2 else np.zeros((M, 0))
    alpha3 = alpha if alpha is not None and alpha.ndim == 3 else np.zeros((M, 0, 0))
    contiguous = np.ascontiguousarray
    return KernelInputs(
        kind=spec.kind.code,
        X=contiguous(ds.X),
        in_W=contiguous(in_W),
        in_b=contiguous(in_b),
        gate_u=contiguous(weights.gate_u if weights.gate_u is not None else np.zeros((0, M))),
        alpha2=contiguous(alpha2),
        alpha3=contiguous(alpha3),
        w_out=contiguous(weights.w_out if weights.w_out is not None else np.zeros((M, 0))),
        w_err=contiguous(weights.w_err if weights.w_err is not None else np.zeros((M, 0))),
        teacher=contiguous(ds.teacher),
        errors=np.zeros(spec.Q),
        acts=spec.activations.codes(),
    )


def block_grid(n: int, M: int, block_size: int) -> Tuple[int, int]:
    """Row and column block counts; edge blocks are partial."""
    return math.ceil(n / block_size), math.ceil(M / block_size)


def projection_phases(S: int, tile_width: int) -> int:
    """Tile phases the tiled backend spends on one input projection."""
    return math.ceil(S / tile_width)


def partition(total: int, parts: int) -> List[Tuple[int, int]]:
    """Split range(total) into at most `parts` contiguous, near-equal chunks."""
    parts = max(1, min(parts, total))
    size, extra = divmod(total, parts)
    chunks, start = [], 0
    for p in range(parts):
        stop = start + size + (1 if p < extra else 0)
        chunks.append((start, stop))
        start = stop
    return chunks


def _dispatch(kernel: Callable, n_blocks: int, workers: int, args: tuple) -> None:
    chunks = partition(n_blocks, workers * chunks_per_worker())
    try:
        pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="relm-block")
    except (RuntimeError, OSError, ValueError) as exc:
        logger.error(f"could not start {workers} block workers: {exc}")
        raise ExecutionEnvironmentError(f"worker pool creation failed: {exc}") from exc
    with pool:
        try:
            futures = [pool.submit(kernel, first, last, *args) for first, last in chunks]
        except RuntimeError as exc:
            raise ExecutionEnvironmentError(f"worker pool rejected work: {exc}") from exc
        for future in futures:
            future.result()


def _prepare(
    ds: TimeSeriesDataset, spec: ArchitectureSpec, weights: WeightSet
) -> Tuple[KernelInputs, np.ndarray, float]:
    started = time.perf_counter()
    inputs = kernel_inputs(ds, spec, weights)
    H = np.zeros((ds.n, spec.M, spec.Q))
    return inputs, H, time.perf_counter() - started


def compute_h_sequential(
    ds: TimeSeriesDataset, spec: ArchitectureSpec, weights: WeightSet
) -> HiddenTensor:
    """Evaluate every cell in row, column, time order on the calling thread."""
    inputs, H, staging = _prepare(ds, spec, weights)
    started = time.perf_counter()
    hidden_sequential(*inputs, H)
    elapsed = time.perf_counter() - started
    logger.debug(f"sequential H {H.shape} in {elapsed:.4f}s")
    return HiddenTensor(H=H, backend=Backend.SEQUENTIAL, timing=HiddenTiming(staging, elapsed))


def compute_h_basic_parallel(
    ds: TimeSeriesDataset,
    spec: ArchitectureSpec,
    weights: WeightSet,
    cfg: ExecConfig,
) -> HiddenTensor:
    """One work item per (i, j) cell, grouped into block_size x block_size blocks.

    Out-of-range cells of edge blocks are skipped; the result is bitwise
    identical for any worker count.
    """
    inputs, H, staging = _prepare(ds, spec, weights)
    row_blocks, col_blocks = block_grid(ds.n, spec.M, cfg.block_size)
    workers = cfg.resolved_workers()
    started = time.perf_counter()
    _dispatch(
        hidden_blocks, row_blocks * col_blocks, workers, (cfg.block_size, *inputs, H)
    )
    elapsed = time.perf_counter() - started
    logger.debug(
        f"basic H {H.shape}: {row_blocks * col_blocks} blocks on {workers} workers in {elapsed:.4f}s"
    )
    return HiddenTensor(
        H=H, backend=Backend.BASIC_PARALLEL, timing=HiddenTiming(staging, elapsed)
    )


def compute_h_tiled_parallel(
    ds: TimeSeriesDataset,
    spec: ArchitectureSpec,
    weights: WeightSet,
    cfg: ExecConfig,
) -> HiddenTensor:
    """Blocks stage weight and input tiles, then compute; history stays block-local."""
    inputs, H, staging = _prepare(ds, spec, weights)
    row_blocks, col_blocks = block_grid(ds.n, spec.M, cfg.tile_width)
    workers = cfg.resolved_workers()
    started = time.perf_counter()
    _dispatch(
        hidden_tiled_blocks,
        row_blocks * col_blocks,
        workers,
        (cfg.tile_width, *inputs, H),
    )
    elapsed = time.perf_counter() - started
    logger.debug(
        f"tiled H {H.shape}: {projection_phases(spec.S, cfg.tile_width)} projection "
        f"phases per step, {workers} workers, {elapsed:.4f}s"
    )
    return HiddenTensor(
        H=H, backend=Backend.TILED_PARALLEL, timing=HiddenTiming(staging, elapsed)
    )


def compute_h(
    ds: TimeSeriesDataset,
    spec: ArchitectureSpec,
    weights: WeightSet,
    cfg: ExecConfig,
) -> HiddenTensor:
    if cfg.backend is Backend.SEQUENTIAL:
        return compute_h_sequential(ds, spec, weights)
    if cfg.backend is Backend.BASIC_PARALLEL:
        return compute_h_basic_parallel(ds, spec, weights, cfg)
    return compute_h_tiled_parallel(ds, spec, weights, cfg)


def staged_read_count(spec: ArchitectureSpec, cfg: ExecConfig) -> int:
    """Global reads per cell of the tiled Elman kernel.

    ceil((2*S*Q + Q*(Q+1)/2) / TW**2) + 1: the W, X and alpha streams are shared
    by the TW x TW cells of a block, and the bias is staged once. The alpha term
    counts lags 1..t, one more per step than the kernel consumes, so a measured
    tiled replay can land below it.
    """
    if spec.kind is not ArchKind.ELMAN:
        raise NotAvailableError(
            f"no closed-form staged read count for {spec.kind.value}; measure it instead"
        )
    S, Q, tw = spec.S, spec.Q, cfg.tile_width
    stream = 2 * S * Q + Q * (Q + 1) // 2
    return -(-stream // (tw * tw)) + 1


def warm_up() -> None:
    """Compile every kernel specialisation on a one-cell problem."""
    ds = window(RawSeries(np.array([0.1, 0.2, 0.3])), 1)
    for kind in ArchKind:
        spec = ArchitectureSpec(kind=kind, M=1, Q=1, F=1, R=1)
        weights = init_weights(spec, SeededRng(0))
        compute_h_sequential(ds, spec, weights)
        for backend in (Backend.BASIC_PARALLEL, Backend.TILED_PARALLEL):
            compute_h(ds, spec, weights, ExecConfig(backend=backend, worker_count=1))

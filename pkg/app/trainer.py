"""
Non-iterative training pipeline: sample fixed weights, build H, solve for the readout.

Note:
- H is built on the training rows only and the readout is fitted on its last time slice
- Predictions rebuild H for the requested rows with the training backend; output-feedback
  kinds read the teacher signal unless recursive feedback is requested
"""

import json
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np

from app.architectures import (
    Activations,
    ArchitectureSpec,
    ArchKind,
    WeightSet,
    init_weights,
)
from app.constants import MODEL_FORMAT_VERSION, RNG_ID
from app.dataset import NormParams, TimeSeriesDataset
from app.errors import CorruptModelError, InvalidSpecError, ModelVersionError
from app.hidden import Backend, ExecConfig, compute_h
from app.solver import RankFlag, solve_lsq
from app.tensor import SeededRng, activation_array
from application_sdk.observability.logger_adaptor import get_logger

logger = get_logger(__name__)


class Feedback(str, Enum):
    TEACHER = "teacher"
    RECURSIVE = "recursive"


@dataclass(frozen=True)
class TimingBreakdown:
    init: float = 0.0
    transfer_in: float = 0.0
    h_compute: float = 0.0
    solve: float = 0.0
    transfer_out: float = 0.0

    @property
    def total(self) -> float:
        return self.init + self.transfer_in + self.h_compute + self.solve + self.transfer_out

    def shares(self) -> Dict[str, float]:
        total = self.total or 1.0
        return {
            "init": self.init / total,
            "transfer_in": self.transfer_in / total,
            "h_compute": self.h_compute / total,
            "solve": self.solve / total,
            "transfer_out": self.transfer_out / total,
        }


@dataclass(frozen=True, eq=False)
class TrainedModel:
    spec: ArchitectureSpec
    weights: WeightSet
    norm_params: Optional[NormParams]
    seed: int
    exec_config: ExecConfig = field(default_factory=ExecConfig)
    timing: TimingBreakdown = field(default_factory=TimingBreakdown)
    rng_id: str = RNG_ID
    rank_flag: RankFlag = RankFlag.FULL_RANK
    ridge_lambda: float = 0.0

    @property
    def beta(self) -> np.ndarray:
        return self.weights.beta

    def same_as(self, other: "TrainedModel") -> bool:
        """Field-for-field equality with bit-exact arrays."""
        if (self.norm_params is None) != (other.norm_params is None):
            return False
        if self.norm_params is not None and not (
            np.array_equal(self.norm_params.mean, other.norm_params.mean)
            and np.array_equal(self.norm_params.std, other.norm_params.std)
        ):
            return False
        return (
            self.spec == other.spec
            and self.weights.equals(other.weights)
            and self.seed == other.seed
            and self.exec_config == other.exec_config
            and self.timing == other.timing
            and self.rng_id == other.rng_id
            and self.rank_flag == other.rank_flag
            and self.ridge_lambda == other.ridge_lambda
        )


@dataclass(frozen=True)
class EvalReport:
    rmse_train: float
    rmse_test: Optional[float]
    rmse_train_original: float
    rmse_test_original: Optional[float]
    n_train: int
    n_test: int

    def to_row(self) -> Dict[str, Any]:
        return {
            "rmse_train": self.rmse_train,
            "rmse_test": self.rmse_test,
            "rmse_train_original": self.rmse_train_original,
            "rmse_test_original": self.rmse_test_original,
            "n_train": self.n_train,
            "n_test": self.n_test,
        }


def rmse(predicted: np.ndarray, actual: np.ndarray) -> float:
    predicted = np.asarray(predicted, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    return float(math.sqrt(np.mean((predicted - actual) ** 2)))


def naive_rmse(ds: TimeSeriesDataset, rows: Sequence[int]) -> float:
    """RMSE of the last-value forecast y_hat[i] = x(Q) of the target feature."""
    rows = np.asarray(rows, dtype=np.int64)
    return rmse(ds.X[rows, 0, -1], ds.Y[rows])


def fit(
    ds: TimeSeriesDataset,
    spec: ArchitectureSpec,
    cfg: ExecConfig,
    seed: int,
) -> TrainedModel:
    """Train the readout of `spec` on the training rows of `ds`.

    Args:
        ds: Windowed and normalised dataset.
        spec: Architecture and hyperparameters.
        cfg: Backend used to build H.
        seed: Seed of the weight stream.

    Returns:
        TrainedModel: Fixed weights, fitted beta and the timing breakdown.
    """
    if not ds.is_normalized:
        logger.error(f"dataset '{ds.name}' must be normalised before fitting")
        raise InvalidSpecError("fit expects a normalised dataset; call normalize_split first")

    started = time.perf_counter()
    rng = SeededRng(seed)
    weights = init_weights(spec, rng)
    init_seconds = time.perf_counter() - started

    train = ds.subset(ds.train_rows())
    hidden = compute_h(train, spec, weights, cfg)

    started = time.perf_counter()
    solution = solve_lsq(hidden.final, train.Y)
    solve_seconds = time.perf_counter() - started

    timing = TimingBreakdown(
        init=init_seconds,
        h_compute=hidden.timing.total,
        solve=solve_seconds,
    )
    logger.info(
        f"fit {spec.kind.value} M={spec.M} Q={spec.Q} on {train.n} rows with "
        f"{cfg.backend.value}: h_compute={timing.h_compute:.4f}s solve={timing.solve:.4f}s "
        f"({solution.rank_flag.value})"
    )
    return TrainedModel(
        spec=spec,
        weights=weights.with_beta(solution.beta),
        norm_params=ds.norm_params,
        seed=seed,
        exec_config=cfg,
        timing=timing,
        rng_id=rng.generator_id,
        rank_flag=solution.rank_flag,
        ridge_lambda=solution.ridge_lambda,
    )


def _recursive_final(ds: TimeSeriesDataset, spec: ArchitectureSpec, weights: WeightSet) -> np.ndarray:
    """H(Q) with the model's own predictions fed back instead of the teacher signal."""
    n, Q = ds.n, spec.Q
    beta = weights.beta
    y_hat = np.zeros((n, Q))
    h = np.zeros((n, spec.M))
    for t in range(1, Q + 1):
        pre = ds.X[:, :, t - 1] @ weights.W + weights.b
        if spec.kind is ArchKind.JORDAN:
            for k in range(1, min(t - 1, Q) + 1):
                pre += weights.alpha[:, k - 1] * y_hat[:, t - k - 1, np.newaxis]
        else:
            for l in range(1, spec.F + 1):
                if t - l >= 1:
                    pre += weights.w_out[:, l - 1] * y_hat[:, t - l - 1, np.newaxis]
            for l in range(1, spec.R + 1):
                if t - l >= 1:
                    error = ds.teacher[:, t - l - 1] - y_hat[:, t - l - 1]
                    pre += weights.w_err[:, l - 1] * error[:, np.newaxis]
        h = activation_array(spec.activations.g, pre)
        y_hat[:, t - 1] = h @ beta
    return h


def predict(
    model: TrainedModel,
    ds: TimeSeriesDataset,
    rows: Optional[Sequence[int]] = None,
    feedback: Union[Feedback, str] = Feedback.TEACHER,
) -> np.ndarray:
    """Readout y_hat[i] = sum_j beta_j H[i, j, Q] for the requested rows (all rows by default)."""
    subset = ds if rows is None else ds.subset(rows)
    feedback = Feedback(feedback)
    if subset.n == 0:
        return np.zeros(0)
    if feedback is Feedback.RECURSIVE and model.spec.kind in (ArchKind.JORDAN, ArchKind.NARMAX):
        final = _recursive_final(subset, model.spec, model.weights)
    else:
        final = compute_h(subset, model.spec, model.weights, model.exec_config).final
    return final @ model.beta


def evaluate(model: TrainedModel, ds: TimeSeriesDataset) -> EvalReport:
    """RMSE over the train and test rows, normalised and in original units."""
    y_hat = predict(model, ds)
    train, test = ds.train_rows(), ds.test_rows()
    original_hat = ds.denormalize_target(y_hat)
    original_y = ds.denormalize_target(ds.Y)
    has_test = test.size > 0
    return EvalReport(
        rmse_train=rmse(y_hat[train], ds.Y[train]),
        rmse_test=rmse(y_hat[test], ds.Y[test]) if has_test else None,
        rmse_train_original=rmse(original_hat[train], original_y[train]),
        rmse_test_original=rmse(original_hat[test], original_y[test]) if has_test else None,
        n_train=int(train.size),
        n_test=int(test.size),
    )


def _encode_array(array: np.ndarray) -> Dict[str, Any]:
    return {
        "shape": list(array.shape),
        "length": int(array.size),
        "data": [float(v) for v in array.ravel()],
    }


def _decode_array(node: Dict[str, Any]) -> np.ndarray:
    shape = tuple(int(d) for d in node["shape"])
    data = node["data"]
    if int(node["length"]) != len(data) or math.prod(shape) != len(data):
        raise CorruptModelError(
            f"array declares shape {shape} and length {node['length']} but holds {len(data)} values"
        )
    return np.array(data, dtype=np.float64).reshape(shape)


def save_model(model: TrainedModel, path: Union[str, Path]) -> None:
    """Write `model` as a versioned JSON document; floats use shortest round-trip form."""
    spec = model.spec
    document = {
        "format_version": MODEL_FORMAT_VERSION,
        "header": {
            **spec.to_dict(),
            "seed": model.seed,
            "rng_id": model.rng_id,
        },
        "provenance": {
            "exec": model.exec_config.to_dict(),
            "rank_flag": model.rank_flag.value,
            "ridge_lambda": model.ridge_lambda,
            "timing": {
                "init": model.timing.init,
                "transfer_in": model.timing.transfer_in,
                "h_compute": model.timing.h_compute,
                "solve": model.timing.solve,
                "transfer_out": model.timing.transfer_out,
            },
        },
        "body": {
            "weights": {name: _encode_array(a) for name, a in model.weights.arrays().items()},
            "norm_params": None
            if model.norm_params is None
            else {
                "mean": _encode_array(model.norm_params.mean),
                "std": _encode_array(model.norm_params.std),
            },
        },
    }
    Path(path).write_text(json.dumps(document, indent=1), encoding="utf-8")
    logger.info(f"saved {spec.kind.value} model to {path}")


def load_model(path: Union[str, Path]) -> TrainedModel:
    """Read a model written by save_model.

    Raises:
        ModelVersionError: Unknown format_version.
        CorruptModelError: Truncated or malformed document.
    """
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        logger.error(f"cannot read model file {path}: {exc}")
        raise CorruptModelError(f"cannot read model file {path}: {exc}") from exc
    if not isinstance(document, dict):
        raise CorruptModelError(f"{path} does not hold a model document")
    version = document.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        logger.error(f"model file {path} has format version {version}")
        raise ModelVersionError(
            f"unsupported model format version {version!r}; expected {MODEL_FORMAT_VERSION}"
        )
    try:
        header = document["header"]
        provenance = document["provenance"]
        body = document["body"]
        spec = ArchitectureSpec(
            kind=ArchKind(header["kind"]),
            M=int(header["M"]),
            Q=int(header["Q"]),
            S=int(header["S"]),
            F=int(header["F"]),
            R=int(header["R"]),
            activations=Activations.from_dict(header["activations"]),
        )
        weights = WeightSet(
            **{name: _decode_array(node) for name, node in body["weights"].items()}
        )
        weights.validate(spec)
        norm = body["norm_params"]
        norm_params = (
            None
            if norm is None
            else NormParams(mean=_decode_array(norm["mean"]), std=_decode_array(norm["std"]))
        )
        exec_node = provenance["exec"]
        return TrainedModel(
            spec=spec,
            weights=weights,
            norm_params=norm_params,
            seed=int(header["seed"]),
            exec_config=ExecConfig(
                backend=Backend(exec_node["backend"]),
                block_size=int(exec_node["block_size"]),
                worker_count=exec_node["worker_count"],
            ),
            timing=TimingBreakdown(**provenance["timing"]),
            rng_id=str(header["rng_id"]),
            rank_flag=RankFlag(provenance["rank_flag"]),
            ridge_lambda=float(provenance["ridge_lambda"]),
        )
    except CorruptModelError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        logger.error(f"model file {path} is malformed: {exc}")
        raise CorruptModelError(f"model file {path} is malformed: {exc}") from exc

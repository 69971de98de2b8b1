"""Hyperparameter sweeps over (D, E, P, N, M) with parameter counts, simulated
latency, externally supplied accuracy metrics and Pareto-front extraction."""

from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidInputError, ParseError
from .mamba.config import MARS, MambaConfig
from .pipesim import PipelineConfig, StageLatencyTable, load_preset, simulate

GRID_AXES = ("D", "E", "P", "N", "M")

# Illustrative grid around the MARS configuration.
DEFAULT_GRID = {"D": [12, 16, 20, 24], "E": [1, 2], "P": [2, 4], "N": [4, 8, 16], "M": [1, 2, 3]}


def block_param_count(D: int, E: int, N: int, K: int = 4) -> int:
    ED = E * D
    return (
        2 * D                 # norm gamma, beta
        + 2 * (ED * D + ED)   # gate and main input projections
        + ED * K + ED         # depthwise conv
        + ED * ED + ED        # step-size projection
        + 2 * (N * ED + N)    # B and C projections
        + ED * N + ED         # A and D
        + D * ED + D          # output projection
    )


def param_count(config: MambaConfig) -> int:
    """Exact number of learnable values in the model's tensors."""
    c = config
    embed = c.D * c.patch_dim + c.D
    if c.head_hidden:
        head = c.head_hidden * c.D + c.head_hidden + c.out_dim * c.head_hidden + c.out_dim
    else:
        head = c.out_dim * c.D + c.out_dim
    return embed + c.M * block_param_count(c.D, c.E, c.N, c.K) + head


@dataclass(frozen=True)
class NasPoint:
    config: MambaConfig
    param_count: int
    model_bytes: int
    latency_cycles: int | None = None
    metric: float | None = None
    lower_is_better: bool = True
    on_front: bool = False

    @property
    def key(self) -> tuple[int, ...]:
        return self.config.key()

    def to_row(self) -> dict:
        return {
            "D": self.config.D, "E": self.config.E, "P": self.config.P,
            "N": self.config.N, "M": self.config.M,
            "params": self.param_count, "bytes": self.model_bytes,
            "latency": self.latency_cycles, "metric": self.metric, "on_front": self.on_front,
        }


def load_grid(source) -> dict[str, list[int]]:
    """Grid from a dict, a JSON file path or the name ``default``."""
    if isinstance(source, dict):
        grid = source
    elif str(source) == "default":
        grid = DEFAULT_GRID
    else:
        try:
            grid = json.loads(Path(source).read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{source}: not valid JSON ({exc})") from exc
    unknown = set(grid) - set(GRID_AXES)
    if unknown:
        raise ParseError(f"grid has unknown axes {sorted(unknown)}; expected {GRID_AXES}")
    for axis, values in grid.items():
        if not isinstance(values, list) or not values or not all(isinstance(v, int) for v in values):
            raise ParseError(f"grid axis {axis!r} must be a non-empty list of integers")
    return {k: list(v) for k, v in grid.items()}


def load_metrics(source) -> tuple[dict[tuple[int, ...], float], bool]:
    """Metrics keyed by ``(D, E, P, N, M)``.

    The JSON document is ``{"lower_is_better": bool, "metrics": [{"config":
    [D, E, P, N, M], "value": float}, ...]}``.
    """
    if isinstance(source, dict):
        doc = source
    else:
        try:
            doc = json.loads(Path(source).read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{source}: not valid JSON ({exc})") from exc
    try:
        table = {}
        for entry in doc["metrics"]:
            key = tuple(int(v) for v in entry["config"])
            if len(key) != len(GRID_AXES):
                raise ParseError(f"metrics key {list(key)} is not a (D, E, P, N, M) tuple")
            table[key] = float(entry["value"])
        return table, bool(doc.get("lower_is_better", True))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed metrics file: {exc}") from exc


def _units_for(D: int, units: int) -> int:
    """Largest divisor of ``D`` not above the requested unit count."""
    return max(u for u in range(1, min(units, D) + 1) if D % u == 0)


def sweep(
    grid,
    pipeline: PipelineConfig | None = None,
    metrics=None,
    base: MambaConfig = MARS,
    bits: int = 8,
    table: StageLatencyTable | None = None,
) -> list[NasPoint]:
    """Evaluate the Cartesian product of ``grid`` in (D, E, P, N, M) order.

    Axes missing from the grid take their value from ``base``. Configurations
    whose patch size does not divide the frame are skipped.
    """
    grid = load_grid(grid)
    pipeline = pipeline or PipelineConfig()
    table = table or load_preset("emamba")
    values, lower = ({}, True) if metrics is None else load_metrics(metrics)
    axes = [grid.get(a, [getattr(base, a)]) for a in GRID_AXES]

    points = []
    for combo in itertools.product(*axes):
        try:
            cfg = base.replace(**dict(zip(GRID_AXES, combo)))
        except ConfigError:
            continue
        pc = pipeline.replace(D=cfg.D, L=cfg.L, M=cfg.M, units=_units_for(cfg.D, pipeline.units))
        points.append(NasPoint(
            config=cfg,
            param_count=param_count(cfg),
            model_bytes=param_count(cfg) * -(-bits // 8),
            latency_cycles=simulate(pc, table).frame_latency_cycles,
            metric=values.get(cfg.key()),
            lower_is_better=lower,
        ))
    unmatched = sorted(set(values) - {p.key for p in points})
    if unmatched:
        raise ParseError(f"metrics keys match no grid point: {[list(k) for k in unmatched]}")

    with_metric = [p for p in points if p.metric is not None]
    if with_metric:
        front = {id(p) for p in pareto_front(with_metric, (("param_count", "min"),
                                                           ("metric", "min" if lower else "max")))}
    else:
        front = {id(p) for p in pareto_front(points, (("param_count", "min"), ("latency_cycles", "min")))}
    return [NasPoint(**{**p.__dict__, "on_front": id(p) in front}) for p in points]


def _objective(point, name):
    if isinstance(point, dict):
        return point.get(name)
    if isinstance(name, int):
        return point[name]
    return getattr(point, name, None)


def dominates(a, b) -> bool:
    """``a`` dominates ``b`` (minimization): no worse anywhere, better somewhere."""
    return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))


def pareto_front(points, objectives=((0, "min"), (1, "min"))) -> list:
    """Non-dominated subset of ``points``, sorted stably by the first objective.

    ``objectives`` pairs an attribute name (or tuple index) with ``min`` or
    ``max``.
    """
    points = list(points)
    signs = []
    for _, direction in objectives:
        if direction not in ("min", "max"):
            raise ConfigError(f"objective direction must be min or max, got {direction!r}")
        signs.append(1.0 if direction == "min" else -1.0)
    vals = np.empty((len(points), len(objectives)))
    for i, p in enumerate(points):
        for j, (name, _) in enumerate(objectives):
            v = _objective(p, name)
            if v is None:
                raise InvalidInputError(f"point {i} ({p!r}) has no value for objective {name!r}")
            vals[i, j] = signs[j] * float(v)
    keep = []
    for i in range(len(points)):
        le = np.all(vals <= vals[i], axis=1)
        lt = np.any(vals < vals[i], axis=1)
        if not np.any(le & lt):
            keep.append(i)
    keep.sort(key=lambda i: vals[i, 0])
    return [points[i] for i in keep]


@dataclass(frozen=True)
class MetricRecord:
    task: str
    n: int
    mae_per_axis: tuple[float, ...] = ()
    rmse_per_axis: tuple[float, ...] = ()
    mae: float | None = None
    rmse: float | None = None
    accuracy: float | None = None

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def eval_metrics(predictions, ground_truth, task: str = "regression", axes: int | None = None) -> MetricRecord:
    """MAE / RMSE per coordinate axis and averaged, or top-1 accuracy in percent.

    For regression the trailing dimension is grouped as ``(..., axes)``; by
    default 3 axes (x, y, z) when the width allows it, else a single axis.
    Classification accepts class scores ``(n, classes)`` or label vectors.
    """
    pred = np.asarray(predictions, dtype=np.float64)
    gt = np.asarray(ground_truth, dtype=np.float64)
    if len(pred) != len(gt):
        raise InvalidInputError(f"{len(pred)} predictions but {len(gt)} ground-truth entries")
    n = len(pred)
    if n == 0:
        raise InvalidInputError("no samples to evaluate")
    if task == "classification":
        labels = pred.argmax(axis=-1) if pred.ndim == 2 else pred
        truth = gt.argmax(axis=-1) if gt.ndim == 2 else gt
        return MetricRecord(task, n, accuracy=100.0 * float(np.mean(labels == truth)))
    if task != "regression":
        raise ConfigError(f"task must be regression or classification, got {task!r}")
    if pred.shape != gt.shape:
        raise InvalidInputError(f"prediction shape {pred.shape} differs from ground truth {gt.shape}")
    width = int(np.prod(pred.shape[1:], dtype=np.int64)) if pred.ndim > 1 else 1
    if axes is None:
        axes = 3 if width % 3 == 0 else 1
    if width % axes:
        raise ConfigError(f"{width} values per sample do not split into {axes} axes")
    err = (pred - gt).reshape(n, -1, axes)
    mae = np.abs(err).mean(axis=(0, 1))
    rmse = np.sqrt((err ** 2).mean(axis=(0, 1)))
    return MetricRecord(task, n, tuple(float(v) for v in mae), tuple(float(v) for v in rmse),
                        float(mae.mean()), float(rmse.mean()))


def points_to_json(points: list[NasPoint]) -> str:
    return json.dumps([p.to_row() for p in points], indent=2) + "\n"


def points_to_csv(points: list[NasPoint]) -> str:
    buf = io.StringIO()
    fields = ["D", "E", "P", "N", "M", "params", "bytes", "latency", "metric", "on_front"]
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for p in points:
        row = p.to_row()
        row["metric"] = "" if row["metric"] is None else row["metric"]
        row["on_front"] = int(row["on_front"])
        writer.writerow(row)
    return buf.getvalue()

"""Cycle model of the layer-wise token pipeline.

Every layer is a pipeline stage holding at most one token. A stage accepts
token ``t`` once its predecessor has finished it (valid) and it has itself
handed token ``t - 1`` downstream (ready). Finished tokens wait in place until
the successor is ready, which is counted as a stall. The last stage is a
reduction (mean-pool plus head projection) that consumes every token and then
runs a one-off finalize step.

All times are integer cycles measured from the arrival of the frame.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ConfigError, ParseError

RANGE_NORM_STATS_CYCLES = 2
RANGE_NORM_DIVIDE_CYCLES = 23
RANGE_NORM_ELEMENT_CYCLES = RANGE_NORM_STATS_CYCLES + RANGE_NORM_DIVIDE_CYCLES

PRESET_NAMES = ("emamba", "naive-mamba")


def range_norm_latency(dim: int, units: int) -> int:
    """Cycles for one token of range normalization on ``units`` compute units.

    Each unit handles ``dim / units`` elements at 2 + 23 cycles apiece
    (statistics, then divide / scale / shift).
    """
    if dim < 1 or units < 1:
        raise ConfigError(f"dim and units must be positive, got dim={dim}, units={units}")
    if dim % units:
        raise ConfigError(f"{units} compute units do not divide token dimension {dim}")
    return -(-dim // units) * RANGE_NORM_ELEMENT_CYCLES


@dataclass(frozen=True)
class StageCost:
    """Per-token cycle count of a stage.

    ``kind`` is ``const`` (``value`` cycles), ``range_norm``
    (:func:`range_norm_latency` of the token dimension and unit count) or
    ``per_element`` (``value * D + offset``).
    """

    kind: str = "const"
    value: int = 1
    offset: int = 0

    def cycles(self, dim: int, units: int) -> int:
        if self.kind == "const":
            return self.value
        if self.kind == "range_norm":
            return range_norm_latency(dim, units)
        if self.kind == "per_element":
            return self.value * dim + self.offset
        raise ConfigError(f"unknown stage cost kind {self.kind!r}")


@dataclass(frozen=True)
class Stage:
    name: str
    cost: StageCost
    per_block: bool = False
    finalize: int = 0


@dataclass(frozen=True)
class StageLatencyTable:
    """Ordered stage list; ``per_block`` stages are repeated for each block.

    The final stage is the reduction head: it spends its per-token cost on
    each token and ``finalize`` cycles after the last one.
    ``setup_cycles`` elapse between frame arrival and the first token.
    """

    stages: tuple[Stage, ...]
    setup_cycles: int = 0
    preset: str | None = None
    notes: str = ""

    def __post_init__(self):
        if not self.stages:
            raise ConfigError("a pipeline needs at least one stage")
        if self.setup_cycles < 0:
            raise ConfigError("setup_cycles must be non-negative")

    def expand(self, config: "PipelineConfig") -> list[tuple[str, int, int]]:
        """``(name, cycles_per_token, finalize)`` for every physical stage in order."""
        def cycles(stage):
            c = stage.cost.cycles(config.D, config.units)
            if c < 1:
                raise ConfigError(f"stage {stage.name!r} has latency {c} < 1 cycle")
            return c

        out = []
        k = 0
        while k < len(self.stages):
            if not self.stages[k].per_block:
                s = self.stages[k]
                out.append((s.name, cycles(s), s.finalize))
                k += 1
                continue
            # a run of per-block stages is one block body, repeated M times
            end = k
            while end < len(self.stages) and self.stages[end].per_block:
                end += 1
            body = [(s.name, cycles(s), s.finalize) for s in self.stages[k:end]]
            for i in range(config.M):
                out.extend((f"block{i}.{n}", c, f) for n, c, f in body)
            k = end
        if any(f for _, _, f in out[:-1]):
            raise ConfigError("only the last stage may have a finalize step")
        return out

    def with_stage(self, name: str, cost: StageCost, preset: str | None = None) -> "StageLatencyTable":
        """Copy with the cost of stage ``name`` replaced."""
        if name not in {s.name for s in self.stages}:
            raise ConfigError(f"no stage named {name!r}")
        stages = tuple(
            Stage(s.name, cost, s.per_block, s.finalize) if s.name == name else s for s in self.stages
        )
        return StageLatencyTable(stages, self.setup_cycles, preset or self.preset, self.notes)

    def to_dict(self) -> dict:
        return {
            "preset": self.preset,
            "notes": self.notes,
            "setup_cycles": self.setup_cycles,
            "stages": [
                {"name": s.name, "cost": asdict(s.cost), "per_block": s.per_block, "finalize": s.finalize}
                for s in self.stages
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StageLatencyTable":
        try:
            stages = tuple(
                Stage(s["name"], StageCost(**s["cost"]), bool(s.get("per_block", False)),
                      int(s.get("finalize", 0)))
                for s in d["stages"]
            )
            return cls(stages, int(d.get("setup_cycles", 0)), d.get("preset"), d.get("notes", ""))
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed stage-latency table: {exc}") from exc

    @classmethod
    def load(cls, path) -> "StageLatencyTable":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: not valid JSON ({exc})") from exc


def load_preset(name: str) -> StageLatencyTable:
    """Frozen stage-latency preset shipped with the package."""
    if name == "naive":
        name = "naive-mamba"
    if name not in PRESET_NAMES:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")
    text = resources.files("intmamba").joinpath("presets").joinpath(f"{name}.json").read_text()
    return StageLatencyTable.from_dict(json.loads(text))


@dataclass(frozen=True)
class PipelineConfig:
    """Workload and hardware parameters. Defaults are the MARS deployment."""

    units: int = 20
    D: int = 20
    L: int = 16
    M: int = 2
    clock_hz: int = 100_000_000
    frame_input_bits: int = 5 * 8 * 8 * 8

    def __post_init__(self):
        for name in ("units", "D", "L", "clock_hz", "frame_input_bits"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.M < 0:
            raise ConfigError("M must be non-negative")
        if self.D % self.units:
            raise ConfigError(f"{self.units} range-norm units do not divide D={self.D}")

    def replace(self, **changes) -> "PipelineConfig":
        return PipelineConfig(**{**asdict(self), **changes})


@dataclass(frozen=True)
class StageProfile:
    name: str
    cycles_per_token: int
    busy: int
    stall: int
    idle: int


@dataclass(frozen=True)
class CycleReport:
    """Result of one simulated frame.

    ``initiation_interval_cycles`` is the steady-state spacing of tokens;
    ``frame_interval_cycles`` the spacing of back-to-back frames, which is
    what throughput is based on.
    """

    frame_latency_cycles: int
    initiation_interval_cycles: int
    frame_interval_cycles: int
    throughput_bits_per_s: float
    stages: tuple[StageProfile, ...]
    preset: str | None = None
    units: int = 0
    enter: tuple[tuple[int, ...], ...] = field(default=(), repr=False)
    leave: tuple[tuple[int, ...], ...] = field(default=(), repr=False)

    def to_dict(self, with_trace: bool = False) -> dict:
        d = {
            "preset": self.preset,
            "units": self.units,
            "frame_latency_cycles": self.frame_latency_cycles,
            "initiation_interval_cycles": self.initiation_interval_cycles,
            "frame_interval_cycles": self.frame_interval_cycles,
            "throughput_bits_per_s": self.throughput_bits_per_s,
            "stages": [asdict(s) for s in self.stages],
        }
        if with_trace:
            d["enter"] = [list(r) for r in self.enter]
            d["leave"] = [list(r) for r in self.leave]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        head = (
            f"preset={self.preset} units={self.units} frame_latency={self.frame_latency_cycles} "
            f"II={self.initiation_interval_cycles} frame_interval={self.frame_interval_cycles} "
            f"throughput={self.throughput_bits_per_s / 1e6:.2f} Mb/s"
        )
        rows = [("stage", "cyc/token", "busy", "stall", "idle")]
        rows += [(s.name, str(s.cycles_per_token), str(s.busy), str(s.stall), str(s.idle)) for s in self.stages]
        return head + "\n" + format_table(rows)


def format_table(rows: list[tuple[str, ...]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for k, row in enumerate(rows):
        cells = [c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))]
        lines.append("  ".join(cells).rstrip())
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def simulate(config: PipelineConfig, table: StageLatencyTable) -> CycleReport:
    """Run one frame of ``config.L`` tokens through the pipeline."""
    stages = table.expand(config)
    S, L = len(stages), config.L
    cost = [c for _, c, _ in stages]
    enter = [[0] * L for _ in range(S)]
    done = [[0] * L for _ in range(S)]
    leave = [[0] * L for _ in range(S)]
    for t in range(L):
        for i in range(S):
            valid = table.setup_cycles if i == 0 else done[i - 1][t]
            # the slot frees when the previous token moves on
            ready = leave[i][t - 1] if t else 0
            enter[i][t] = max(valid, ready)
            done[i][t] = enter[i][t] + cost[i]
            if i:
                leave[i - 1][t] = enter[i][t]
        leave[S - 1][t] = done[S - 1][t]
    finalize = stages[-1][2]
    latency = done[S - 1][L - 1] + finalize

    profiles = []
    for i, (name, c, fin) in enumerate(stages):
        busy = L * c + (fin if i == S - 1 else 0)
        stall = sum(leave[i][t] - done[i][t] for t in range(L))
        profiles.append(StageProfile(name, c, busy, stall, latency - busy - stall))

    # steady-state token spacing out of the pipeline
    ii = done[S - 1][L - 1] - done[S - 1][L - 2] if L > 1 else max(cost)
    frame_interval = max(L * c + (fin if i == S - 1 else 0) for i, (_, c, fin) in enumerate(stages))
    return CycleReport(
        frame_latency_cycles=latency,
        initiation_interval_cycles=ii,
        frame_interval_cycles=frame_interval,
        throughput_bits_per_s=config.frame_input_bits * config.clock_hz / frame_interval,
        stages=tuple(profiles),
        preset=table.preset,
        units=config.units,
        enter=tuple(tuple(r) for r in enter),
        leave=tuple(tuple(r) for r in leave),
    )


def sweep_units(config: PipelineConfig, table: StageLatencyTable, unit_list) -> list[tuple[int, CycleReport]]:
    return [(u, simulate(config.replace(units=u), table)) for u in unit_list]


def sweep_csv(results: list[tuple[int, CycleReport]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["units", "range_norm_cycles", "frame_latency_cycles",
                     "initiation_interval_cycles", "throughput_mbps"])
    for units, rep in results:
        rn = next((s.cycles_per_token for s in rep.stages if s.name.endswith(".norm")), "")
        writer.writerow([units, rn, rep.frame_latency_cycles, rep.initiation_interval_cycles,
                         f"{rep.throughput_bits_per_s / 1e6:.3f}"])
    return buf.getvalue()


def range_norm_ablation(naive: StageLatencyTable, emamba: StageLatencyTable) -> StageLatencyTable:
    """The naive pipeline with only its normalization stage swapped for range norm."""
    norm = next(s for s in emamba.stages if s.name == "norm")
    return naive.with_stage("norm", norm.cost, preset="naive-mamba+range-norm")


def compare_presets(config: PipelineConfig | None = None) -> dict[str, CycleReport]:
    """Reports for the shipped presets plus the range-norm-only ablation."""
    config = config or PipelineConfig()
    emamba, naive = load_preset("emamba"), load_preset("naive-mamba")
    return {
        "emamba": simulate(config, emamba),
        "naive-mamba": simulate(config, naive),
        "naive-mamba+range-norm": simulate(config, range_norm_ablation(naive, emamba)),
    }


def comparison_text(reports: dict[str, CycleReport]) -> str:
    base = reports.get("naive-mamba")
    rows = [("preset", "frame_latency", "II", "throughput_Mbps", "speedup_vs_naive")]
    for name, rep in reports.items():
        speedup = base.frame_latency_cycles / rep.frame_latency_cycles if base else float("nan")
        rows.append((name, str(rep.frame_latency_cycles), str(rep.initiation_interval_cycles),
                     f"{rep.throughput_bits_per_s / 1e6:.2f}", f"{speedup:.2f}x"))
    return format_table(rows)

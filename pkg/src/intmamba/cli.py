"""``intmamba`` command line.

Subcommands: fit-approx, init-model, quantize, infer, eval, simulate, sweep,
compare-presets. Every command writes a run manifest to the output directory
(``--out-dir``, else ``$INTMAMBA_OUT_DIR``, else the current directory).
Exit status is 0 only when all outputs were written and all checks passed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, nas, pipesim
from .approx import ORACLES, fit_piecewise, max_error
from .errors import FitError, IntMambaError
from .mamba import (
    PRESETS, MambaConfig, init_weights, load_model, load_tensor,
    model_forward_ref, predict, quantize_model, save_model, save_tensor,
)
from .mamba.model import Model
from .qnum import QTensor, dequantize

OUT_DIR_ENV = "INTMAMBA_OUT_DIR"


@dataclass
class RunManifest:
    command: str
    inputs: list[str] = field(default_factory=list)
    config_hash: str = ""
    tool_version: str = __version__
    outputs: list[str] = field(default_factory=list)
    wall_time_s: float = 0.0
    ok: bool = True


def _hash_inputs(args: argparse.Namespace, inputs: list[str]) -> str:
    h = hashlib.sha256()
    opts = {k: str(v) for k, v in sorted(vars(args).items()) if k not in ("func", "out_dir", "json")}
    h.update(json.dumps(opts, sort_keys=True).encode())
    for path in inputs:
        h.update(Path(path).read_bytes())
    return h.hexdigest()


def _write(path, text: str, manifest: RunManifest) -> None:
    Path(path).write_text(text)
    manifest.outputs.append(str(path))


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(text, end="" if text.endswith("\n") else "\n")


def _load_frames(path) -> np.ndarray:
    value = load_tensor(path)
    frames = dequantize(value) if isinstance(value, QTensor) else np.asarray(value, dtype=np.float64)
    return frames


def _model_config(source: str) -> MambaConfig:
    if source in PRESETS:
        return PRESETS[source]
    return MambaConfig.from_dict(json.loads(Path(source).read_text()))


# -- commands ----------------------------------------------------------------

def cmd_fit_approx(args, manifest: RunManifest) -> bool:
    lo, hi = (float(v) for v in args.domain.split(","))
    try:
        fn = fit_piecewise(args.fn, (lo, hi), args.max_err, args.metric)
    except FitError as exc:
        print(f"fit failed: {exc} (achieved error {exc.achieved_error:.4g})", file=sys.stderr)
        return False
    observed = max_error(fn, args.fn)
    fn.save(args.out)
    manifest.outputs.append(str(args.out))
    ok = observed <= args.max_err
    _emit(args, {"fn": args.fn, "segments": fn.n_segments, "max_error": observed, "out": str(args.out)},
          f"{args.fn} on [{lo:g}, {hi:g}]: {fn.n_segments} segments, max error {observed:.4%}"
          f" (bound {args.max_err:.2%}) -> {args.out}")
    return ok


def cmd_init_model(args, manifest: RunManifest) -> bool:
    config = _model_config(args.config)
    weights = init_weights(config, args.seed)
    save_model(args.out, Model(config, weights))
    manifest.outputs.append(str(args.out))
    payload = {"config": config.to_dict(), "params": nas.param_count(config), "out": str(args.out)}
    if args.frames_out:
        rng = np.random.default_rng(args.seed + 1)
        frames = rng.normal(size=(args.n_frames,) + config.frame_shape).astype(np.float32)
        save_tensor(args.frames_out, frames, "frames")
        manifest.outputs.append(str(args.frames_out))
        payload["frames"] = str(args.frames_out)
    _emit(args, payload, f"random model {config.key()} with {payload['params']} parameters -> {args.out}")
    return True


def cmd_quantize(args, manifest: RunManifest) -> bool:
    model = load_model(args.model_in)
    config = model.config.replace(act_bits=args.act_bits)
    frames = _load_frames(args.calib)
    qmodel = quantize_model(config, model.weights, list(frames), args.coverage)
    save_model(args.out, qmodel)
    manifest.outputs.append(str(args.out))
    _emit(args, {"out": str(args.out), "tensors": len(qmodel.weights.quant),
                 "calibration_frames": len(frames)},
          f"quantized {len(qmodel.weights.quant)} tensors on {len(frames)} frames -> {args.out}")
    return True


def _run_model(args) -> tuple[Model, np.ndarray, np.ndarray]:
    model = load_model(args.model)
    frames = _load_frames(args.input)
    if model.weights.is_quantized and not args.float:
        preds = predict(frames, model)
    else:
        preds = np.stack([model_forward_ref(f, model.config, model.weights) for f in frames])
    return model, frames, preds


def cmd_infer(args, manifest: RunManifest) -> bool:
    _, _, preds = _run_model(args)
    if args.out:
        save_tensor(args.out, preds.astype(np.float32), "predictions")
        manifest.outputs.append(str(args.out))
    _emit(args, {"shape": list(preds.shape), "predictions": preds.tolist()},
          f"{preds.shape[0]} predictions of {preds.shape[1]} values"
          + (f" -> {args.out}" if args.out else ""))
    return True


def cmd_eval(args, manifest: RunManifest) -> bool:
    model, frames, preds = _run_model(args)
    labels = _load_frames(args.labels)
    record = nas.eval_metrics(preds, labels, args.task)
    payload = {"metrics": record.to_dict()}
    lines = [f"{args.task} on {record.n} frames"]
    if record.accuracy is not None:
        lines.append(f"top-1 accuracy {record.accuracy:.2f}%")
    else:
        lines.append(f"MAE {record.mae:.6g}  RMSE {record.rmse:.6g}")
    if model.weights.is_quantized and model.weights.real and not args.float:
        ref = np.stack([model_forward_ref(f, model.config, model.weights) for f in frames])
        lsb = 2.0 ** model.weights.act_scales["head.out"]
        diff = float(np.max(np.abs(preds - ref)))
        payload["divergence"] = {"max_abs": diff, "max_lsb": diff / lsb}
        lines.append(f"quantized vs float: max |diff| {diff:.4g} ({diff / lsb:.2f} output LSBs)")
    if args.out:
        _write(args.out, json.dumps(payload, indent=2, sort_keys=True) + "\n", manifest)
    _emit(args, payload, "\n".join(lines))
    return True


def _pipeline_config(args) -> pipesim.PipelineConfig:
    if args.pipeline:
        return pipesim.PipelineConfig(**json.loads(Path(args.pipeline).read_text()))
    return pipesim.PipelineConfig()


def _table(args) -> pipesim.StageLatencyTable:
    if args.table:
        return pipesim.StageLatencyTable.load(args.table)
    return pipesim.load_preset(args.preset)


def cmd_simulate(args, manifest: RunManifest) -> bool:
    config = _pipeline_config(args)
    if args.units:
        config = config.replace(units=args.units)
    report = pipesim.simulate(config, _table(args))
    if args.out:
        _write(args.out, report.to_json(), manifest)
    _emit(args, report.to_dict(), report.to_text())
    return True


def cmd_sweep(args, manifest: RunManifest) -> bool:
    config = _pipeline_config(args)
    if args.units_list:
        units = [int(u) for u in args.units_list.split(",")]
        results = pipesim.sweep_units(config, _table(args), units)
        text = pipesim.sweep_csv(results)
        payload = {"sweep": [r.to_dict() for _, r in results]}
    else:
        points = nas.sweep(args.grid, config, args.metrics)
        text = nas.points_to_csv(points)
        payload = {"points": [p.to_row() for p in points]}
    if args.out:
        _write(args.out, text, manifest)
    if args.json_out:
        _write(args.json_out, json.dumps(payload, indent=2, sort_keys=True) + "\n", manifest)
    _emit(args, payload, text)
    return True


def cmd_compare_presets(args, manifest: RunManifest) -> bool:
    config = _pipeline_config(args)
    if args.units:
        config = config.replace(units=args.units)
    reports = pipesim.compare_presets(config)
    payload = {name: r.to_dict() for name, r in reports.items()}
    if args.out:
        _write(args.out, json.dumps(payload, indent=2, sort_keys=True) + "\n", manifest)
    _emit(args, payload, pipesim.comparison_text(reports))
    return True


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="intmamba", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output on stdout")
    common.add_argument("--out-dir", help=f"manifest directory (default ${OUT_DIR_ENV} or .)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-approx", parents=[common], help="fit a piecewise-linear approximation")
    p.add_argument("--fn", required=True, choices=sorted(ORACLES))
    p.add_argument("--domain", required=True, help="lo,hi")
    p.add_argument("--max-err", type=float, default=0.03)
    p.add_argument("--metric", default="relative-with-floor", choices=["relative-with-floor", "absolute"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_approx)

    p = sub.add_parser("init-model", parents=[common], help="write a randomly initialised float model")
    p.add_argument("--config", default="mars", help=f"preset ({', '.join(PRESETS)}) or config JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--frames-out", help="also write random frames here")
    p.add_argument("--n-frames", type=int, default=10)
    p.set_defaults(func=cmd_init_model)

    p = sub.add_parser("quantize", parents=[common], help="calibrate and quantize a float model")
    p.add_argument("--model-in", required=True)
    p.add_argument("--act-bits", type=int, default=8)
    p.add_argument("--calib", required=True, help="frame container")
    p.add_argument("--coverage", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_quantize)

    for name, func, help_text in (("infer", cmd_infer, "run a model over frames"),
                                  ("eval", cmd_eval, "run a model and score it")):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--model", required=True)
        p.add_argument("--input", required=True, help="frame container")
        p.add_argument("--float", action="store_true", help="use the float reference path")
        p.add_argument("--out")
        if name == "eval":
            p.add_argument("--labels", required=True, help="ground-truth container")
            p.add_argument("--task", default="regression", choices=["regression", "classification"])
        p.set_defaults(func=func)

    def pipeline_args(p):
        p.add_argument("--pipeline", help="PipelineConfig JSON (default: MARS deployment)")
        p.add_argument("--preset", default="emamba", choices=["emamba", "naive", "naive-mamba"])
        p.add_argument("--table", help="stage-latency JSON instead of a preset")

    p = sub.add_parser("simulate", parents=[common], help="simulate one frame through the pipeline")
    pipeline_args(p)
    p.add_argument("--units", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", parents=[common], help="configuration sweep or range-norm unit sweep")
    pipeline_args(p)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--grid", default="default", help="grid JSON or 'default'")
    group.add_argument("--units-list", help="comma-separated unit counts")
    p.add_argument("--metrics", help="metrics JSON keyed by (D, E, P, N, M)")
    p.add_argument("--out", help="CSV output")
    p.add_argument("--json-out", help="JSON output")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare-presets", parents=[common], help="emamba vs naive vs range-norm ablation")
    p.add_argument("--pipeline")
    p.add_argument("--units", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare_presets)
    return parser


_INPUT_FLAGS = ("model_in", "calib", "model", "input", "labels", "pipeline", "table", "metrics")


def _join_negative_values(argv: list[str]) -> list[str]:
    # "--domain -7,7" would otherwise be read as an unknown option
    out = []
    for token in argv:
        if out and out[-1] == "--domain" and token.startswith("-"):
            out[-1] = f"--domain={token}"
        else:
            out.append(token)
    return out


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(_join_negative_values(argv))
    manifest = RunManifest(command=args.command)
    manifest.inputs = [getattr(args, k) for k in _INPUT_FLAGS if getattr(args, k, None)]
    if getattr(args, "grid", None) not in (None, "default"):
        manifest.inputs.append(args.grid)
    start = time.perf_counter()
    try:
        manifest.config_hash = _hash_inputs(args, manifest.inputs)
        manifest.ok = bool(args.func(args, manifest))
    except (IntMambaError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        manifest.ok = False
    manifest.wall_time_s = round(time.perf_counter() - start, 6)
    out_dir = Path(args.out_dir or os.environ.get(OUT_DIR_ENV) or ".")
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"{args.command}.manifest.json").write_text(
            json.dumps(asdict(manifest), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        print(f"error: cannot write manifest: {exc}", file=sys.stderr)
        return 1
    return 0 if manifest.ok else 1


if __name__ == "__main__":
    sys.exit(main())

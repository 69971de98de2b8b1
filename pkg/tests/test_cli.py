import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from intmamba import nas
from intmamba.approx import PiecewiseLinearFn
from intmamba.cli import main
from intmamba.mamba import load_model, load_tensor, save_tensor


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def manifest(out_dir, command):
    return json.loads((out_dir / f"{command}.manifest.json").read_text())


@pytest.fixture
def tiny(tmp_path, capsys):
    """A quantized tiny model with frames and labels on disk."""
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"D": 4, "E": 2, "P": 2, "N": 2, "M": 1, "in_channels": 1,
                               "in_height": 4, "in_width": 4, "out_dim": 6}))
    code, _, _ = run(capsys, "init-model", "--config", cfg, "--out", tmp_path / "f.bin",
                     "--frames-out", tmp_path / "frames.bin", "--n-frames", 6, "--out-dir", tmp_path)
    assert code == 0
    code, _, _ = run(capsys, "quantize", "--model-in", tmp_path / "f.bin", "--calib", tmp_path / "frames.bin",
                     "--out", tmp_path / "q.bin", "--out-dir", tmp_path)
    assert code == 0
    save_tensor(tmp_path / "labels.bin", np.zeros((6, 6), dtype=np.float32))
    return tmp_path


def test_fit_approx(tmp_path, capsys):
    code, out, _ = run(capsys, "fit-approx", "--fn", "silu", "--domain", "-7,7", "--max-err", 0.03,
                       "--out", tmp_path / "silu.json", "--out-dir", tmp_path, "--json")
    assert code == 0
    payload = json.loads(out)
    assert payload["segments"] <= 20 and payload["max_error"] <= 0.03
    assert PiecewiseLinearFn.load(tmp_path / "silu.json").n_segments == payload["segments"]
    m = manifest(tmp_path, "fit-approx")
    assert m["ok"] and m["outputs"] == [str(tmp_path / "silu.json")]
    assert set(m) == {"command", "inputs", "config_hash", "tool_version", "outputs", "wall_time_s", "ok"}


def test_fit_failure_exit_code(tmp_path, capsys):
    code, _, err = run(capsys, "fit-approx", "--fn", "exp", "--domain", "-4,1", "--max-err", 1e-6,
                       "--out", tmp_path / "e.json", "--out-dir", tmp_path)
    assert code != 0 and "fit failed" in err
    assert not manifest(tmp_path, "fit-approx")["ok"]


def test_quantize_deterministic(tiny, capsys):
    first = (tiny / "q.bin").read_bytes()
    run(capsys, "quantize", "--model-in", tiny / "f.bin", "--calib", tiny / "frames.bin",
        "--out", tiny / "q2.bin", "--out-dir", tiny)
    assert (tiny / "q2.bin").read_bytes() == first
    assert load_model(tiny / "q.bin").weights.is_quantized


def test_infer_and_eval(tiny, capsys):
    code, _, _ = run(capsys, "infer", "--model", tiny / "q.bin", "--input", tiny / "frames.bin",
                     "--out", tiny / "pred.bin", "--out-dir", tiny)
    assert code == 0
    preds = load_tensor(tiny / "pred.bin")
    assert preds.shape == (6, 6)
    code, out, _ = run(capsys, "eval", "--model", tiny / "q.bin", "--input", tiny / "frames.bin",
                       "--labels", tiny / "labels.bin", "--out-dir", tiny, "--json")
    assert code == 0
    payload = json.loads(out)
    assert payload["metrics"]["mae"] == pytest.approx(np.abs(preds).mean(), rel=1e-5)
    assert len(payload["metrics"]["mae_per_axis"]) == 3
    assert "max_lsb" in payload["divergence"]
    assert manifest(tiny, "eval")["inputs"] == [str(tiny / "q.bin"), str(tiny / "frames.bin"),
                                               str(tiny / "labels.bin")]


def test_eval_length_mismatch_fails(tiny, capsys):
    save_tensor(tiny / "short.bin", np.zeros((2, 6), dtype=np.float32))
    code, _, err = run(capsys, "eval", "--model", tiny / "q.bin", "--input", tiny / "frames.bin",
                       "--labels", tiny / "short.bin", "--out-dir", tiny)
    assert code != 0 and "error" in err


def test_corrupt_model_fails(tiny, capsys):
    (tiny / "bad.bin").write_bytes((tiny / "q.bin").read_bytes()[:100])
    code, _, err = run(capsys, "infer", "--model", tiny / "bad.bin", "--input", tiny / "frames.bin",
                       "--out-dir", tiny)
    assert code != 0 and "error" in err
    assert not manifest(tiny, "infer")["ok"]


def test_simulate(tmp_path, capsys):
    code, out, _ = run(capsys, "simulate", "--preset", "emamba", "--json", "--out-dir", tmp_path)
    assert code == 0 and json.loads(out)["frame_latency_cycles"] == 1643
    code, out, _ = run(capsys, "simulate", "--preset", "naive", "--out-dir", tmp_path)
    assert code == 0 and "frame_latency=10220" in out
    code, _, _ = run(capsys, "simulate", "--units", 3, "--out-dir", tmp_path)
    assert code != 0


def test_sweep_units(tmp_path, capsys):
    code, _, _ = run(capsys, "sweep", "--units-list", "1,2,4,5,10,20", "--out", tmp_path / "u.csv",
                     "--out-dir", tmp_path)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO((tmp_path / "u.csv").read_text())))
    assert [int(r["frame_latency_cycles"]) for r in rows] == [9493, 5243, 3118, 2693, 1843, 1643]


def test_sweep_default_grid_front(tmp_path, capsys):
    code, _, _ = run(capsys, "sweep", "--grid", "default", "--out", tmp_path / "g.csv",
                     "--json-out", tmp_path / "g.json", "--out-dir", tmp_path)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO((tmp_path / "g.csv").read_text())))
    assert len(rows) == 144
    objs = [(int(r["params"]), int(r["latency"])) for r in rows]
    for r, o in zip(rows, objs):
        assert r["on_front"] == ("0" if any(nas.dominates(q, o) for q in objs) else "1")
    assert len(json.loads((tmp_path / "g.json").read_text())["points"]) == 144


def test_sweep_unmatched_metrics(tmp_path, capsys):
    (tmp_path / "m.json").write_text(json.dumps({"metrics": [{"config": [7, 1, 2, 4, 1], "value": 1}]}))
    code, _, err = run(capsys, "sweep", "--metrics", tmp_path / "m.json", "--out-dir", tmp_path)
    assert code != 0 and "match no grid point" in err


def test_compare_presets(tmp_path, capsys):
    code, out, _ = run(capsys, "compare-presets", "--json", "--out-dir", tmp_path)
    payload = json.loads(out)
    assert code == 0
    assert payload["emamba"]["frame_latency_cycles"] == 1643
    assert payload["naive-mamba"]["frame_latency_cycles"] == 10220


def test_manifest_hash_stable(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("INTMAMBA_OUT_DIR", str(tmp_path / "env"))
    run(capsys, "simulate")
    h1 = manifest(tmp_path / "env", "simulate")["config_hash"]
    run(capsys, "simulate")
    assert manifest(tmp_path / "env", "simulate")["config_hash"] == h1
    run(capsys, "simulate", "--units", 10)
    assert manifest(tmp_path / "env", "simulate")["config_hash"] != h1


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "intmamba.cli", "compare-presets", "--out-dir", str(tmp_path)],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and "naive-mamba" in proc.stdout

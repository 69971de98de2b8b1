"""Build a random MARS-sized model, quantize it and compare against float.

Run:  python3 demos/quantize_mars.py
"""

import tempfile
from pathlib import Path

import numpy as np

from intmamba import approx
from intmamba.mamba import MARS, init_weights, load_model, model_forward_ref, predict, quantize_model, save_model
from intmamba.nas import param_count

rng = np.random.default_rng(0)
weights = init_weights(MARS, rng)
print(f"MARS config {MARS.key()}: {param_count(MARS)} parameters, {MARS.L} tokens per frame")

silu, exp = approx.silu_approx(), approx.exp_approx()
print(f"piecewise SiLU: {silu.n_segments} segments, max error {approx.max_error(silu, 'silu'):.3%}")
print(f"piecewise exp:  {exp.n_segments} segments, max error {approx.max_error(exp, 'exp'):.3%}")

# calibrate on one batch, evaluate on another
calib = rng.normal(size=(16,) + MARS.frame_shape)
test = rng.normal(size=(8,) + MARS.frame_shape)
model = quantize_model(MARS, weights, calib)

ints = predict(test, model)
floats = np.stack([model_forward_ref(f, MARS, weights) for f in test])
lsb = 2.0 ** model.weights.act_scales["head.out"]
diff = np.abs(ints - floats)
print(f"output LSB 2^{model.weights.act_scales['head.out']}: "
      f"max |int - float| = {diff.max():.4f} ({diff.max() / lsb:.2f} LSB), mean {diff.mean() / lsb:.2f} LSB")

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "mars.bin"
    save_model(path, model)
    again = predict(test, load_model(path))
    print(f"container: {path.stat().st_size} bytes, reload bit-exact: {np.array_equal(again, ints)}")

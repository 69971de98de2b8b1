"""Cycle model tour: the two presets, the range-norm ablation and a unit sweep.

Run:  python3 demos/pipeline_walkthrough.py
"""

from intmamba import pipesim
from intmamba.pipesim import PipelineConfig

config = PipelineConfig()  # MARS deployment: D=20, 16 tokens, 2 blocks, 100 MHz
reports = pipesim.compare_presets(config)
print(pipesim.comparison_text(reports))
print()

# where the naive design spends its time
naive = reports["naive-mamba"]
worst = max(naive.stages, key=lambda s: s.cycles_per_token)
print(f"naive bottleneck: {worst.name} at {worst.cycles_per_token} cycles/token")
print()

print("range-norm compute units vs frame latency (emamba preset)")
results = pipesim.sweep_units(config, pipesim.load_preset("emamba"), [1, 2, 4, 5, 10, 20])
print(pipesim.sweep_csv(results), end="")
print()
print(reports["emamba"].to_text())

"""Sweep the default (D, E, P, N, M) grid and show the size/latency front.

Run:  python3 demos/design_space.py
"""

from intmamba import nas

points = nas.sweep("default")
front = [p for p in points if p.on_front]
print(f"{len(points)} configurations, {len(front)} on the parameter/latency front\n")
print(f"{'D':>3} {'E':>2} {'P':>2} {'N':>3} {'M':>2} {'params':>7} {'latency':>8}")
for p in sorted(front, key=lambda p: p.param_count):
    c = p.config
    print(f"{c.D:>3} {c.E:>2} {c.P:>2} {c.N:>3} {c.M:>2} {p.param_count:>7} {p.latency_cycles:>8}")

# attach a made-up quality metric to two points and the front switches objectives
metrics = {"lower_is_better": True, "metrics": [
    {"config": [20, 2, 2, 8, 2], "value": 0.041},
    {"config": [12, 1, 2, 4, 1], "value": 0.090},
]}
scored = [p for p in nas.sweep("default", metrics=metrics) if p.metric is not None]
print("\nwith metrics:", [(p.key, p.metric, p.on_front) for p in scored])

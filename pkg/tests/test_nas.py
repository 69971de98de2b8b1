import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from intmamba import nas
from intmamba.errors import ConfigError, InvalidInputError, ParseError
from intmamba.mamba import MARS, MambaConfig, tensor_shapes


def enumerated(cfg):
    return sum(int(np.prod(s)) for s in tensor_shapes(cfg).values())


class TestParamCount:
    def test_mars(self):
        assert nas.param_count(MARS) == 16261 == enumerated(MARS)

    @settings(max_examples=50)
    @given(st.sampled_from([4, 6, 8, 12]), st.integers(1, 3), st.sampled_from([1, 2, 4]),
           st.integers(1, 16), st.integers(0, 4), st.sampled_from([0, 8]))
    def test_matches_tensor_enumeration(self, D, E, P, N, M, hidden):
        cfg = MambaConfig(D=D, E=E, P=P, N=N, M=M, in_channels=2, in_height=8, in_width=8,
                          out_dim=5, head_hidden=hidden)
        assert nas.param_count(cfg) == enumerated(cfg)

    def test_additive_in_blocks(self):
        counts = [nas.param_count(MARS.replace(M=m)) for m in range(5)]
        steps = set(np.diff(counts).tolist())
        assert steps == {nas.block_param_count(MARS.D, MARS.E, MARS.N, MARS.K)}


class TestSweep:
    def test_default_grid_size(self):
        points = nas.sweep("default")
        assert len(points) == 4 * 2 * 2 * 3 * 3
        assert {p.config.key() for p in points} == {
            (D, E, P, N, M) for D in [12, 16, 20, 24] for E in [1, 2] for P in [2, 4]
            for N in [4, 8, 16] for M in [1, 2, 3]
        }

    def test_front_is_brute_force_front(self):
        points = nas.sweep({"D": [8, 12], "N": [2, 8], "M": [1, 2]})
        objs = [(p.param_count, p.latency_cycles) for p in points]
        for p, o in zip(points, objs):
            dominated = any(nas.dominates(q, o) for q in objs)
            assert p.on_front == (not dominated)

    def test_bytes_follow_bits(self):
        p8 = nas.sweep({"M": [1]})[0]
        p16 = nas.sweep({"M": [1]}, bits=16)[0]
        assert p16.model_bytes == 2 * p8.model_bytes == 2 * p8.param_count

    def test_invalid_grid_points_skipped(self):
        # P=3 does not divide the 8x8 frame
        points = nas.sweep({"P": [2, 3]})
        assert [p.config.P for p in points] == [2]

    def test_units_clamped_to_divisor(self):
        points = nas.sweep({"D": [12]}, nas.PipelineConfig(units=20))
        assert points[0].latency_cycles > 0

    def test_metrics_join(self, tmp_path):
        grid = {"D": [12, 16], "M": [1, 2]}
        metrics = {"lower_is_better": True, "metrics": [
            {"config": [12, 2, 2, 8, 1], "value": 0.30},
            {"config": [16, 2, 2, 8, 1], "value": 0.20},
            {"config": [16, 2, 2, 8, 2], "value": 0.25},
        ]}
        path = tmp_path / "m.json"
        path.write_text(json.dumps(metrics))
        points = nas.sweep(grid, metrics=path)
        by_key = {p.key: p for p in points}
        assert by_key[(12, 2, 2, 8, 2)].metric is None
        assert not by_key[(12, 2, 2, 8, 2)].on_front
        front = {k for k, p in by_key.items() if p.on_front}
        # (16, M=2) is larger and worse than (16, M=1)
        assert front == {(12, 2, 2, 8, 1), (16, 2, 2, 8, 1)}

    def test_higher_is_better_metrics(self):
        metrics = {"lower_is_better": False, "metrics": [
            {"config": [12, 2, 2, 8, 2], "value": 90.0},
            {"config": [16, 2, 2, 8, 2], "value": 80.0},
        ]}
        points = nas.sweep({"D": [12, 16]}, metrics=metrics)
        assert [p.key for p in points if p.on_front] == [(12, 2, 2, 8, 2)]

    def test_unmatched_metric_keys(self):
        metrics = {"metrics": [{"config": [99, 2, 2, 16, 1], "value": 1.0}]}
        with pytest.raises(ParseError):
            nas.sweep({"D": [12]}, metrics=metrics)

    def test_bad_grid(self):
        with pytest.raises((ConfigError, ParseError)):
            nas.load_grid({"Q": [1]})

    def test_outputs(self):
        points = nas.sweep({"D": [12, 16]})
        rows = nas.points_to_csv(points).strip().splitlines()
        assert rows[0] == "D,E,P,N,M,params,bytes,latency,metric,on_front"
        assert len(rows) == 3 and rows[1].split(",")[-1] in {"0", "1"}
        assert len(json.loads(nas.points_to_json(points))) == 2


def brute_front(pts):
    return [p for p in pts if not any(nas.dominates(q, p) for q in pts)]


class TestPareto:
    def test_examples(self):
        pts = [(1, 5), (2, 2), (3, 3), (5, 1), (2, 2)]
        assert nas.pareto_front(pts) == [(1, 5), (2, 2), (2, 2), (5, 1)]
        assert nas.pareto_front([(1, 1), (2, 2)]) == [(1, 1)]
        assert nas.pareto_front([]) == []

    def test_random_against_oracle(self):
        rng = np.random.default_rng(0)
        pts = [tuple(v) for v in rng.integers(0, 30, (200, 2)).tolist()]
        front = nas.pareto_front(pts)
        assert sorted(front) == sorted(brute_front(pts))
        firsts = [p[0] for p in front]
        assert firsts == sorted(firsts)

    def test_idempotent_and_scale_invariant(self):
        rng = np.random.default_rng(1)
        pts = [tuple(v) for v in rng.normal(size=(100, 3)).tolist()]
        obj = ((0, "min"), (1, "min"), (2, "max"))
        front = nas.pareto_front(pts, obj)
        assert nas.pareto_front(front, obj) == front
        scaled = [(3 * a + 1, 0.5 * b - 2, 7 * c) for a, b, c in pts]
        assert [scaled[pts.index(p)] for p in front] == nas.pareto_front(scaled, obj)

    def test_missing_objective(self):
        with pytest.raises(InvalidInputError):
            nas.pareto_front([{"a": 1, "b": 2}, {"a": 2}], (("a", "min"), ("b", "min")))

    def test_bad_direction(self):
        with pytest.raises(ConfigError):
            nas.pareto_front([(1, 2)], ((0, "up"),))


class TestEvalMetrics:
    def test_regression_per_axis(self):
        gt = np.zeros((2, 6))
        pred = np.array([[1, 0, 0, 1, 0, 0], [1, 2, 0, 1, 2, 0]], dtype=float)
        rec = nas.eval_metrics(pred, gt)
        assert rec.mae_per_axis == (1.0, 1.0, 0.0)
        assert rec.rmse_per_axis == pytest.approx((1.0, np.sqrt(2.0), 0.0))
        assert rec.mae == pytest.approx(2 / 3)

    def test_perfect(self):
        x = np.random.default_rng(0).normal(size=(5, 57))
        rec = nas.eval_metrics(x, x)
        assert rec.mae == 0.0 and rec.rmse == 0.0 and len(rec.mae_per_axis) == 3

    def test_classification(self):
        scores = np.array([[0.1, 0.9], [0.8, 0.2], [0.3, 0.7], [0.6, 0.4]])
        assert nas.eval_metrics(scores, [1, 0, 0, 0], "classification").accuracy == 75.0

    def test_mismatched_lengths(self):
        with pytest.raises(InvalidInputError):
            nas.eval_metrics(np.zeros((3, 3)), np.zeros((2, 3)))
        with pytest.raises(InvalidInputError):
            nas.eval_metrics([], [])
        with pytest.raises(ConfigError):
            nas.eval_metrics(np.zeros((2, 4)), np.zeros((2, 4)), axes=3)

"""Trace format round-trip and generator statistics."""
import json

import pytest

from actionsched.trace import (
    ActSeg,
    GenParams,
    ThinkSeg,
    TraceError,
    TrajectoryRec,
    gen_trace,
    measure_active_ratio,
    read_trace,
    write_trace,
)


def small_params(**overrides):
    base = dict(n_trajectories=20, kind="cpu", resource="cpu",
                turns=(2, 4), arrival_spread=10.0)
    base.update(overrides)
    return GenParams(**base)


class TestFormat:
    def test_round_trip_equality(self, tmp_path):
        trajs = gen_trace(small_params(), seed=1)
        p = tmp_path / "t.jsonl"
        write_trace(p, trajs)
        assert read_trace(p) == trajs

    def test_header_is_self_describing(self, tmp_path):
        p = tmp_path / "t.jsonl"
        write_trace(p, gen_trace(small_params(n_trajectories=3), seed=1))
        header = json.loads(p.read_text().splitlines()[0])
        assert header["format"] == "action-trace"
        assert header["version"] == 1
        assert header["trajectories"] == 3

    def test_rejects_foreign_file(self, tmp_path):
        p = tmp_path / "t.jsonl"
        p.write_text('{"format": "something-else", "version": 1}\n')
        with pytest.raises(TraceError):
            read_trace(p)

    def test_rejects_unsupported_version(self, tmp_path):
        p = tmp_path / "t.jsonl"
        p.write_text('{"format": "action-trace", "version": 99}\n')
        with pytest.raises(TraceError):
            read_trace(p)

    def test_malformed_line_reports_position(self, tmp_path):
        p = tmp_path / "t.jsonl"
        p.write_text('{"format": "action-trace", "version": 1}\n{"id": 0}\n')
        with pytest.raises(TraceError, match=":2"):
            read_trace(p)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "t.jsonl"
        p.write_text("")
        with pytest.raises(TraceError):
            read_trace(p)


class TestTrajectoryRec:
    def test_requires_segments(self):
        with pytest.raises(TraceError):
            TrajectoryRec(id=0, segments=())

    def test_rejects_non_positive_durations(self):
        with pytest.raises(TraceError):
            TrajectoryRec(id=0, segments=(ThinkSeg(dur=0.0),))
        with pytest.raises(TraceError):
            TrajectoryRec(id=0, segments=(
                ActSeg("cpu", (1,), true_dur=-1.0),))

    def test_rejects_negative_start(self):
        with pytest.raises(TraceError):
            TrajectoryRec(id=0, segments=(ThinkSeg(1.0),), start=-1.0)

    def test_active_ratio(self):
        t = TrajectoryRec(id=0, segments=(
            ThinkSeg(6.0), ActSeg("cpu", (1,), 4.0)))
        assert t.active_ratio() == pytest.approx(0.4)


class TestGenerator:
    def test_deterministic(self):
        assert gen_trace(small_params(), 5) == gen_trace(small_params(), 5)
        assert gen_trace(small_params(), 5) != gen_trace(small_params(), 6)

    def test_counts_and_shape(self):
        trajs = gen_trace(small_params(n_trajectories=50), seed=2)
        assert len(trajs) == 50
        for t in trajs:
            acts = t.acts()
            assert 2 <= len(acts) <= 4
            # segments alternate think, act
            assert all(isinstance(s, ThinkSeg) for s in t.segments[0::2])
            assert all(isinstance(s, ActSeg) for s in t.segments[1::2])
            assert 0.0 <= t.start < 10.0

    def test_active_ratio_is_exact_per_trajectory(self):
        trajs = gen_trace(small_params(n_trajectories=200), seed=3)
        for t in trajs:
            assert t.active_ratio() == pytest.approx(0.47)
        assert measure_active_ratio(trajs) == pytest.approx(0.47)

    def test_gpu_kind_assigns_services(self):
        trajs = gen_trace(small_params(kind="gpu", resource="gpu",
                                       n_services=4, service_skew=0.8,
                                       gpu_units=(1, 2, 4, 8)), seed=4)
        for t in trajs:
            for a in t.acts():
                assert a.service is not None
                assert a.units == (1, 2, 4, 8)

    def test_api_kind_is_unscalable(self):
        trajs = gen_trace(small_params(kind="api", resource="api"), seed=4)
        for t in trajs:
            for a in t.acts():
                assert a.units == (1,) and not a.profiled

    def test_profiled_rewards_have_monotone_tables(self):
        trajs = gen_trace(small_params(scalable_fraction=1.0, max_dop=16,
                                       gamma_range=(0.1, 0.5)), seed=7)
        for t in trajs:
            reward = t.acts()[-1]
            assert reward.profiled
            table = dict(reward.elasticity)
            assert table[1] == 1.0
            work = [m * e for m, e in sorted(table.items())]
            assert all(a <= b + 1e-9 for a, b in zip(work, work[1:]))

    @pytest.mark.parametrize("bad", [
        dict(n_trajectories=0),
        dict(active_ratio=1.0),
        dict(active_ratio=0.0),
        dict(turns=(0, 3)),
        dict(turns=(4, 2)),
        dict(kind="tpu"),
        dict(max_dop=0),
    ])
    def test_parameter_validation(self, bad):
        with pytest.raises(TraceError):
            gen_trace(small_params(**bad), seed=1)

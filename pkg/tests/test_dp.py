"""Discrete allocation DP: operators, flat table, brute-force equivalence."""
import random

import pytest
from hypothesis import given, settings, strategies as st

from actionsched.dp import (
    AllocationResult,
    BasicOperator,
    DpTask,
    FlatDpTable,
    brute_force_arrange,
    dp_arrange,
    dp_task,
)
from actionsched.model import ElasticityProfile, InfeasibleError, UnitSpec


def task(units, gamma=0.0, base=None):
    """Task whose speedup follows m**-gamma; base defaults to min-unit dur 1."""
    if base is None:
        base = 1.0
    # base / (E(m)*m) with E(m) = m**-gamma
    durs = tuple(base / (m ** -gamma * m) for m in units)
    return DpTask(tuple(units), durs)


class TestExamples:
    def test_two_tasks_split_evenly(self):
        # A base 8 and B base 4, both perfectly scalable over {1,2,4}
        a = DpTask((1, 2, 4), (8.0, 4.0, 2.0))
        b = DpTask((1, 2, 4), (4.0, 2.0, 1.0))
        res = dp_arrange([a, b], BasicOperator(4))
        assert res.total_duration == 6.0
        assert res.allocations == (2, 2)
        assert res.per_task_durations == (4.0, 2.0)

    def test_single_task_takes_everything(self):
        t = DpTask((1, 2, 4), (20.0, 10.0, 5.0))
        res = dp_arrange([t], BasicOperator(4))
        assert res.total_duration == 5.0
        assert res.allocations == (4,)

    def test_infeasible_minimums(self):
        t = DpTask((2, 4), (4.0, 2.0))
        with pytest.raises(InfeasibleError):
            dp_arrange([t, t, t], BasicOperator(5))

    def test_empty_task_list(self):
        assert dp_arrange([], BasicOperator(8)) == AllocationResult(0.0, (), ())

    def test_gapped_units_prefer_partial_use(self):
        # Forcing the pool to be fully consumed would pick the expensive
        # (16, 2) combination; the optimum leaves units idle.
        a = DpTask((1, 16), (25.0, 25.0 / 16 + 0.001))
        b = DpTask((2, 4), (50.0, 25.0))
        res = dp_arrange([a, b], BasicOperator(18))
        oracle = brute_force_arrange([a, b], 18)
        assert res.total_duration == pytest.approx(oracle.total_duration)

    def test_dp_task_builder(self):
        p = ElasticityProfile.of(0, {1: 1.0, 2: 0.75})
        t = dp_task(p, 6.0, UnitSpec((1, 2)))
        assert t.durations == (6.0, 4.0)


class TestBasicOperator:
    def test_start_end(self):
        op = BasicOperator(10)
        specs = [UnitSpec((1, 2)), UnitSpec((2, 4))]
        assert op.start(specs) == 3
        assert op.end(specs) == 6
        assert op.end([UnitSpec((8, 16))]) == 10

    def test_prev(self):
        op = BasicOperator(10)
        assert op.prev(7, 4) == 3
        assert op.prev(3, 4) is None

    def test_is_valid_exact_cover(self):
        op = BasicOperator(10)
        specs = [UnitSpec((1, 2)), UnitSpec((2, 4))]
        assert op.is_valid(3, specs)       # 1 + 2
        assert op.is_valid(6, specs)       # 2 + 4
        assert not op.is_valid(7, specs)   # no combination sums to 7
        assert not op.is_valid(2, specs)

    def test_rejects_negative_capacity(self):
        with pytest.raises(ValueError):
            BasicOperator(-1)


class TestFlatDpTable:
    def test_prefix_rows_match_standalone_dp(self):
        tasks = [task([1, 2, 4], gamma=g) for g in (0.0, 0.1, 0.3, 0.5)]
        table = FlatDpTable(tasks, capacity=6)
        for prefix in range(1, 5):
            via_row = table.best(prefix)
            standalone = dp_arrange(tasks[:prefix], BasicOperator(6))
            assert via_row.total_duration == pytest.approx(
                standalone.total_duration)

    def test_backtrace_is_consistent(self):
        tasks = [task([1, 2, 8], 0.2), task([2, 4], 0.4), task([1, 4], 0.0)]
        res = dp_arrange(tasks, BasicOperator(9))
        assert sum(res.allocations) <= 9
        assert all(k in t.units for t, k in zip(tasks, res.allocations))
        assert res.total_duration == pytest.approx(sum(res.per_task_durations))
        assert res.per_task_durations == tuple(
            t.duration(k) for t, k in zip(tasks, res.allocations))

    def test_infeasible_prefix_raises(self):
        table = FlatDpTable([DpTask((4,), (1.0,))] * 2, capacity=5)
        table.best(1)
        with pytest.raises(InfeasibleError):
            table.best(2)


def random_instance(rng, max_tasks=5, max_units=16):
    pool = [1, 2, 4, 8, 16]
    tasks = []
    for _ in range(rng.randint(1, max_tasks)):
        units = sorted(rng.sample(pool, rng.randint(1, 4)))
        gamma = rng.uniform(0.0, 0.9)
        base = rng.uniform(0.5, 30.0)
        tasks.append(DpTask(
            tuple(units),
            tuple(base / (m ** -gamma * m) for m in units),
        ))
    return tasks, rng.randint(1, max_units)


class TestOracleEquivalence:
    def test_random_instances_match_brute_force(self):
        rng = random.Random(42)
        checked = 0
        for _ in range(300):
            tasks, cap = random_instance(rng)
            oracle = brute_force_arrange(tasks, cap)
            if oracle is None:
                with pytest.raises(InfeasibleError):
                    dp_arrange(tasks, BasicOperator(cap))
                continue
            res = dp_arrange(tasks, BasicOperator(cap))
            assert res.total_duration == pytest.approx(oracle.total_duration)
            checked += 1
        assert checked > 100

    def test_generic_path_matches_flat_path(self):
        # the memoized recursion and the numpy table must agree
        rng = random.Random(7)
        for _ in range(100):
            tasks, cap = random_instance(rng, max_tasks=4)
            op = BasicOperator(cap)
            try:
                flat = dp_arrange(tasks, op)
            except InfeasibleError:
                continue
            from actionsched.dp import _dp_arrange_generic
            generic = _dp_arrange_generic(tasks, op)
            assert flat.total_duration == pytest.approx(generic.total_duration)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_capacity_growth_never_hurts(self, seed):
        rng = random.Random(seed)
        tasks, cap = random_instance(rng, max_tasks=4, max_units=12)
        try:
            small = dp_arrange(tasks, BasicOperator(cap)).total_duration
        except InfeasibleError:
            return
        large = dp_arrange(tasks, BasicOperator(cap + 4)).total_duration
        assert large <= small + 1e-9

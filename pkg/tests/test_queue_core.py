import io
import math

import numpy as np
import pytest

from meterflow.queue_core import (
    Exponential,
    QueuePrimitives,
    SamplePath,
    build_sample_path,
    extend_sample_path,
    invert_sample_path,
    log_joint_density,
    occupancy_at,
    occupancy_profile,
    path_from_csv,
    path_to_csv,
    searching_at,
)

from oracles import EventSim, sum_log_exponential


def test_no_contention_single_space():
    path = build_sample_path(([1.0, 1.0], [0.5, 0.5], 1))
    assert path.arrivals.tolist() == [1.0, 2.0]
    assert path.service_starts.tolist() == [1.0, 2.0]
    assert path.departures.tolist() == [1.5, 2.5]
    assert path.assigned_space.tolist() == [1, 1]


def test_second_driver_waits():
    path = build_sample_path(([1.0, 0.1], [5.0, 1.0], 1))
    assert path.arrivals.tolist() == [1.0, 1.1]
    assert path.service_starts.tolist() == [1.0, 6.0]
    assert path.departures.tolist() == [6.0, 7.0]


def test_oracle_equivalence_200(instances200):
    for alphas, nus, s in instances200:
        path = build_sample_path((alphas, nus, s))
        sim = EventSim(s)
        arr, starts, deps, spaces = sim.run(list(alphas), list(nus))
        assert np.array_equal(path.arrivals, np.array(arr))
        assert np.array_equal(path.service_starts, np.array(starts))
        assert np.array_equal(path.departures, np.array(deps))
        assert np.array_equal(path.assigned_space, np.array(spaces))


def test_path_roundtrip_bit_exact(instances200):
    for alphas, nus, s in instances200:
        path = build_sample_path((alphas, nus, s))
        rebuilt = build_sample_path(invert_sample_path(path))
        assert np.array_equal(rebuilt.arrivals, path.arrivals)
        assert np.array_equal(rebuilt.service_starts, path.service_starts)
        assert np.array_equal(rebuilt.departures, path.departures)
        assert np.array_equal(rebuilt.assigned_space, path.assigned_space)


def test_primitive_roundtrip_within_rounding(instances200):
    # a_j = fl(a_{j-1} + alpha_j) loses low bits of alpha_j, so recovering
    # primitives from a path is exact only up to ~ulp(a_j), not bit-exact.
    for alphas, nus, s in instances200:
        path = build_sample_path((alphas, nus, s))
        prims = invert_sample_path(path)
        assert np.allclose(prims.inter_arrivals, alphas, rtol=0, atol=1e-12)
        assert np.allclose(prims.service_times, nus, rtol=0, atol=1e-12)


def test_trivial_roundtrips():
    # fl(1.1 - 1.0) = 0.1 + 9e-18, so alpha recovery is approximate even here
    for prims in (([1.0, 1.0], [0.5, 0.5], 1), ([1.0, 0.1], [5.0, 1.0], 1)):
        path = build_sample_path(prims)
        rec = invert_sample_path(path)
        assert np.allclose(rec.inter_arrivals, prims[0], rtol=0, atol=1e-15)
        assert rec.service_times.tolist() == list(prims[1])


def test_path_invariants(instances200):
    for alphas, nus, s in instances200[:50]:
        path = build_sample_path((alphas, nus, s))
        assert np.all(path.arrivals <= path.service_starts)
        assert np.all(path.service_starts <= path.departures)
        assert np.all(np.diff(path.service_starts) >= 0)
        assert path.assigned_space.min() >= 1
        assert path.assigned_space.max() <= s
        for i in range(1, s + 1):
            mask = path.assigned_space == i
            u = path.service_starts[mask]
            d = path.departures[mask]
            assert np.all(u[1:] >= d[:-1])


def test_occupancy_and_searching_vs_oracle(instances200):
    rng = np.random.default_rng(99)
    for alphas, nus, s in instances200[:20]:
        path = build_sample_path((alphas, nus, s))
        sim = EventSim(s)
        arr, starts, deps, _ = sim.run(list(alphas), list(nus))
        probes = rng.uniform(0.0, path.departures.max() + 1.0, size=50)
        for t in probes:
            occ = occupancy_at(path, t)
            assert occ == sim.in_service_count(starts, deps, t)
            assert occ <= s
            wait = searching_at(path, t)
            assert wait == sim.waiting_count(arr, starts, t)
            if wait > 0:
                assert occ == s
        prof = occupancy_profile(path, np.sort(probes))
        assert prof.tolist() == [
            sim.in_service_count(starts, deps, t) for t in np.sort(probes)
        ]


def test_occupancy_before_first_arrival_zero():
    path = build_sample_path(([1.0, 0.1], [5.0, 1.0], 1))
    assert occupancy_at(path, 0.5) == 0
    assert occupancy_at(path, 3.0) == 1
    assert searching_at(path, 3.0) == 1


def test_extend_matches_full_build(instances200):
    for alphas, nus, s in instances200[:20]:
        head = build_sample_path((alphas[:30], nus[:30], s))
        full = build_sample_path((alphas, nus, s))
        grown = extend_sample_path(head, alphas[30:], nus[30:])
        assert np.array_equal(grown.arrivals, full.arrivals)
        assert np.array_equal(grown.service_starts, full.service_starts)
        assert np.array_equal(grown.departures, full.departures)
        assert np.array_equal(grown.assigned_space, full.assigned_space)


def test_log_density_examples():
    path = build_sample_path(([1.0, 1.0], [0.5, 0.5], 1))
    got = log_joint_density(path, None, Exponential(1.0), Exponential(1.0))
    assert got == pytest.approx(-3.0, abs=1e-12)
    empty = build_sample_path(([], [], 1))
    assert log_joint_density(empty, None, Exponential(1.0), Exponential(1.0)) == 0.0


def test_log_density_vs_oracle(instances200):
    lam, mu = 0.7, 5.0
    for alphas, nus, s in instances200[:20]:
        path = build_sample_path((alphas, nus, s))
        got = log_joint_density(path, None, Exponential(lam), Exponential(1.0 / mu))
        prims = invert_sample_path(path)
        want = sum_log_exponential(list(prims.inter_arrivals), lam)
        want += sum_log_exponential(list(prims.service_times), 1.0 / mu)
        assert got == pytest.approx(want, rel=1e-12)


def test_rejects_bad_primitives():
    with pytest.raises(ValueError):
        build_sample_path(([1.0, -1.0], [1.0, 1.0], 1))
    with pytest.raises(ValueError):
        build_sample_path(([1.0], [0.0], 1))
    with pytest.raises(ValueError):
        build_sample_path(([1.0], [1.0], 0))
    with pytest.raises(ValueError):
        QueuePrimitives(np.array([1.0]), np.array([1.0, 2.0]), 1)


def test_ordering_violation_rejected():
    with pytest.raises(ValueError):
        SamplePath(
            arrivals=np.array([1.0]),
            service_starts=np.array([0.5]),
            departures=np.array([2.0]),
            assigned_space=np.array([1]),
            first_free=np.array([0.0]),
            num_spaces=1,
        )


def test_csv_roundtrip(tmp_path, instances200):
    alphas, nus, s = instances200[0]
    path = build_sample_path((alphas, nus, s))
    f = tmp_path / "path.csv"
    path_to_csv(path, f)
    back = path_from_csv(f, num_spaces=s)
    assert np.allclose(back.arrivals, path.arrivals, atol=1e-6)
    assert np.allclose(back.service_starts, path.service_starts, atol=1e-6)
    assert np.allclose(back.departures, path.departures, atol=1e-6)
    assert np.array_equal(back.assigned_space, path.assigned_space)
    buf = io.StringIO()
    path_to_csv(path, buf)
    header = buf.getvalue().splitlines()[0]
    assert header == "j,arrival,service_start,departure,space"


def test_exponential_distribution_helpers():
    d = Exponential(2.0)
    assert d.mean == pytest.approx(0.5)
    assert d.log_density(np.array([1.0]))[0] == pytest.approx(math.log(2.0) - 2.0)
    assert d.log_density(np.array([0.0]))[0] == -math.inf
    rng = np.random.default_rng(3)
    draws = d.sample(rng, 200_000)
    assert draws.mean() == pytest.approx(0.5, abs=3 * 0.5 / math.sqrt(200_000))

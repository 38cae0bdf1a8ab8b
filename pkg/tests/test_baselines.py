import numpy as np
import pytest

from semcom_alloc import ScenarioConfig, check_feasible, consumption, sample_scenario
from semcom_alloc.baselines import (
    BaselineKind,
    _truncated_normal,
    average_allocation,
    optimize_fhrho_only,
    optimize_pb_only,
    random_allocation,
    run_baseline,
)
from semcom_alloc.optimizer import solve

from conftest import make_device, make_scenario


def test_kind_names():
    assert [k.value for k in BaselineKind] == ["random", "average", "pb-only", "fhrho-only"]
    assert BaselineKind.parse("pb-only") is BaselineKind.PB_ONLY
    assert BaselineKind.parse("RANDOM") is BaselineKind.RANDOM
    with pytest.raises(ValueError):
        BaselineKind.parse("greedy")


def test_average(default_scenarios):
    sc = default_scenarios[0]
    a = average_allocation(sc)
    np.testing.assert_allclose(a.as_vector()[:sc.n], 0.05)
    np.testing.assert_allclose(a.rho, 0.2)
    ten = sample_scenario(ScenarioConfig(device_count=10), 0)
    np.testing.assert_allclose(average_allocation(ten).bandwidth, 2e6)


def test_random_properties(default_scenarios):
    sc = default_scenarios[0]
    a = random_allocation(sc, 5)
    assert np.sum(a.bandwidth) == pytest.approx(sc.system.total_bandwidth, rel=1e-14)
    assert check_feasible(sc, a) == []
    b = random_allocation(sc, 5)
    assert a.as_vector().tobytes() == b.as_vector().tobytes()
    assert not np.array_equal(a.power, random_allocation(sc, 6).power)


def test_truncated_normal_support_and_spread():
    rng = np.random.default_rng(0)
    x = _truncated_normal(rng, 0.0, 1.0, 20000)
    assert np.all((x > 0) & (x <= 1))
    assert np.mean(x) == pytest.approx(0.5, abs=5e-3)
    assert np.std(x) == pytest.approx(0.1, rel=0.03)


def test_random_redraw_limit():
    from semcom_alloc import ScenarioInfeasible

    sc = make_scenario([make_device(psnr_min=40.0, gain=1e-16)])
    with pytest.raises(ScenarioInfeasible):
        random_allocation(sc, 0)


def test_pinned_blocks_and_ordering(default_scenarios):
    for sc in default_scenarios[:2]:
        avg = average_allocation(sc)
        pb = optimize_pb_only(sc)
        fh = optimize_fhrho_only(sc)
        np.testing.assert_array_equal(pb.freq_device, avg.freq_device)
        np.testing.assert_array_equal(pb.freq_bs, avg.freq_bs)
        np.testing.assert_array_equal(pb.rho, avg.rho)
        np.testing.assert_array_equal(fh.power, avg.power)
        np.testing.assert_array_equal(fh.bandwidth, avg.bandwidth)
        for a in (pb, fh):
            assert check_feasible(sc, a) == []
        obj = {k: consumption(sc, a).objective for k, a in (("avg", avg), ("pb", pb), ("fh", fh))}
        assert obj["pb"] <= obj["avg"] and obj["fh"] <= obj["avg"]
        ours = solve(sc)[1].objective
        assert ours <= obj["pb"] and ours <= obj["fh"]
        rep = consumption(sc, fh)
        np.testing.assert_allclose(rep.t_cmp + rep.t_up + rep.t_bs, fh.deadline, rtol=1e-9)


def test_run_baseline_dispatch(small_scenarios):
    sc = small_scenarios[0]
    for kind in BaselineKind:
        a = run_baseline(kind.value, sc, 1)
        assert check_feasible(sc, a) == []


def test_random_baseline_with_degenerate_rho_range():
    sc = sample_scenario(ScenarioConfig(device_count=3, rho_min=0.2, rho_max=0.2), 0)
    a = random_allocation(sc, 0)
    assert np.all(a.rho >= 0.2)
    assert check_feasible(sc, a) == []

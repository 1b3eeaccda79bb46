import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import V2_REF
from noon_advantage.calibration import LossBudget
from noon_advantage.errors import DomainError
from noon_advantage.simulator import (
    FringeScan,
    ScanConfig,
    WdmPlan,
    expected_counts,
    expected_scan,
    multi_pair_detected,
    multi_pair_diagnostic,
    phase_from_voltage,
    read_scan_csv,
    route_by_wdm,
    simulate_fringe_scan,
    simulate_multi_pair_counts,
    write_scan_csv,
)

GRID = np.linspace(0, math.pi, 64, endpoint=False)


class TestRouting:
    @pytest.mark.parametrize(
        "channels, ports, label",
        [
            ((20, 22), ("A", "A"), "P12"),
            ((20, 22), ("B", "B"), "P34"),
            ((22, 20), ("A", "B"), "P23"),
            ((20, 22), ("A", "B"), "P14"),
            ((22, 20), ("A", "A"), "P12"),
        ],
    )
    def test_examples(self, channels, ports, label):
        assert route_by_wdm(WdmPlan(), channels, ports) == label

    def test_total(self):
        seen = set()
        for ch in ((20, 22), (22, 20)):
            for pa in "AB":
                for pb in "AB":
                    seen.add(route_by_wdm(WdmPlan(), ch, (pa, pb)))
        assert seen == {"P12", "P34", "P23", "P14"}

    def test_same_channel_rejected(self):
        with pytest.raises(DomainError, match="energy conservation"):
            route_by_wdm(WdmPlan(), (20, 20), ("A", "B"))

    def test_degenerate_channel_rejected(self):
        with pytest.raises(DomainError):
            route_by_wdm(WdmPlan(), (21, 22), ("A", "B"))

    def test_bad_plan(self):
        with pytest.raises(DomainError):
            WdmPlan(signal_channel=20, idler_channel=20)


class TestExpectedCounts:
    def test_quadrature_values(self, ref_budget):
        cfg = ScanConfig(ref_budget, [math.pi / 4], visibility=V2_REF)
        mean = expected_counts(cfg)[0]
        assert mean == pytest.approx([7057, 9865, 8859, 7859], abs=1.0)

    def test_probabilities_sum(self, ideal_budget):
        cfg = ScanConfig(ideal_budget, GRID, visibility=1.0, pair_rate=1.0)
        assert np.allclose(expected_counts(cfg).sum(axis=1), 1.0)

    def test_accidental_floor(self, ref_budget):
        base = ScanConfig(ref_budget, GRID, visibility=V2_REF)
        noisy = ScanConfig(ref_budget, GRID, visibility=V2_REF, accidental_rate=400.0)
        assert np.allclose(expected_counts(noisy) - expected_counts(base), 100.0)

    def test_overflow_guard(self, ideal_budget):
        with pytest.raises(DomainError):
            expected_counts(ScanConfig(ideal_budget, GRID, visibility=1.0, pair_rate=1e10))

    def test_single_photon_labels(self, ref_budget):
        cfg = ScanConfig(ref_budget, GRID, single_photon=True, visibility=0.9)
        assert cfg.labels == ("P10", "P01")
        assert expected_counts(cfg).shape == (GRID.size, 2)

    def test_visibility_from_probe(self, ref_budget):
        cfg = ScanConfig(ref_budget, GRID)
        assert cfg.resolved_visibility() == 1.0

    @pytest.mark.parametrize("kw", [{"pair_rate": 0}, {"dwell_time": -1}, {"accidental_rate": -1}, {"rng_seed": -3}])
    def test_invalid(self, ref_budget, kw):
        with pytest.raises(DomainError):
            ScanConfig(ref_budget, GRID, visibility=0.9, **kw)


class TestSimulation:
    def test_deterministic(self, ref_budget):
        cfg = ScanConfig(ref_budget, GRID, visibility=V2_REF, rng_seed=7)
        a, b = simulate_fringe_scan(cfg), simulate_fringe_scan(cfg)
        assert np.array_equal(a.counts, b.counts)
        assert a.metadata == b.metadata

    def test_seed_changes_counts(self, ref_budget):
        a = simulate_fringe_scan(ScanConfig(ref_budget, GRID, visibility=V2_REF, rng_seed=1))
        b = simulate_fringe_scan(ScanConfig(ref_budget, GRID, visibility=V2_REF, rng_seed=2))
        assert not np.array_equal(a.counts, b.counts)

    def test_substreams_are_per_point(self, ref_budget):
        # extending the grid must not change the counts already drawn
        short = simulate_fringe_scan(ScanConfig(ref_budget, GRID[:10], visibility=V2_REF, rng_seed=5))
        long = simulate_fringe_scan(ScanConfig(ref_budget, GRID, visibility=V2_REF, rng_seed=5))
        assert np.array_equal(short.counts, long.counts[:10])

    def test_converges_to_expectation(self, ref_budget):
        cfg = ScanConfig(ref_budget, GRID, visibility=V2_REF, dwell_time=50.0, rng_seed=11)
        counts = simulate_fringe_scan(cfg).counts
        mean = expected_counts(cfg)
        z = (counts - mean) / np.sqrt(mean)
        assert np.all(np.abs(z) < 5)
        assert abs(z.mean()) < 5 / math.sqrt(z.size)

    def test_counts_are_integers(self, ref_budget):
        scan = simulate_fringe_scan(ScanConfig(ref_budget, GRID, visibility=V2_REF))
        assert scan.counts.dtype == np.int64

    def test_expected_scan(self, ref_budget):
        cfg = ScanConfig(ref_budget, GRID, visibility=V2_REF)
        assert np.array_equal(expected_scan(cfg).counts, expected_counts(cfg))

    def test_scan_rejects_fractional_counts(self):
        with pytest.raises(ValueError):
            FringeScan(np.arange(2.0), None, ("P12",), np.array([[1.5], [2.0]]), np.ones(2))

    def test_voltage_map(self, ref_budget):
        volts = np.linspace(0, 10, 32)
        cfg = ScanConfig(ref_budget, volts, visibility=V2_REF, voltage_map=(0.3, 0.1))
        scan = simulate_fringe_scan(cfg)
        assert np.allclose(scan.phi, 0.3 * volts + 0.1)
        assert np.allclose(scan.control, volts)

    def test_phase_from_voltage(self):
        assert phase_from_voltage(2.0, 1.0, 3.0) == 7.0
        assert np.allclose(phase_from_voltage(2.0, 0.0, [1, 2]), [2, 4])

    def test_config_digest_stable(self, ref_budget):
        a = ScanConfig(ref_budget, GRID, visibility=V2_REF, rng_seed=3)
        b = ScanConfig(ref_budget, list(GRID), visibility=V2_REF, rng_seed=3)
        assert a.digest() == b.digest()
        assert a.digest() != ScanConfig(ref_budget, GRID, visibility=V2_REF, rng_seed=4).digest()


class TestMultiPair:
    def test_no_multi_pair_no_detection(self, ref_budget):
        cfg = ScanConfig(ref_budget, GRID, visibility=V2_REF, accidental_rate=400.0)
        exp = multi_pair_diagnostic(cfg)
        assert exp["P13"].true == 0 and exp["P13"].detected == exp["P13"].accidental == 100.0
        flags = [multi_pair_detected(simulate_multi_pair_counts(cfg, i), exp) for i in range(50)]
        assert not any(any(f.values()) for f in flags)

    def test_multi_pair_detected(self, ref_budget):
        cfg = ScanConfig(ref_budget, GRID, visibility=V2_REF, accidental_rate=400.0, multi_pair_rate=1000.0)
        exp = multi_pair_diagnostic(cfg)
        e1, e2, e3, e4 = ref_budget.eta
        assert exp["P13"].detected == pytest.approx(1000 * e1 * e3 + 100)
        assert exp["P24"].detected == pytest.approx(1000 * e2 * e4 + 100)
        flags = multi_pair_detected(simulate_multi_pair_counts(cfg), exp)
        assert all(flags.values())


class TestCsv:
    def test_round_trip(self, ref_budget, tmp_path):
        scan = simulate_fringe_scan(ScanConfig(ref_budget, GRID, visibility=V2_REF, rng_seed=9))
        path = tmp_path / "scan.csv"
        write_scan_csv(scan, path)
        back = read_scan_csv(path)
        assert back.labels == scan.labels
        assert np.array_equal(back.counts, scan.counts)
        assert np.allclose(back.phi, scan.phi, rtol=1e-11)

    def test_malformed_row(self, tmp_path):
        path = tmp_path / "scan.csv"
        path.write_text("control,phi_rad,label,counts,dwell_s\n0,0,P12,10,1\n0,0,P34,-4,1\n")
        with pytest.raises(ValueError, match="row 3"):
            read_scan_csv(path)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "scan.csv"
        path.write_text("a,b\n")
        with pytest.raises(ValueError, match="header"):
            read_scan_csv(path)

    def test_missing_label(self, tmp_path):
        path = tmp_path / "scan.csv"
        path.write_text("control,phi_rad,label,counts,dwell_s\n0,0,P12,10,1\n0,0,P34,4,1\n1,1,P12,3,1\n")
        with pytest.raises(ValueError, match="lacks"):
            read_scan_csv(path)


@settings(max_examples=20, deadline=None)
@given(st.tuples(*[st.floats(0.05, 1.0)] * 4), st.floats(0.0, 1.0), st.integers(0, 2**32))
def test_counts_non_negative(e, v, seed):
    scan = simulate_fringe_scan(ScanConfig(LossBudget(eta=e), GRID[:8], visibility=v, pair_rate=50.0, rng_seed=seed))
    assert np.all(scan.counts >= 0)

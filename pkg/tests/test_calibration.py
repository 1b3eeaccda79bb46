import json
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from noon_advantage.calibration import (
    CalibrationRecord,
    LossBudget,
    build_loss_budget,
    classical_arm_transmissions,
    consistency_audit,
    db_to_transmission,
    read_calibration_csv,
    reference_budget,
    transmission_to_db,
)
from noon_advantage.errors import DomainError


def records_for(ratios, reference=1e-3):
    return [CalibrationRecord(i, reference, r * reference) for i, r in enumerate(ratios, start=1)]


class TestConversions:
    @pytest.mark.parametrize("db, eta, tol", [(2.63, 0.546, 5e-4), (0.0, 1.0, 0.0), (3.0103, 0.5, 1e-5)])
    def test_db_to_transmission(self, db, eta, tol):
        assert db_to_transmission(db) == pytest.approx(eta, abs=tol)

    @pytest.mark.parametrize("eta, db, tol", [(0.649, 1.878, 0.01), (1.0, 0.0, 0.0), (0.517, 2.865, 0.005)])
    def test_transmission_to_db(self, eta, db, tol):
        assert transmission_to_db(eta) == pytest.approx(db, abs=tol)

    def test_negative_db_rejected(self):
        with pytest.raises(DomainError):
            db_to_transmission(-0.1)

    @pytest.mark.parametrize("eta", [0.0, -0.5, 1.5, math.nan])
    def test_bad_transmission_rejected(self, eta):
        with pytest.raises(DomainError):
            transmission_to_db(eta)

    @given(st.floats(min_value=0.0, max_value=60.0))
    def test_round_trip(self, db):
        assert transmission_to_db(db_to_transmission(db)) == pytest.approx(db, abs=1e-12)


class TestBuildBudget:
    def test_reference_ratios(self):
        budget = build_loss_budget(records_for([0.517, 0.546, 0.649, 0.608]))
        assert budget.eta == pytest.approx((0.517, 0.546, 0.649, 0.608), abs=1e-12)
        assert budget.source == "measured"
        assert consistency_audit(budget) == []

    def test_ideal(self):
        assert build_loss_budget(records_for([1.0] * 4)).eta == (1.0, 1.0, 1.0, 1.0)

    def test_mean_and_spread(self):
        recs = records_for([1.0] * 4)[1:] + [CalibrationRecord(1, 1.0, 0.50), CalibrationRecord(1, 1.0, 0.54)]
        budget = build_loss_budget(recs)
        assert budget.eta[0] == pytest.approx(0.52, abs=1e-12)
        assert budget.eta_std[0] == pytest.approx(math.sqrt(2) * 0.02, abs=1e-12)
        assert budget.warnings == ()

    def test_spread_warning(self):
        recs = records_for([1.0] * 4)[1:] + [CalibrationRecord(1, 1.0, 0.40), CalibrationRecord(1, 1.0, 0.60)]
        assert any("line 1" in w for w in build_loss_budget(recs).warnings)

    def test_attenuator_correction(self):
        rec = CalibrationRecord(2, 1.0, 0.546 * 0.1, attenuator_setting_db=10.0)
        assert rec.transmission == pytest.approx(0.546)

    def test_missing_lines_listed(self):
        with pytest.raises(DomainError, match=r"\[2, 4\]"):
            build_loss_budget([CalibrationRecord(1, 1, 0.5), CalibrationRecord(3, 1, 0.5)])

    def test_measured_above_reference_rejected(self):
        with pytest.raises(DomainError):
            CalibrationRecord(1, 1.0, 1.2)

    @given(st.permutations(range(8)), st.floats(min_value=1e-6, max_value=1e3))
    def test_permutation_and_scale_invariance(self, order, scale):
        ratios = [0.51, 0.53, 0.55, 0.54, 0.64, 0.66, 0.6, 0.61]
        recs = [CalibrationRecord(i // 2 + 1, 1.0, r) for i, r in enumerate(ratios)]
        base = build_loss_budget(recs)
        shuffled = [recs[i] for i in order]
        scaled = [CalibrationRecord(r.line_id, scale, r.measured_power * scale) for r in shuffled]
        assert build_loss_budget(scaled).eta == pytest.approx(base.eta, rel=1e-12)


class TestAudit:
    def test_reference_table_flags_line_one_only(self):
        findings = consistency_audit(reference_budget())
        assert [f.line_id for f in findings] == [1]
        assert findings[0].eta_implied_by_db == pytest.approx(0.571, abs=5e-4)
        assert findings[0].db_implied_by_eta == pytest.approx(2.865, abs=5e-3)

    def test_self_consistent(self):
        assert consistency_audit(LossBudget.from_transmissions([0.3, 0.5, 0.7, 0.9])) == []

    def test_db_absent(self):
        assert consistency_audit(LossBudget(eta=(0.5, 0.5, 0.5, 0.5))) == []

    @given(st.lists(st.floats(min_value=0, max_value=60), min_size=4, max_size=4))
    def test_budget_from_db_is_clean(self, db):
        assert consistency_audit(LossBudget.from_db(db)) == []


class TestArmTransmissions:
    def test_reference(self):
        assert classical_arm_transmissions(reference_budget()) == pytest.approx((0.5315, 0.6285))

    def test_ideal(self):
        assert classical_arm_transmissions(LossBudget(eta=(1, 1, 1, 1))) == (1.0, 1.0)

    def test_symmetric(self):
        assert classical_arm_transmissions(LossBudget(eta=(0.5,) * 4)) == (0.5, 0.5)


def test_budget_json_round_trip():
    b = reference_budget()
    again = LossBudget.from_dict(json.loads(json.dumps(b.to_dict())))
    assert again == b


def test_budget_scaling_clamps():
    with pytest.raises(DomainError):
        reference_budget().scaled(2.0)


def test_read_csv(tmp_path):
    path = tmp_path / "cal.csv"
    path.write_text(
        "line_id,reference_power_w,measured_power_w,attenuator_db,counts_per_s,timestamp\n"
        "1,1e-3,0.517e-3,0,1000,2025-01-01T00:00:00Z\n"
        "2,1e-3,0.546e-3,0,1000,2025-01-01T00:00:00Z\n"
    )
    recs = read_calibration_csv(path)
    assert [r.line_id for r in recs] == [1, 2]
    assert recs[0].transmission == pytest.approx(0.517)


def test_read_csv_names_bad_row(tmp_path):
    path = tmp_path / "cal.csv"
    path.write_text(
        "line_id,reference_power_w,measured_power_w,attenuator_db,counts_per_s,timestamp\n"
        "1,1e-3,abc,0,1000,t\n"
    )
    with pytest.raises(ValueError, match="row 2"):
        read_calibration_csv(path)

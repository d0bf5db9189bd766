import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from meltnet.data import NormalizationSpec
from meltnet.evaluation import (
    REPORT_HEADER,
    MetricsRecord,
    ReportTable,
    aggregate_by_case,
    aggregate_by_timestep,
    emit_report,
    emit_slice_image,
    iou,
    melt_mask,
    parse_report,
    read_pgm,
    relative_rmse,
    report_text,
    score_frame,
    slice_pixels,
)
from meltnet.exceptions import ConfigurationError, DimensionError
from meltnet.physics import get_material


def two_pass_rmse(p, t):
    # independent oracle: explicit loops, compensated summation
    sq = math.fsum((float(a) - float(b)) ** 2 for a, b in zip(np.ravel(p), np.ravel(t)))
    return 100.0 * math.sqrt(sq / np.size(p))


class TestRmse:
    def test_identical(self):
        f = np.random.default_rng(0).uniform(size=(4, 3, 2))
        assert relative_rmse(f, f) == 0.0

    def test_constant_offset(self):
        assert relative_rmse(np.full(10, 0.3), np.full(10, 0.2)) == pytest.approx(10.0)

    def test_zero_vs_one(self):
        assert relative_rmse(np.zeros(8), np.ones(8)) == pytest.approx(100.0)

    def test_half_wrong(self):
        assert relative_rmse([0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]) == pytest.approx(100 * math.sqrt(0.5))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, 24, elements=st.floats(0, 1)), arrays(np.float64, 24, elements=st.floats(0, 1)))
    def test_against_oracle(self, p, t):
        assert relative_rmse(p, t) == pytest.approx(two_pass_rmse(p, t), rel=1e-12, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            relative_rmse(np.zeros(3), np.zeros(4))


class TestMeltMask:
    def test_ti64_threshold_is_strict(self):
        assert get_material("Ti64").t_melt == 1898.0
        m = melt_mask(np.array([1897.9, 1898.0, 1898.1]), "Ti64")
        assert m.tolist() == [False, False, True]

    def test_ss316l(self):
        assert get_material("SS316L").t_melt == 1705.5
        assert melt_mask(np.array([1705.5, 1705.6]), "SS316L").tolist() == [False, True]

    def test_normalized_threshold(self):
        spec = NormalizationSpec()
        thr = (1898.0 - 293.0) / (6500.0 - 293.0)
        assert thr == pytest.approx(0.2586, abs=1e-4)
        rec_above = score_frame(np.full(2, thr + 1e-4), np.full(2, thr + 1e-4), spec, get_material("Ti64"),
                                case_id="c", frame=0, power=1, velocity=1, time=1)
        assert rec_above.truth_count == 2
        rec_below = score_frame(np.full(2, thr - 1e-4), np.full(2, thr - 1e-4), spec, get_material("Ti64"),
                                case_id="c", frame=0, power=1, velocity=1, time=1)
        assert rec_below.truth_count == 0 and rec_below.iou_pct == 100.0


class TestIou:
    def test_one_third(self):
        a = np.array([1, 1, 0, 0], bool)
        b = np.array([0, 1, 1, 0], bool)
        assert iou(a, b) == pytest.approx(100.0 / 3.0)

    def test_both_empty(self):
        assert iou(np.zeros(5, bool), np.zeros(5, bool)) == 100.0

    def test_disjoint(self):
        assert iou([1, 0], [0, 1]) == 0.0

    @settings(max_examples=50, deadline=None)
    @given(arrays(bool, 30), arrays(bool, 30))
    def test_symmetric_and_bounded(self, a, b):
        assert iou(a, b) == iou(b, a)
        assert 0.0 <= iou(a, b) <= 100.0


def rec(case, frame, rmse, io):
    return MetricsRecord(case, frame, 200.0, 500.0, 5.0 * (frame + 1), rmse, io)


class TestAggregation:
    def test_record_invariants(self):
        with pytest.raises(ValueError):
            rec("a", 0, 1.0, 101.0)
        with pytest.raises(ValueError):
            rec("a", 0, -1.0, 50.0)
        with pytest.raises(ValueError):
            MetricsRecord("a", 0, 1, 1, 1, 1.0, 50.0, pred_count=3, truth_count=2, intersection=3, union=4)

    def test_quartiles(self):
        rs = [rec(f"c{i}", 0, v, v) for i, v in enumerate([1.0, 2.0, 3.0, 4.0])]
        (fs,) = aggregate_by_timestep(rs)
        assert (fs.rmse_median, fs.rmse_q25, fs.rmse_q75) == (2.5, 1.75, 3.25)
        assert fs.count == 4

    def test_by_case(self):
        rs = [rec("b", 0, 1.0, 90.0), rec("a", 0, 2.0, 80.0), rec("a", 1, 4.0, 60.0)]
        a, b = aggregate_by_case(rs)
        assert (a.case_id, a.rmse_pct, a.iou_pct, a.count) == ("a", 3.0, 70.0, 2)
        assert b.case_id == "b"

    def test_table(self):
        t = ReportTable.from_records([rec("a", 0, 1.0, 90.0), rec("a", 1, 3.0, 70.0)])
        assert (t.count, t.rmse_mean, t.rmse_std, t.iou_mean, t.iou_std) == (2, 2.0, 1.0, 80.0, 10.0)
        assert "samples=2" in t.summary()
        assert ReportTable.from_records([rec("a", 0, 1.0, 90.0)]).rmse_std == 0.0

    def test_empty_table(self):
        assert math.isnan(ReportTable.from_records([]).rmse_mean)


class TestReport:
    def test_header(self):
        assert report_text([]).splitlines()[0] == ",".join(REPORT_HEADER)

    def test_round_trip_reaggregates_exactly(self, tmp_path):
        rng = np.random.default_rng(7)
        rs = [rec(f"c{i % 3}", i // 3, float(rng.uniform(0, 5)), float(rng.uniform(0, 100))) for i in range(12)]
        path = emit_report(rs, tmp_path / "r.csv")
        back = parse_report(path)
        assert ReportTable.from_records(back) == ReportTable.from_records(rs)
        assert parse_report(path.read_text()) == back

    def test_bad_header(self):
        with pytest.raises(ConfigurationError):
            parse_report("a,b\n1,2\n")


class TestSlices:
    def test_all_hot_and_all_cold(self, tmp_path):
        emit_slice_image(np.ones((6, 4, 3)), "z", 0, tmp_path / "hot.pgm")
        assert (read_pgm(tmp_path / "hot.pgm") == 255).all()
        emit_slice_image(np.zeros((6, 4, 3)), "z", 0, tmp_path / "cold.pgm")
        assert (read_pgm(tmp_path / "cold.pgm") == 0).all()

    def test_orientation(self, tmp_path):
        f = np.zeros((6, 4, 3))
        f[5, 0, 1] = 1.0  # far x, first y
        img = read_pgm(emit_slice_image(f, "z", 1, tmp_path / "s.pgm"))
        assert img.shape == (4, 6)
        assert img[0, 5] == 255 and img.sum() == 255
        assert slice_pixels(f, "y", 0).shape == (3, 6)
        assert slice_pixels(f, 0, 5).shape == (3, 4)

    def test_rounding_and_clipping(self):
        f = np.array([[[0.5]], [[2.0]], [[-1.0]]])
        assert slice_pixels(f, "z", 0).ravel().tolist() == [128, 255, 0]

    @pytest.mark.parametrize("axis, index", [("w", 0), (3, 0), ("z", 3), ("x", -1)])
    def test_bad_slice(self, axis, index):
        with pytest.raises(DimensionError):
            slice_pixels(np.zeros((6, 4, 3)), axis, index)

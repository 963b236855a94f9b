import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ocsod.core import BinaryMask, ObservationMode, SaliencyMap
from ocsod.errors import DimensionMismatch, EmptyGroundTruth, EmptyInput
from ocsod.metrics import (
    BenchReport,
    EvalPair,
    aggregate_report,
    c_iou,
    e_measure,
    f_measure_max,
    format_score,
    g_iou,
    s_measure,
)

import oracles
from conftest import block_mask, random_mask

# Golden values computed with the independent brute-force oracle
# (tests/oracles.py) on the 8x8 half-plane fixture and frozen here.
GOLDEN_S_COMPLEMENT = 0.04044117647058824
GOLDEN_S_CONST_HALF = 0.5875
GOLDEN_E_COMPLEMENT = 0.0


def half_plane():
    return block_mask(8, 8, 0, 0, 8, 4)


def complement_map(gt: BinaryMask) -> SaliencyMap:
    return SaliencyMap((~gt.bits).astype(np.float64))


def pair(pred, gt, mode=ObservationMode.FREE_VIEWING, sid="p"):
    return EvalPair(sid, mode, pred, gt)


class TestGiou:
    def test_mean_of_one_and_zero(self):
        gt = block_mask(4, 4, 0, 0, 2, 2)
        perfect = pair(SaliencyMap.from_mask(gt), gt, sid="a")
        disjoint = pair(SaliencyMap.from_mask(block_mask(4, 4, 2, 2, 4, 4)), gt, sid="b")
        assert g_iou([perfect, disjoint]) == pytest.approx(0.5)

    def test_single_pair_equals_ciou(self):
        gt = block_mask(5, 5, 1, 1, 4, 3)
        p = pair(SaliencyMap.from_mask(block_mask(5, 5, 0, 1, 4, 4)), gt)
        assert g_iou([p]) == pytest.approx(c_iou([p]))

    def test_three_pair_derived(self):
        # per-pair IoUs 1, 1/3, 0 -> mean 4/9 (pinned from the oracle)
        gt_a = block_mask(4, 4, 0, 0, 4, 2)
        gt_b = block_mask(4, 4, 0, 0, 4, 2)
        gt_c = block_mask(4, 4, 0, 0, 2, 1)
        pairs = [
            pair(SaliencyMap.from_mask(gt_a), gt_a, sid="a"),
            pair(SaliencyMap.from_mask(block_mask(4, 4, 0, 1, 4, 3)), gt_b, sid="b"),
            pair(SaliencyMap.from_mask(block_mask(4, 4, 2, 0, 4, 1)), gt_c, sid="c"),
        ]
        got = g_iou(pairs)
        assert got == pytest.approx(4 / 9, abs=1e-12)
        ref = oracles.g_iou_ref(
            [(p.pred.values.tolist(), p.gt.bits.astype(int).tolist()) for p in pairs]
        )
        assert got == pytest.approx(ref, abs=1e-12)

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            g_iou([])


class TestCiou:
    def test_divergence_fixture(self):
        # pair1 pred = gt (100 px), pair2 disjoint 100 px each:
        # cIoU = 100/300 while gIoU = 0.5
        gt1 = block_mask(20, 20, 0, 0, 10, 10)
        gt2 = block_mask(20, 20, 0, 0, 10, 10)
        pred2 = block_mask(20, 20, 10, 10, 20, 20)
        pairs = [
            pair(SaliencyMap.from_mask(gt1), gt1, sid="a"),
            pair(SaliencyMap.from_mask(pred2), gt2, sid="b"),
        ]
        assert c_iou(pairs) == pytest.approx(1 / 3, abs=1e-12)
        assert g_iou(pairs) == pytest.approx(0.5, abs=1e-12)

    def test_all_perfect(self):
        gt = block_mask(6, 6, 1, 1, 5, 5)
        assert c_iou([pair(SaliencyMap.from_mask(gt), gt)]) == 1.0

    def test_all_empty_preds(self):
        gt = block_mask(6, 6, 1, 1, 5, 5)
        zero = SaliencyMap.from_mask(BinaryMask.zeros(6, 6))
        assert c_iou([pair(zero, gt)]) == 0.0


class TestFMeasure:
    def test_perfect(self):
        gt = half_plane()
        assert f_measure_max(SaliencyMap.from_mask(gt), gt) == pytest.approx(1.0, abs=1e-12)

    def test_all_ones_on_half(self):
        gt = half_plane()
        got = f_measure_max(SaliencyMap(np.ones((8, 8))), gt)
        assert got == pytest.approx(0.65 / 1.15, abs=1e-12)

    def test_all_zeros(self):
        gt = half_plane()
        assert f_measure_max(SaliencyMap(np.zeros((8, 8))), gt) == 0.0

    def test_empty_gt_raises(self):
        with pytest.raises(EmptyGroundTruth):
            f_measure_max(SaliencyMap(np.zeros((4, 4))), BinaryMask.zeros(4, 4))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            f_measure_max(SaliencyMap(np.zeros((4, 4))), BinaryMask.full(5, 4))

    def test_binary_degenerate_sweep(self, rng):
        # for binary preds the sweep equals F at any interior threshold
        gt = random_mask(rng, 9, 7)
        pred_mask = random_mask(rng, 9, 7)
        full = f_measure_max(SaliencyMap.from_mask(pred_mask), gt)
        tp = int((pred_mask.bits & gt.bits).sum())
        n_pred = pred_mask.area
        n_gt = gt.area
        p = tp / n_pred if n_pred else 0.0
        r = tp / n_gt
        single = 1.3 * p * r / (0.3 * p + r) if (p + r) else 0.0
        assert full == pytest.approx(single, abs=1e-12)


class TestSMeasure:
    def test_perfect(self, rng):
        gt = random_mask(rng, 8, 8)
        assert s_measure(SaliencyMap.from_mask(gt), gt) == 1.0

    def test_complement_half_plane_golden(self):
        gt = half_plane()
        assert s_measure(complement_map(gt), gt) == pytest.approx(GOLDEN_S_COMPLEMENT, abs=1e-9)

    def test_constant_half_golden(self):
        gt = half_plane()
        got = s_measure(SaliencyMap(np.full((8, 8), 0.5)), gt)
        assert got == pytest.approx(GOLDEN_S_CONST_HALF, abs=1e-9)

    def test_gt_all_ones(self):
        gt = BinaryMask.full(4, 4)
        assert s_measure(SaliencyMap(np.full((4, 4), 0.25)), gt) == pytest.approx(0.25)

    def test_empty_gt_raises(self):
        with pytest.raises(EmptyGroundTruth):
            s_measure(SaliencyMap(np.zeros((4, 4))), BinaryMask.zeros(4, 4))


class TestEMeasure:
    def test_perfect(self, rng):
        gt = random_mask(rng, 10, 6)
        assert e_measure(SaliencyMap.from_mask(gt), gt) == 1.0

    def test_complement_golden(self):
        gt = half_plane()
        assert e_measure(complement_map(gt), gt) == pytest.approx(GOLDEN_E_COMPLEMENT, abs=1e-9)

    def test_all_zero_degenerate_rule(self):
        gt = half_plane()  # mu = 0.5
        assert e_measure(SaliencyMap(np.zeros((8, 8))), gt) == pytest.approx(0.5)
        small = block_mask(8, 8, 0, 0, 2, 1)  # mu = 2/64
        assert e_measure(SaliencyMap(np.zeros((8, 8))), small) == pytest.approx(1 - 2 / 64)

    def test_all_one_degenerate_rule(self):
        gt = half_plane()
        assert e_measure(SaliencyMap(np.ones((8, 8))), gt) == pytest.approx(0.5)


value_grids = st.integers(2, 10).flatmap(
    lambda w: st.integers(2, 10).flatmap(
        lambda h: st.tuples(
            st.lists(
                st.floats(0, 1, allow_nan=False, width=32), min_size=w * h, max_size=w * h
            ),
            st.lists(st.booleans(), min_size=w * h, max_size=w * h),
            st.just((w, h)),
        )
    )
)


class TestProperties:
    @given(value_grids)
    @settings(max_examples=80, deadline=None)
    def test_range_and_oracle_agreement(self, drawn):
        vals, gt_bits, (w, h) = drawn
        gt_arr = np.asarray(gt_bits, dtype=bool).reshape(h, w)
        if not gt_arr.any():
            gt_arr[0, 0] = True
        gt = BinaryMask(gt_arr)
        pred = SaliencyMap(np.asarray(vals, dtype=np.float64).reshape(h, w))
        p = pair(pred, gt)
        scores = {
            "g": g_iou([p]),
            "c": c_iou([p]),
            "s": s_measure(pred, gt),
            "f": f_measure_max(pred, gt),
            "e": e_measure(pred, gt),
        }
        for name, value in scores.items():
            assert 0.0 <= value <= 1.0, (name, value)
        pv = pred.values.tolist()
        gv = gt.bits.astype(int).tolist()
        assert scores["s"] == pytest.approx(oracles.s_measure_ref(pv, gv), abs=1e-9)
        assert scores["f"] == pytest.approx(oracles.f_max_ref(pv, gv), abs=1e-9)
        assert scores["e"] == pytest.approx(oracles.e_measure_ref(pv, gv), abs=1e-9)

    @given(st.data())
    @settings(max_examples=60, deadline=None)
    def test_monotone_corruption(self, data):
        w = data.draw(st.integers(2, 10))
        h = data.draw(st.integers(2, 10))
        bits = np.asarray(
            data.draw(st.lists(st.booleans(), min_size=w * h, max_size=w * h)), dtype=bool
        ).reshape(h, w)
        if not bits.any():
            bits[0, 0] = True
        gt = BinaryMask(bits)
        fg = list(zip(*np.nonzero(bits)))
        n_flip = data.draw(st.integers(0, len(fg)))
        flipped = bits.copy()
        for y, x in fg[:n_flip]:
            flipped[y, x] = False
        before = g_iou([pair(SaliencyMap.from_mask(gt), gt)])
        after = g_iou([pair(SaliencyMap.from_mask(BinaryMask(flipped)), gt)])
        assert after <= before + 1e-12


class TestAggregate:
    def _mixed_pairs(self):
        gt = block_mask(6, 6, 1, 1, 5, 5)
        return [
            pair(SaliencyMap.from_mask(gt), gt, ObservationMode.FREE_VIEWING, "a"),
            pair(SaliencyMap.from_mask(gt), gt, ObservationMode.PREFERENCE, "b"),
            pair(
                SaliencyMap.from_mask(block_mask(6, 6, 0, 0, 2, 2)),
                gt,
                ObservationMode.INTENT,
                "c",
            ),
        ]

    def test_all_perfect_rows(self):
        gt = block_mask(6, 6, 1, 1, 5, 5)
        pairs = [
            pair(SaliencyMap.from_mask(gt), gt, mode, f"s{i}")
            for i, mode in enumerate(ObservationMode)
        ]
        report = aggregate_report(pairs)
        for name, row in report.ordered_rows():
            for v in (row.g_iou, row.c_iou, row.s_m, row.f_m, row.e_m):
                assert format_score(v) == "100.00"

    def test_single_mode_overall_equals_mode(self):
        gt = block_mask(6, 6, 1, 1, 5, 5)
        pairs = [
            pair(SaliencyMap.from_mask(block_mask(6, 6, 0, 0, 4, 4)), gt, ObservationMode.INTENT, "x")
        ]
        report = aggregate_report(pairs)
        assert report.row("intent") == report.row("overall")

    def test_mixed_rows_match_per_metric_ops(self):
        pairs = self._mixed_pairs()
        report = aggregate_report(pairs)
        overall = report.row("overall")
        assert overall.count == 3
        assert overall.g_iou == pytest.approx(g_iou(pairs), abs=1e-12)
        assert overall.c_iou == pytest.approx(c_iou(pairs), abs=1e-12)
        assert overall.s_m == pytest.approx(
            sum(s_measure(p.pred, p.gt) for p in pairs) / 3, abs=1e-12
        )
        assert report.row("intent").count == 1

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            aggregate_report([])

    def test_csv_layout(self):
        report = aggregate_report(self._mixed_pairs())
        csv = report.to_csv()
        lines = csv.strip().split("\n")
        assert lines[0] == "mode,n,gIoU,cIoU,S_m,F_m,E_m"
        assert [line.split(",")[0] for line in lines[1:]] == [
            "free_viewing",
            "intent",
            "preference",
            "overall",
        ]
        md = report.to_markdown()
        assert "| Mode | n | gIoU | cIoU | S_m | F_m | E_m |" in md


class TestFormatting:
    def test_rounding_half_up(self):
        assert format_score(1.0) == "100.00"
        assert format_score(1 / 3) == "33.33"
        assert format_score(0.56525) == "56.53"  # half-up, not banker's
        assert format_score(0.0) == "0.00"

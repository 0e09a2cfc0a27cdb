import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from uff.metrics import MetricError, SegEvalInput, format_kv, format_table, miou_report, overall_accuracy, shape_iou


def shape_with_iou_0_6():
    # three parts matched exactly, two swapped
    return SegEvalInput(0, np.array([0, 1, 2, 3, 4]), np.array([0, 1, 2, 4, 3]), [0, 1, 2, 3, 4])


def perfect(cls, n=6):
    parts = np.arange(n) % 2
    return SegEvalInput(cls, parts, parts.copy(), [0, 1])


class TestOverallAccuracy:
    def test_all_and_none(self):
        assert overall_accuracy([1, 2, 3], [1, 2, 3]) == 1.0
        assert overall_accuracy([1, 2, 3], [0, 0, 0]) == 0.0

    def test_counting(self):
        labels = np.zeros(10000, dtype=int)
        pred = labels.copy()
        pred[9043:] = 1
        assert overall_accuracy(pred, labels) == 0.9043

    def test_length_mismatch(self):
        with pytest.raises(MetricError):
            overall_accuracy([1], [1, 2])


class TestShapeIou:
    def test_identical(self):
        assert shape_iou([0, 1, 1], [0, 1, 1], [0, 1]) == 1.0

    def test_swapped(self):
        assert shape_iou([0, 0, 1, 1], [1, 1, 0, 0], [0, 1]) == 0.0

    def test_hand_example(self):
        assert shape_iou([0, 0, 1, 1], [0, 1, 1, 1], [0, 1]) == 7 / 12

    def test_absent_part_counts_as_one(self):
        assert shape_iou([0, 0], [0, 0], [0, 1, 2]) == 1.0

    @given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=40))
    def test_symmetric(self, pairs):
        gt, pred = zip(*pairs)
        assert shape_iou(gt, pred, range(4)) == shape_iou(pred, gt, range(4))

    @given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=40), st.randoms())
    def test_point_permutation(self, pairs, rnd):
        shuffled = list(pairs)
        rnd.shuffle(shuffled)
        gt, pred = zip(*pairs)
        sgt, spred = zip(*shuffled)
        assert shape_iou(gt, pred, range(4)) == shape_iou(sgt, spred, range(4))


class TestMiouReport:
    def test_single_shape(self):
        r = miou_report([shape_with_iou_0_6()])
        assert r.cat_miou == r.ins_miou == r.shape_ious[0] == 0.6

    def test_two_categories(self):
        r = miou_report([shape_with_iou_0_6(), perfect(1), perfect(1), perfect(1)])
        assert r.category_miou == {0: 0.6, 1: 1.0}
        assert r.category_counts == {0: 1, 1: 3}
        assert r.cat_miou == 0.8
        assert r.ins_miou == 0.9

    def test_perfect(self):
        r = miou_report([perfect(0), perfect(1, 8), perfect(2)])
        assert r.cat_miou == r.ins_miou == r.point_accuracy == 1.0

    def test_bounds(self):
        rng = np.random.default_rng(0)
        items = [SegEvalInput(int(rng.integers(0, 3)), rng.integers(0, 4, 30), rng.integers(0, 4, 30), range(4)) for _ in range(20)]
        r = miou_report(items)
        assert min(r.shape_ious) <= r.ins_miou <= max(r.shape_ious)
        cats = list(r.category_miou.values())
        assert min(cats) <= r.cat_miou <= max(cats)

    def test_empty(self):
        with pytest.raises(MetricError):
            miou_report([])

    def test_as_dict(self):
        d = miou_report([perfect(3)]).as_dict()
        assert d["num_shapes"] == 1 and d["miou_class_3"] == 1.0


class TestFormatting:
    def test_table(self):
        text = format_table([("OA", 0.5), ("shapes", 10)], title="report")
        assert text == "report\nOA      0.5000\nshapes  10\n"

    def test_kv_round_trips_floats(self):
        text = format_kv({"b": 0.1 + 0.2, "a": 3})
        assert text.splitlines()[0] == "a=3"
        assert float(text.splitlines()[1].split("=")[1]) == 0.1 + 0.2

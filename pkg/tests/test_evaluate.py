"""Evaluator tests, including the brute-force maximum-matching oracle."""

import itertools

import numpy as np
import pytest

from scgebd import evaluate as ev
from scgebd.errors import InputError
from scgebd.evaluate import BoundaryAnnotation


def max_matching_oracle(preds, gts, duration, threshold):
    """Maximum-cardinality one-to-one matching by exhaustive recursion."""
    tol = threshold * duration
    feasible = [[abs(p - g) <= tol for g in gts] for p in preds]

    def best(i, used):
        if i == len(preds):
            return 0
        top = best(i + 1, used)
        for j in range(len(gts)):
            if feasible[i][j] and not used & (1 << j):
                top = max(top, 1 + best(i + 1, used | (1 << j)))
        return top

    return best(0, 0)


def annot(vid="v", duration=10.0, raters=None):
    return BoundaryAnnotation(video_id=vid, duration=duration,
                              raters=raters or [("r0", [2.0, 5.0])])


class TestMatch:
    def test_exact_match(self):
        gts = [1.0, 4.0, 7.5]
        assert ev.match(gts, gts, 10.0, 0.05) == (3, 0, 0)

    def test_hand_case(self):
        tp, fp, fn = ev.match([2.4], [2.0, 5.0], 10.0, 0.05)
        assert (tp, fp, fn) == (1, 0, 1)
        assert abs(ev.f1_score(tp, fp, fn) - 2.0 / 3.0) < 1e-9

    def test_one_to_one_rule(self):
        tp, fp, fn = ev.match([3.0, 3.1], [3.0], 10.0, 0.05)
        assert (tp, fp, fn) == (1, 1, 0)
        assert max_matching_oracle([3.0, 3.1], [3.0], 10.0, 0.05) == 1

    def test_bad_duration(self):
        with pytest.raises(InputError):
            ev.match([1.0], [1.0], 0.0, 0.05)

    def test_symmetric_sanity(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            x = sorted(rng.uniform(0, 10, rng.integers(0, 6)).tolist())
            for threshold in (0.05, 0.2, 0.5):
                tp, fp, fn = ev.match(x, x, 10.0, threshold)
                assert fp == 0 and fn == 0 and tp == len(x)

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            preds = sorted(rng.uniform(0, 10, rng.integers(0, 7)).tolist())
            gts = sorted(rng.uniform(0, 10, rng.integers(0, 7)).tolist())
            prev_tp, prev_fn = -1, None
            for threshold in ev.DEFAULT_THRESHOLDS:
                tp, _, fn = ev.match(preds, gts, 10.0, threshold)
                assert tp >= prev_tp
                if prev_fn is not None:
                    assert fn <= prev_fn
                prev_tp, prev_fn = tp, fn

    def test_greedy_equals_oracle_exhaustive_grid(self):
        # every pred/gt subset of a coarse grid, all sizes up to 3, plus
        # all sweep thresholds: greedy must equal maximum matching
        grid = [0.0, 1.3, 2.5, 3.6, 5.0, 8.0]
        subsets = [list(c) for size in range(4) for c in itertools.combinations(grid, size)]
        for preds in subsets:
            for gts in subsets:
                for threshold in (0.05, 0.15, 0.3, 0.5):
                    tp, _, _ = ev.match(preds, gts, 10.0, threshold)
                    assert tp == max_matching_oracle(preds, gts, 10.0, threshold), \
                        f"preds={preds} gts={gts} thr={threshold}"

    def test_greedy_equals_oracle_random_instances(self):
        rng = np.random.default_rng(2)
        for _ in range(300):
            preds = sorted(rng.uniform(0, 10, rng.integers(0, 7)).tolist())
            gts = sorted(rng.uniform(0, 10, rng.integers(0, 7)).tolist())
            threshold = float(rng.choice(ev.DEFAULT_THRESHOLDS))
            tp, _, _ = ev.match(preds, gts, 10.0, threshold)
            assert tp == max_matching_oracle(preds, gts, 10.0, threshold)


class TestRaterMax:
    def test_exact_match_with_one_rater_wins(self):
        a = annot(raters=[("r0", [1.0, 9.0]), ("r1", [2.0, 5.0]), ("r2", [3.0])])
        assert ev.f1_max_over_raters([2.0, 5.0], a, 0.05) == 1.0

    def test_single_rater_reduces_to_plain_f1(self):
        a = annot(raters=[("r0", [2.0, 5.0])])
        tp, fp, fn = ev.match([2.4], [2.0, 5.0], 10.0, 0.05)
        assert ev.f1_max_over_raters([2.4], a, 0.05) == ev.f1_score(tp, fp, fn)

    def test_empty_predictions(self):
        a = annot(raters=[("r0", [2.0]), ("r1", [3.0])])
        assert ev.f1_max_over_raters([], a, 0.5) == 0.0

    def test_zero_raters_rejected(self):
        a = BoundaryAnnotation(video_id="v", duration=10.0, raters=[])
        with pytest.raises(InputError):
            ev.f1_max_over_raters([1.0], a, 0.05)

    def test_rater_max_monotone_in_threshold(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            raters = [(f"r{i}", sorted(rng.uniform(0, 10, rng.integers(1, 5)).tolist()))
                      for i in range(3)]
            a = annot(raters=raters)
            preds = sorted(rng.uniform(0, 10, rng.integers(0, 5)).tolist())
            scores = [ev.f1_max_over_raters(preds, a, t) for t in ev.DEFAULT_THRESHOLDS]
            assert all(b >= a_ - 1e-12 for a_, b in zip(scores, scores[1:]))


class TestSweep:
    def test_perfect_predictions_all_ones(self):
        annots = {f"v{i}": annot(vid=f"v{i}", raters=[("r0", [1.0 + i, 6.0])]) for i in range(4)}
        preds = {f"v{i}": [1.0 + i, 6.0] for i in range(4)}
        report = ev.sweep(preds, annots)
        assert len(report.rows) == 10
        for _, precision, recall, f1 in report.rows:
            assert precision == recall == f1 == 1.0
        assert report.average_f1 == 1.0

    def test_empty_predictions_all_zeros(self):
        annots = {"a": annot(vid="a")}
        report = ev.sweep({"a": []}, annots)
        for _, precision, recall, f1 in report.rows:
            assert precision == recall == f1 == 0.0
        assert report.average_f1 == 0.0

    def test_report_shape_thresholds(self):
        report = ev.sweep({"a": [2.0]}, {"a": annot(vid="a")})
        assert [r[0] for r in report.rows] == [0.05, 0.1, 0.15, 0.2, 0.25, 0.3,
                                               0.35, 0.4, 0.45, 0.5]

    def test_missing_annotation_excluded_and_reported(self):
        report = ev.sweep({"a": [2.0], "ghost": [1.0]}, {"a": annot(vid="a")})
        assert report.missing_videos == ["ghost"]

    def test_micro_f1_monotone_single_rater(self):
        rng = np.random.default_rng(4)
        annots, preds = {}, {}
        for i in range(6):
            vid = f"v{i}"
            annots[vid] = annot(vid=vid, raters=[
                ("r0", sorted(rng.uniform(0, 10, rng.integers(1, 5)).tolist()))])
            preds[vid] = sorted(rng.uniform(0, 10, rng.integers(0, 5)).tolist())
        report = ev.sweep(preds, annots)
        f1s = [r[3] for r in report.rows]
        assert all(b >= a - 1e-12 for a, b in zip(f1s, f1s[1:]))

    def test_macro_aggregation_flag(self):
        annots = {"a": annot(vid="a", raters=[("r0", [2.0])]),
                  "b": annot(vid="b", raters=[("r0", [5.0])])}
        preds = {"a": [2.0], "b": []}
        micro = ev.sweep(preds, annots, aggregation="micro")
        macro = ev.sweep(preds, annots, aggregation="macro")
        # a is perfect, b has a missed boundary: micro pools counts, macro averages F1
        assert abs(macro.rows[0][3] - 0.5) < 1e-12
        assert abs(micro.rows[0][3] - ev.f1_score(1, 0, 1)) < 1e-12

    def test_bad_aggregation(self):
        with pytest.raises(InputError):
            ev.sweep({}, {}, aggregation="median")


class TestReportCsv:
    def test_layout(self):
        report = ev.sweep({"a": [2.0, 5.0]}, {"a": annot(vid="a")})
        text = ev.render_report_csv(report)
        lines = text.strip().split("\n")
        assert lines[0] == "threshold,precision,recall,f1"
        assert len(lines) == 12  # header + 10 thresholds + avg
        assert lines[-1].startswith("avg,")

    def test_write_atomic(self, tmp_path):
        report = ev.sweep({"a": [2.0]}, {"a": annot(vid="a")})
        out = tmp_path / "r.csv"
        ev.write_report_csv(report, str(out))
        assert out.read_text() == ev.render_report_csv(report)
        assert [p for p in tmp_path.iterdir() if p.suffix == ".tmp"] == []


class TestAnnotationValidation:
    def test_timestamp_beyond_duration(self):
        a = BoundaryAnnotation("v", 10.0, [("r1", [11.0])])
        with pytest.raises(InputError, match="r1"):
            a.validate()

    def test_unsorted_rejected(self):
        a = BoundaryAnnotation("v", 10.0, [("r0", [5.0, 2.0])])
        with pytest.raises(InputError, match="sorted"):
            a.validate()

    def test_bad_duration(self):
        with pytest.raises(InputError):
            BoundaryAnnotation("v", -1.0, [("r0", [])]).validate()

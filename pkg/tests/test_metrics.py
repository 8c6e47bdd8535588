"""Classification metrics, ROC/AUC vs the pairwise oracle, CSV/SVG emission."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from satl.errors import ContractError, DegenerateDataError
from satl.metrics import (
    METRICS_CSV_HEADER,
    MetricsReport,
    RocCurve,
    confusion,
    derive_metrics,
    emit,
    evaluate_scores,
    metrics_csv,
    parse_metrics_csv,
    roc_auc,
    roc_csv,
    roc_svg,
)


def pairwise_auc(scores, labels):
    """O(N^2) Mann-Whitney oracle: P(s_pos > s_neg) + 0.5 P(s_pos = s_neg)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


class TestConfusion:
    def test_basic(self):
        assert confusion([0.9, 0.1], [1, 0]) == (1, 0, 1, 0)

    def test_boundary_rule_is_geq(self):
        tp, fp, tn, fn = confusion([0.5, 0.5], [1, 0], threshold=0.5)
        assert (tp, fp, tn, fn) == (1, 1, 0, 0)

    def test_loop_oracle(self):
        rng = np.random.default_rng(0)
        scores = rng.random(200)
        labels = rng.integers(0, 2, 200)
        tp, fp, tn, fn = confusion(scores, labels, 0.35)
        rtp = rfp = rtn = rfn = 0
        for s, y in zip(scores, labels):
            pred = s >= 0.35
            if pred and y == 1:
                rtp += 1
            elif pred and y == 0:
                rfp += 1
            elif not pred and y == 0:
                rtn += 1
            else:
                rfn += 1
        assert (tp, fp, tn, fn) == (rtp, rfp, rtn, rfn)

    def test_counts_partition(self):
        rng = np.random.default_rng(1)
        scores = rng.random(77)
        labels = rng.integers(0, 2, 77)
        assert sum(confusion(scores, labels)) == 77

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            confusion([], [])


class TestDeriveMetrics:
    def test_formula_arithmetic(self):
        r = derive_metrics(3, 1, 5, 1)
        assert r.accuracy == pytest.approx(0.8)
        assert r.precision == pytest.approx(0.75)
        assert r.recall == pytest.approx(0.75)
        assert r.f1 == pytest.approx(0.75)
        assert r.degenerate == ()

    def test_degenerate_recall_flagged(self):
        r = derive_metrics(0, 0, 10, 0)
        assert r.accuracy == 1.0
        assert r.recall == 0.0
        assert "recall" in r.degenerate and "precision" in r.degenerate

    def test_report_formats_like_table(self):
        r = derive_metrics(3, 1, 5, 1)
        line = (
            f"Accuracy {r.accuracy:.3f} / Recall {r.recall:.3f} / "
            f"Precision {r.precision:.3f} / F1 {r.f1:.3f}"
        )
        assert line == "Accuracy 0.800 / Recall 0.750 / Precision 0.750 / F1 0.750"

    @given(st.integers(1, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
    @settings(max_examples=60, deadline=None)
    def test_scale_free(self, tp, fp, tn, fn):
        a = derive_metrics(tp, fp, tn, fn)
        b = derive_metrics(3 * tp, 3 * fp, 3 * tn, 3 * fn)
        assert a.accuracy == pytest.approx(b.accuracy)
        assert a.precision == pytest.approx(b.precision)
        assert a.recall == pytest.approx(b.recall)
        assert a.f1 == pytest.approx(b.f1)

    def test_consistency_invariant(self):
        r = derive_metrics(7, 2, 11, 3)
        assert r.accuracy == (r.tp + r.tn) / (r.tp + r.tn + r.fp + r.fn)
        assert r.f1 == pytest.approx(
            2 * r.precision * r.recall / (r.precision + r.recall)
        )


class TestRocAuc:
    def test_perfect_separation(self):
        _, auc = roc_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
        assert auc == 1.0

    def test_all_ties_half(self):
        curve, auc = roc_auc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0])
        assert auc == pytest.approx(0.5)
        assert curve.points[0] == (0.0, 0.0)
        assert curve.points[-1] == (1.0, 1.0)

    def test_reversed_scores_zero(self):
        _, auc = roc_auc([0.1, 0.9], [1, 0])
        assert auc == 0.0

    def test_single_class_rejected(self):
        with pytest.raises(DegenerateDataError):
            roc_auc([0.1, 0.9], [1, 1])

    def test_pairwise_oracle_100_instances(self):
        rng = np.random.default_rng(7)
        for trial in range(100):
            n = int(rng.integers(4, 60))
            scores = rng.random(n).round(2)  # rounding forces ties
            labels = rng.integers(0, 2, n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            _, auc = roc_auc(scores, labels)
            assert auc == pytest.approx(pairwise_auc(scores, labels), abs=1e-9)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(8)
        scores = rng.random(60)
        labels = rng.integers(0, 2, 60)
        labels[0], labels[1] = 0, 1
        _, a = roc_auc(scores, labels)
        _, b = roc_auc(np.exp(4 * scores) + 7, labels)
        assert a == pytest.approx(b, abs=1e-12)

    def test_curve_monotone_and_anchored(self):
        rng = np.random.default_rng(9)
        scores = rng.random(50).round(1)
        labels = rng.integers(0, 2, 50)
        labels[:2] = [0, 1]
        curve, _ = roc_auc(scores, labels)
        fprs = [p[0] for p in curve.points]
        tprs = [p[1] for p in curve.points]
        assert curve.points[0] == (0.0, 0.0) and curve.points[-1] == (1.0, 1.0)
        assert all(a <= b + 1e-15 for a, b in zip(fprs, fprs[1:]))
        assert all(a <= b + 1e-15 for a, b in zip(tprs, tprs[1:]))

    def test_thresholds_descending_unique(self):
        curve, _ = roc_auc([0.3, 0.7, 0.7, 0.1], [1, 1, 0, 0])
        assert curve.thresholds[0] == float("inf")
        rest = curve.thresholds[1:]
        assert rest == sorted(set(rest), reverse=True)


class TestEmission:
    def _report(self):
        rep, curve = evaluate_scores(
            [0.9, 0.7, 0.4, 0.2], [1, 0, 1, 0], direction="a->b", strategy="source"
        )
        return rep, curve

    def test_metrics_csv_roundtrip(self):
        rep, _ = self._report()
        parsed = parse_metrics_csv(metrics_csv([rep]))
        assert len(parsed) == 1
        q = parsed[0]
        assert (q.tp, q.fp, q.tn, q.fn) == (rep.tp, rep.fp, rep.tn, rep.fn)
        assert q.accuracy == rep.accuracy
        assert q.auc == rep.auc
        assert q.direction == "a->b" and q.strategy == "source"

    def test_metrics_csv_header(self):
        rep, _ = self._report()
        assert metrics_csv([rep]).splitlines()[0] == METRICS_CSV_HEADER

    def test_roc_csv_schema(self):
        _, curve = self._report()
        lines = roc_csv(curve).splitlines()
        assert lines[0] == "fpr,tpr,threshold"
        for ln in lines[1:]:
            fpr, tpr, thr = ln.split(",")
            assert 0.0 <= float(fpr) <= 1.0
            assert 0.0 <= float(tpr) <= 1.0
            float(thr)  # parseable (inf allowed)

    def test_svg_two_polylines(self):
        _, c1 = self._report()
        _, c2 = evaluate_scores([0.8, 0.6, 0.3, 0.1], [1, 1, 0, 0])
        svg = roc_svg({"source": c1, "adapted": c2})
        assert svg.count("<polyline") == 2
        assert "false positive rate" in svg and "true positive rate" in svg
        assert 'width="640" height="480"' in svg

    def test_emit_writes_files(self, tmp_path):
        rep, curve = self._report()
        emit(
            [rep],
            {"source": curve},
            metrics_path=tmp_path / "m.csv",
            roc_paths={"source": tmp_path / "r.csv"},
            svg_path=tmp_path / "p.svg",
        )
        assert (tmp_path / "m.csv").read_text().startswith(METRICS_CSV_HEADER)
        assert (tmp_path / "r.csv").read_text().startswith("fpr,tpr,threshold")
        assert (tmp_path / "p.svg").read_text().startswith("<svg")

    def test_emit_io_error_carries_path(self, tmp_path):
        rep, curve = self._report()
        with pytest.raises(OSError):
            emit([rep], {}, metrics_path=tmp_path / "no_dir" / "m.csv")

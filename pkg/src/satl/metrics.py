"""Binary-classification metrics, ROC/AUC, and CSV/SVG emission.

Scores are positive-class probabilities; prediction is positive iff
score >= threshold (default 0.5). The trapezoidal AUC over the tie-grouped
ROC curve equals the Mann-Whitney statistic P(s_pos > s_neg) + 0.5 * ties,
which the test suite verifies against a quadratic pairwise oracle.
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ContractError, DegenerateDataError

METRICS_CSV_HEADER = "direction,strategy,tp,fp,tn,fn,accuracy,recall,precision,f1,auc"
ROC_CSV_HEADER = "fpr,tpr,threshold"


@dataclass
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    recall: float
    precision: float
    f1: float
    auc: float
    direction: str = ""
    strategy: str = ""
    degenerate: tuple = ()  # names of metrics that were undefined and forced to 0


@dataclass
class RocCurve:
    points: list = field(default_factory=list)  # [(fpr, tpr), ...]
    thresholds: list = field(default_factory=list)  # aligned with points


def confusion(
    scores: Sequence[float], labels: Sequence[int], threshold: float = 0.5
) -> "tuple[int, int, int, int]":
    """(tp, fp, tn, fn) with the score >= threshold decision rule."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 1 or s.shape != y.shape:
        raise ContractError(f"scores/labels shapes disagree: {s.shape} vs {y.shape}")
    if s.size == 0:
        raise ContractError("confusion requires at least one sample")
    if not np.all((y == 0) | (y == 1)):
        raise ContractError("labels must be 0 or 1")
    pred = s >= threshold
    pos = y == 1
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    tn = int(np.sum(~pred & ~pos))
    fn = int(np.sum(~pred & pos))
    return tp, fp, tn, fn


def derive_metrics(tp: int, fp: int, tn: int, fn: int) -> MetricsReport:
    """Accuracy/recall/precision/F1 from counts; undefined ratios are
    reported as 0.0 and flagged in `degenerate` (keeps CSVs numeric)."""
    if min(tp, fp, tn, fn) < 0:
        raise ContractError("counts must be non-negative")
    total = tp + fp + tn + fn
    if total == 0:
        raise ContractError("counts sum to zero")
    degenerate = []
    accuracy = (tp + tn) / total
    recall = precision = f1 = 0.0
    if tp + fn > 0:
        recall = tp / (tp + fn)
    else:
        degenerate.append("recall")
    if tp + fp > 0:
        precision = tp / (tp + fp)
    else:
        degenerate.append("precision")
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        degenerate.append("f1")
    return MetricsReport(
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        accuracy=accuracy,
        recall=recall,
        precision=precision,
        f1=f1,
        auc=0.0,
        degenerate=tuple(degenerate),
    )


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> "tuple[RocCurve, float]":
    """ROC over descending unique score thresholds plus trapezoidal AUC."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 1 or s.shape != y.shape or s.size == 0:
        raise ContractError("scores/labels must be equal-length non-empty vectors")
    if not np.all((y == 0) | (y == 1)):
        raise ContractError("labels must be 0 or 1")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise DegenerateDataError("AUC undefined: both classes must be present")

    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    # indices where a run of equal scores ends
    distinct = np.nonzero(np.diff(s_sorted))[0]
    boundaries = np.concatenate([distinct, [s.size - 1]])
    tps = np.cumsum(y_sorted == 1)[boundaries]
    fps = np.cumsum(y_sorted == 0)[boundaries]

    fpr = np.concatenate([[0.0], fps / n_neg])
    tpr = np.concatenate([[0.0], tps / n_pos])
    thresholds = [float("inf")] + [float(v) for v in s_sorted[boundaries]]
    auc = float(np.trapezoid(tpr, fpr))
    curve = RocCurve(points=list(zip(fpr.tolist(), tpr.tolist())), thresholds=thresholds)
    return curve, auc


def evaluate_scores(
    scores: Sequence[float],
    labels: Sequence[int],
    threshold: float = 0.5,
    direction: str = "",
    strategy: str = "",
) -> "tuple[MetricsReport, RocCurve]":
    """Confusion + derived metrics + ROC/AUC in one call."""
    report = derive_metrics(*confusion(scores, labels, threshold))
    curve, auc = roc_auc(scores, labels)
    report.auc = auc
    report.direction = direction
    report.strategy = strategy
    return report, curve


# ---------------------------------------------------------------------------
# emission


def _fmt(v: float) -> str:
    return repr(float(v))


def metrics_csv(reports: Sequence[MetricsReport]) -> str:
    lines = [METRICS_CSV_HEADER]
    for r in reports:
        lines.append(
            ",".join(
                [
                    r.direction,
                    r.strategy,
                    str(r.tp),
                    str(r.fp),
                    str(r.tn),
                    str(r.fn),
                    _fmt(r.accuracy),
                    _fmt(r.recall),
                    _fmt(r.precision),
                    _fmt(r.f1),
                    _fmt(r.auc),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def parse_metrics_csv(text: str) -> list:
    lines = [ln for ln in text.splitlines() if ln]
    if not lines or lines[0] != METRICS_CSV_HEADER:
        raise ContractError("metrics CSV header mismatch")
    out = []
    for ln in lines[1:]:
        d, s, tp, fp, tn, fn, acc, rec, prec, f1, auc = ln.split(",")
        out.append(
            MetricsReport(
                tp=int(tp),
                fp=int(fp),
                tn=int(tn),
                fn=int(fn),
                accuracy=float(acc),
                recall=float(rec),
                precision=float(prec),
                f1=float(f1),
                auc=float(auc),
                direction=d,
                strategy=s,
            )
        )
    return out


def roc_csv(curve: RocCurve) -> str:
    lines = [ROC_CSV_HEADER]
    for (fpr, tpr), thr in zip(curve.points, curve.thresholds):
        lines.append(f"{_fmt(fpr)},{_fmt(tpr)},{_fmt(thr)}")
    return "\n".join(lines) + "\n"


_PALETTE = ("#c0392b", "#2471a3", "#1e8449", "#7d3c98", "#b7950b")


def roc_svg(curves: "dict[str, RocCurve]", title: str = "ROC") -> str:
    """640x480 SVG with one polyline per strategy and labeled axes."""
    width, height = 640, 480
    ml, mr, mt, mb = 60, 20, 36, 48
    pw, ph = width - ml - mr, height - mt - mb

    def px(fpr: float) -> float:
        return ml + fpr * pw

    def py(tpr: float) -> float:
        return mt + (1.0 - tpr) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width/2:.1f}" y="20" text-anchor="middle" font-size="15">{title}</text>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        f'<line x1="{px(0):.2f}" y1="{py(0):.2f}" x2="{px(1):.2f}" y2="{py(1):.2f}" '
        f'stroke="#999999" stroke-dasharray="4 4"/>',
        f'<text x="{ml + pw/2:.1f}" y="{height-12}" text-anchor="middle" font-size="13">'
        "false positive rate</text>",
        f'<text x="16" y="{mt + ph/2:.1f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 16 {mt + ph/2:.1f})">true positive rate</text>',
    ]
    for k, tick in enumerate((0.0, 0.5, 1.0)):
        parts.append(
            f'<text x="{px(tick):.1f}" y="{mt+ph+16}" text-anchor="middle" font-size="11">'
            f"{tick:g}</text>"
        )
        parts.append(
            f'<text x="{ml-8}" y="{py(tick)+4:.1f}" text-anchor="end" font-size="11">{tick:g}</text>'
        )
    for i, (name, curve) in enumerate(curves.items()):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(f):.2f},{py(t):.2f}" for f, t in curve.points)
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        parts.append(
            f'<text x="{ml+10}" y="{mt+18+16*i}" font-size="12" fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit(
    reports: Sequence[MetricsReport],
    curves: "dict[str, RocCurve]",
    metrics_path=None,
    roc_paths: Optional[dict] = None,
    svg_path=None,
    svg_title: str = "ROC",
) -> None:
    """Write metrics CSV, per-strategy ROC CSVs, and an optional SVG plot.

    I/O failures propagate as OSError (the CLI maps them to exit code 1);
    the offending path is in the exception.
    """
    if metrics_path is not None:
        with open(metrics_path, "w", encoding="utf-8") as fh:
            fh.write(metrics_csv(reports))
    for name, path in (roc_paths or {}).items():
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(roc_csv(curves[name]))
    if svg_path is not None:
        with open(svg_path, "w", encoding="utf-8") as fh:
            fh.write(roc_svg(curves, title=svg_title))

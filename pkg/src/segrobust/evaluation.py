"""mIOU metric, multi-scale classification, and the corruption benchmark.

The benchmark corrupts every (image, spec) pair exactly once and scores
every model on that same corrupted image, so model columns are directly
comparable. Reports render as a per-kind text grid, a flat CSV (one row
per kind/severity/model cell), a severity-aggregated series, and an
optional SVG chart. mIOU values are stored as fractions and rendered on
the 0-100 scale with one decimal.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .corruptions import GROUP_OF, GROUPS, SHORT_NAME, CorruptionKind, corrupt
from .errors import UsageError
from .heads import LogitMap, class_logits, predict
from .model import SegNet, forward
from .numerics import bilinear_resize, sigmoid, softmax

CLEAN = "clean"  # pseudo-kind for the severity-0 row

DISCLAIMER = ("Desk-scale synthetic benchmark; mIOU values are directional only "
              "and not comparable to full-scale segmentation results.")


class ConfusionMatrix:
    """k x k pixel counts; rows are ground truth, columns predictions."""

    def __init__(self, num_classes: int, counts: np.ndarray | None = None):
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64) \
            if counts is None else np.asarray(counts, dtype=np.int64)
        if self.counts.shape != (num_classes, num_classes):
            raise UsageError(f"counts must be ({num_classes},{num_classes})")

    def add(self, pred: np.ndarray, truth: np.ndarray) -> "ConfusionMatrix":
        pred, truth = np.asarray(pred), np.asarray(truth)
        if pred.shape != truth.shape:
            raise UsageError(f"pred {pred.shape} and truth {truth.shape} differ")
        k = self.num_classes
        if pred.size:
            if pred.min() < 0 or pred.max() >= k or truth.min() < 0 or truth.max() >= k:
                raise UsageError(f"labels must lie in [0,{k})")
            flat = truth.reshape(-1) * k + pred.reshape(-1)
            self.counts += np.bincount(flat, minlength=k * k).reshape(k, k)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise UsageError("cannot merge confusion matrices of different k")
        self.counts += other.counts
        return self

    def total(self) -> int:
        return int(self.counts.sum())

    def copy(self) -> "ConfusionMatrix":
        return ConfusionMatrix(self.num_classes, self.counts.copy())


def accumulate(cm: ConfusionMatrix, pred: np.ndarray, truth: np.ndarray) -> ConfusionMatrix:
    return cm.add(pred, truth)


def per_class_iou(cm: ConfusionMatrix) -> np.ndarray:
    """IOU per class; NaN for classes with zero union."""
    tp = np.diag(cm.counts).astype(np.float64)
    union = cm.counts.sum(axis=0) + cm.counts.sum(axis=1) - np.diag(cm.counts)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, tp / union, np.nan)


def miou(cm: ConfusionMatrix) -> float:
    """Mean IOU over classes with nonzero union, as a fraction in [0,1];
    NaN when every class is absent."""
    ious = per_class_iou(cm)
    if np.all(np.isnan(ious)):
        return float("nan")
    return float(np.nanmean(ious))


def miou_score(cm_or_value) -> float:
    """mIOU on the 0-100 reporting scale, one decimal."""
    v = miou(cm_or_value) if isinstance(cm_or_value, ConfusionMatrix) else cm_or_value
    return round(100.0 * v, 1) if not math.isnan(v) else float("nan")


# ---------------------------------------------------------------------------
# Prediction helpers


def head_probabilities(m: LogitMap) -> np.ndarray:
    """(H,W,k) per-class scores used for multi-scale averaging: softmax
    over class-ordered logits, except the plain sigmoid head which scores
    each class independently."""
    cls = class_logits(m)
    from .heads import HeadKind
    if m.head is HeadKind.SIGMOID:
        return sigmoid(cls)
    return softmax(cls, axis=-1)


def msc_predict(net: SegNet, image: np.ndarray, scales=(0.5, 0.75, 1.0, 1.25, 1.5),
                flip: bool = True, average: str = "prob") -> np.ndarray:
    """Average per-class maps over rescaled (and mirrored) inputs, then
    take the per-pixel argmax."""
    if not scales or any(s <= 0 for s in scales):
        raise UsageError(f"scales must be non-empty positives, got {scales}")
    if average not in ("prob", "logit"):
        raise UsageError(f"average must be 'prob' or 'logit', got {average!r}")
    h, w = image.shape[:2]
    total = np.zeros((h, w, net.num_classes))
    count = 0
    for s in scales:
        scaled = bilinear_resize(image, max(1, round(h * s)), max(1, round(w * s)))
        for mirrored in ((False, True) if flip else (False,)):
            inp = scaled[:, ::-1] if mirrored else scaled
            m = LogitMap(forward(net, inp), net.head, net.num_classes)
            chart = head_probabilities(m) if average == "prob" else class_logits(m)
            if mirrored:
                chart = chart[:, ::-1]
            total += bilinear_resize(chart, h, w)
            count += 1
    return np.argmax(total / count, axis=-1).astype(np.int64)


def evaluate_model(net: SegNet, samples, msc: bool = False, **msc_kwargs) -> ConfusionMatrix:
    """Confusion matrix of a model over a list of samples."""
    cm = ConfusionMatrix(net.num_classes)
    for s in samples:
        if msc:
            pred = msc_predict(net, s.image, **msc_kwargs)
        else:
            pred = predict(LogitMap(forward(net, s.image), net.head, net.num_classes))
        cm.add(pred, s.label)
    return cm


# ---------------------------------------------------------------------------
# Benchmark


@dataclass
class BenchmarkReport:
    models: list
    kinds: list            # kind names in table order
    severities: list       # evaluated severities (subset of 1..5)
    cells: dict = field(default_factory=dict)  # (kind, severity, model) -> miou fraction
    msc: bool = False

    def cell(self, kind: str, severity: int, model: str) -> float:
        return self.cells[(kind, severity, model)]

    def clean(self, model: str) -> float:
        return self.cells[(CLEAN, 0, model)]

    def severity_aggregate(self, model: str, severity: int) -> float:
        """Mean over kinds at one severity; severity 0 is the clean value."""
        if severity == 0:
            return self.clean(model)
        return float(np.mean([self.cells[(k, severity, model)] for k in self.kinds]))

    def overall_aggregate(self, model: str) -> float:
        """Mean over every (kind, severity >= 1) cell."""
        vals = [self.cells[(k, s, model)] for k in self.kinds for s in self.severities]
        return float(np.mean(vals))

    def group_aggregate(self, model: str, group: str) -> float:
        kinds = [k.value for k in GROUPS[group]]
        vals = [self.cells[(k, s, model)] for k in kinds for s in self.severities]
        return float(np.mean(vals))


def run_benchmark(checkpoints: dict, samples, suite, msc: bool = False,
                  workers: int = 1, msc_scales=(0.5, 0.75, 1.0, 1.25, 1.5),
                  msc_flip: bool = True, msc_average: str = "prob") -> BenchmarkReport:
    """Score every model on identical corrupted images.

    checkpoints maps model name -> Checkpoint; iteration order fixes the
    column order. Results are independent of `workers`.
    """
    missing = [name for name, c in checkpoints.items() if c is None]
    if missing or not checkpoints:
        raise UsageError("missing checkpoints: " + (", ".join(missing) or "none given"))
    ks = {c.net.num_classes for c in checkpoints.values()}
    if len(ks) != 1:
        raise UsageError(f"checkpoints disagree on class count: {sorted(ks)}")
    if not samples:
        raise UsageError("benchmark needs a non-empty sample list")
    k = ks.pop()
    models = list(checkpoints)

    def predict_one(net, image):
        if msc:
            return msc_predict(net, image, scales=msc_scales, flip=msc_flip,
                               average=msc_average)
        return predict(LogitMap(forward(net, image), net.head, net.num_classes))

    def eval_cell(args):
        spec, sample = args
        image = sample.image if spec is None else corrupt(sample.image, spec)
        key = (CLEAN, 0) if spec is None else (spec.kind.value, spec.severity)
        out = []
        for name in models:
            cm = ConfusionMatrix(k).add(
                predict_one(checkpoints[name].net, image), sample.label)
            out.append((key + (name,), cm))
        return out

    jobs = [(None, s) for s in samples] + [(spec, s) for spec in suite for s in samples]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(eval_cell, jobs))
    else:
        results = [eval_cell(j) for j in jobs]

    matrices: dict = {}
    for chunk in results:  # fixed job order keeps accumulation deterministic
        for key, cm in chunk:
            matrices.setdefault(key, ConfusionMatrix(k)).merge(cm)

    report = BenchmarkReport(models=models,
                             kinds=[kd.value for kd in CorruptionKind],
                             severities=sorted({spec.severity for spec in suite}),
                             msc=msc)
    for key, cm in matrices.items():
        report.cells[key] = miou(cm)
    return report


# ---------------------------------------------------------------------------
# Rendering


def _fmt(v: float) -> str:
    return " n/a" if math.isnan(v) else f"{100.0 * v:5.1f}"


def render_table(report: BenchmarkReport) -> str:
    """Per-kind grid grouped by corruption family, one block per severity
    plus a Mean block, mirroring the usual corruption-table layout."""
    kinds = list(CorruptionKind)
    lines = [f"# {DISCLAIMER}"]
    group_hdr = "  ".join(f"{g}({len(members)})" for g, members in GROUPS.items())
    lines.append(f"groups: {group_hdr}")
    header = f"{'Sv.':>4} {'Model':<10}" + "".join(f"{SHORT_NAME[kk]:>7}" for kk in kinds)
    lines.append(header)
    lines.append("-" * len(header))
    for sev in report.severities:
        for model in report.models:
            row = f"{sev:>4} {model:<10}"
            for kk in kinds:
                row += f"{_fmt(report.cells[(kk.value, sev, model)]):>7}"
            lines.append(row)
        lines.append("")
    for model in report.models:
        row = f"{'Mean':>4} {model:<10}"
        for kk in kinds:
            vals = [report.cells[(kk.value, s, model)] for s in report.severities]
            row += f"{_fmt(float(np.mean(vals))):>7}"
        lines.append(row)
    lines.append("")
    for model in report.models:
        lines.append(f"{'sev0':>4} {model:<10}{_fmt(report.clean(model)):>7}   (uncorrupted)")
    return "\n".join(lines) + "\n"


def render_csv(report: BenchmarkReport) -> str:
    """One row per cell: kind,severity,model,miou (fraction, full precision)."""
    lines = ["kind,severity,model,miou"]
    for model in report.models:
        lines.append(f"{CLEAN},0,{model},{report.clean(model)!r}")
    for kind in report.kinds:
        for sev in report.severities:
            for model in report.models:
                lines.append(f"{kind},{sev},{model},{report.cells[(kind, sev, model)]!r}")
    return "\n".join(lines) + "\n"


def parse_report_csv(text: str) -> BenchmarkReport:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "kind,severity,model,miou":
        raise UsageError("not a benchmark CSV (bad header)")
    cells, models, severities = {}, [], set()
    for ln in lines[1:]:
        kind, sev, model, value = ln.split(",")
        cells[(kind, int(sev), model)] = float(value)
        if model not in models:
            models.append(model)
        if kind != CLEAN:
            severities.add(int(sev))
    return BenchmarkReport(models=models, kinds=[k.value for k in CorruptionKind],
                           severities=sorted(severities), cells=cells)


def render_severity_csv(report: BenchmarkReport) -> str:
    """Severity-aggregated series (severity 0 = clean), one row per
    model/severity."""
    lines = ["model,severity,mean_miou"]
    for model in report.models:
        for sev in [0, *report.severities]:
            lines.append(f"{model},{sev},{report.severity_aggregate(model, sev)!r}")
    return "\n".join(lines) + "\n"


def render_severity_svg(report: BenchmarkReport, width: int = 640, height: int = 420) -> str:
    """Line chart of mean mIOU against severity, one polyline per model."""
    severities = [0, *report.severities]
    pal = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    left, right, top, bottom = 60, 20, 30, 50
    pw, ph = width - left - right, height - top - bottom
    sx = lambda s: left + pw * (severities.index(s) / max(1, len(severities) - 1))
    sy = lambda v: top + ph * (1.0 - v)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{left}" y="18" font-size="13">mean mIOU vs corruption severity</text>']
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = sy(frac)
        parts.append(f'<line x1="{left}" y1="{y:.1f}" x2="{width-right}" y2="{y:.1f}" '
                     f'stroke="#ddd"/>')
        parts.append(f'<text x="{left-8}" y="{y+4:.1f}" font-size="11" '
                     f'text-anchor="end">{frac*100:.0f}</text>')
    for s in severities:
        parts.append(f'<text x="{sx(s):.1f}" y="{height-bottom+18}" font-size="11" '
                     f'text-anchor="middle">{s}</text>')
    for i, model in enumerate(report.models):
        pts = " ".join(f"{sx(s):.1f},{sy(report.severity_aggregate(model, s)):.1f}"
                       for s in severities)
        color = pal[i % len(pal)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{left+6+i*110}" y="{height-14}" font-size="12" '
                     f'fill="{color}">{model}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_report(report: BenchmarkReport, fmt: str = "text") -> str:
    renderers = {"text": render_table, "csv": render_csv,
                 "severity_csv": render_severity_csv, "svg": render_severity_svg}
    if fmt not in renderers:
        raise UsageError(f"unknown report format {fmt!r} (have {sorted(renderers)})")
    return renderers[fmt](report)


# ---------------------------------------------------------------------------
# Overall summary (val / val+MSC / cor / cor+MSC)


@dataclass
class SummaryReport:
    """Per-model clean and corrupted aggregates, with and without MSC."""
    models: list
    columns: tuple = ("val", "val+MSC", "cor", "cor+MSC")
    values: dict = field(default_factory=dict)  # (model, column) -> fraction

    def set(self, model: str, column: str, value: float) -> None:
        self.values[(model, column)] = value

    def get(self, model: str, column: str) -> float:
        return self.values[(model, column)]


def render_summary(summary: SummaryReport) -> str:
    lines = [f"# {DISCLAIMER}"]
    header = f"{'Model':<10}" + "".join(f"{c:>10}" for c in summary.columns)
    lines += [header, "-" * len(header)]
    for model in summary.models:
        row = f"{model:<10}"
        for c in summary.columns:
            row += f"{_fmt(summary.get(model, c)):>10}"
        lines.append(row)
    return "\n".join(lines) + "\n"


def render_summary_csv(summary: SummaryReport) -> str:
    lines = ["model," + ",".join(summary.columns)]
    for model in summary.models:
        vals = ",".join(repr(summary.get(model, c)) for c in summary.columns)
        lines.append(f"{model},{vals}")
    return "\n".join(lines) + "\n"

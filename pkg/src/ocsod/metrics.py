"""The five-metric evaluation suite: gIoU, cIoU, S-measure, max F-measure,
E-measure, plus per-mode aggregation and Table-style report export.

Definitions follow the originating metric literature; the exact numeric
conventions are pinned here because golden values depend on them:

* soft maps are binarized at threshold 0.5 (foreground = value > t) before
  gIoU/cIoU; the F sweep uses the 256 thresholds t = i/255, i = 0..255,
  with the same strict ``>`` rule;
* F-measure uses beta^2 = 0.3 and is 0 where precision + recall = 0;
* S-measure uses alpha = 0.5; the object term is 2m/(m^2 + 1 + s) over
  foreground (and mirrored background) values with population deviation s;
  the region term divides both maps into 4 blocks at the GT centroid
  (round-half-up of the 1-based foreground mean coordinate, integer
  arithmetic) with block-pixel-area weights and the SSIM-form
  4xy*sxy / ((x^2+y^2)(sx^2+sy^2)), where a zero denominator scores 1.0
  and sample (n-1) normalization is used; a constant block has exactly
  zero variance by definition; GT entirely foreground scores mean(pred);
  the final score is clamped to [0, 1];
* E-measure binarizes the prediction at 0.5, bias-aligns both maps by
  their means, and averages (1 + xi)^2 / 4 over all pixels where
  xi = 2ab/(a^2 + b^2); a constant all-zero prediction scores 1 - mu_gt,
  a constant all-one prediction scores mu_gt, and an all-foreground GT
  scores mean(pred).
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Sequence, Union

import numpy as np

from .core import BinaryMask, ObservationMode, SaliencyMap
from .errors import DimensionMismatch, EmptyGroundTruth, EmptyInput
from .maskops import intersection_union, mask_iou

FB_BETA_SQ = 0.3
S_ALPHA = 0.5
BINARIZE_THRESHOLD = 0.5
N_F_THRESHOLDS = 256

PredInput = Union[SaliencyMap, BinaryMask]


def _as_map(pred: PredInput) -> SaliencyMap:
    if isinstance(pred, BinaryMask):
        return SaliencyMap.from_mask(pred)
    return pred


def _check_dims(pred: SaliencyMap, gt: BinaryMask) -> None:
    if (pred.width, pred.height) != (gt.width, gt.height):
        raise DimensionMismatch(
            f"pred {pred.width}x{pred.height} vs gt {gt.width}x{gt.height}"
        )


@dataclass(frozen=True)
class EvalPair:
    """One prediction/ground-truth pairing tagged with its observation mode."""

    sample_id: str
    mode: ObservationMode
    pred: SaliencyMap
    gt: BinaryMask

    def __post_init__(self):
        object.__setattr__(self, "pred", _as_map(self.pred))
        _check_dims(self.pred, self.gt)

    def pred_mask(self) -> BinaryMask:
        return self.pred.binarize(BINARIZE_THRESHOLD)


# --- segmentation metrics -------------------------------------------------


def g_iou(pairs: Sequence[EvalPair]) -> float:
    """Mean over pairs of per-pair mask IoU (per-instance accuracy)."""
    if not pairs:
        raise EmptyInput("g_iou requires at least one pair")
    return float(sum(mask_iou(p.pred_mask(), p.gt) for p in pairs) / len(pairs))


def c_iou(pairs: Sequence[EvalPair]) -> float:
    """Summed intersections over summed unions (dataset-level consistency)."""
    if not pairs:
        raise EmptyInput("c_iou requires at least one pair")
    inter_sum = 0
    union_sum = 0
    for p in pairs:
        inter, union = intersection_union(p.pred_mask(), p.gt)
        inter_sum += inter
        union_sum += union
    if union_sum == 0:
        return 0.0
    return inter_sum / union_sum


# --- maximum F-measure ------------------------------------------------------


def f_measure_max(pred: PredInput, gt: BinaryMask) -> float:
    """Max over the 256-threshold sweep of F_beta with beta^2 = 0.3."""
    pred = _as_map(pred)
    _check_dims(pred, gt)
    values = pred.values.ravel()
    gt_flat = gt.bits.ravel()
    n_gt = int(gt_flat.sum())
    if n_gt == 0:
        raise EmptyGroundTruth("F-measure is undefined for an empty ground truth")
    sorted_all = np.sort(values)
    sorted_fg = np.sort(values[gt_flat])
    thresholds = np.arange(N_F_THRESHOLDS) / (N_F_THRESHOLDS - 1.0)
    # count of values strictly above each threshold, via binary search
    n_pred = values.size - np.searchsorted(sorted_all, thresholds, side="right")
    n_tp = sorted_fg.size - np.searchsorted(sorted_fg, thresholds, side="right")
    best = 0.0
    for np_t, tp_t in zip(n_pred.tolist(), n_tp.tolist()):
        precision = tp_t / np_t if np_t else 0.0
        recall = tp_t / n_gt
        if precision + recall == 0.0:
            continue
        f = (1.0 + FB_BETA_SQ) * precision * recall / (FB_BETA_SQ * precision + recall)
        if f > best:
            best = f
    return best


# --- S-measure --------------------------------------------------------------


def _is_constant(arr: np.ndarray) -> bool:
    return bool((arr == arr.flat[0]).all())


def _object_score(vals: np.ndarray) -> float:
    mean = float(vals.mean())
    dev = float(vals.std())
    return 2.0 * mean / (mean * mean + 1.0 + dev)


def _s_object(p: np.ndarray, g: np.ndarray) -> float:
    mu = float(g.sum() / g.size)
    fg_vals = p[g]
    bg_vals = 1.0 - p[~g]
    return mu * _object_score(fg_vals) + (1.0 - mu) * _object_score(bg_vals)


def _round_half_up_ratio(num: int, den: int) -> int:
    """round_half_up(num/den) for nonnegative integers, exactly."""
    return (2 * num + den) // (2 * den)


def _ssim_block(p: np.ndarray, g: np.ndarray) -> float:
    n = p.size
    p_const = _is_constant(p)
    g_const = _is_constant(g)
    x = float(p.flat[0]) if p_const else float(p.mean())
    y = float(g.flat[0]) if g_const else float(g.mean())
    if n > 1 and not p_const:
        dp = p - x
        sx2 = float((dp * dp).sum() / (n - 1))
    else:
        sx2 = 0.0
    if n > 1 and not g_const:
        dg = g - y
        sy2 = float((dg * dg).sum() / (n - 1))
    else:
        sy2 = 0.0
    if n > 1 and not p_const and not g_const:
        sxy = float((dp * dg).sum() / (n - 1))
    else:
        sxy = 0.0
    alpha = 4.0 * x * y * sxy
    beta = (x * x + y * y) * (sx2 + sy2)
    if beta == 0.0:
        return 1.0
    return alpha / beta


def _s_region(p: np.ndarray, g: np.ndarray) -> float:
    h, w = g.shape
    ys, xs = np.nonzero(g)
    area = int(ys.size)
    # centroid as round-half-up of the 1-based foreground mean coordinate;
    # the left/top blocks are never empty, the right/bottom ones may be
    cx = _round_half_up_ratio(int(xs.sum()) + area, area)
    cy = _round_half_up_ratio(int(ys.sum()) + area, area)
    total = h * w
    gf = g.astype(np.float64)
    score = 0.0
    for y0, y1, x0, x1 in (
        (0, cy, 0, cx),
        (0, cy, cx, w),
        (cy, h, 0, cx),
        (cy, h, cx, w),
    ):
        n_block = (y1 - y0) * (x1 - x0)
        if n_block == 0:
            continue
        weight = n_block / total
        score += weight * _ssim_block(p[y0:y1, x0:x1], gf[y0:y1, x0:x1])
    return score


def s_measure(pred: PredInput, gt: BinaryMask, alpha: float = S_ALPHA) -> float:
    """Structure measure: alpha*S_object + (1-alpha)*S_region, clamped."""
    pred = _as_map(pred)
    _check_dims(pred, gt)
    area = gt.area
    if area == 0:
        raise EmptyGroundTruth("S-measure is undefined for an empty ground truth")
    p = pred.values
    g = gt.bits
    if area == g.size:
        score = float(p.mean())
    else:
        score = alpha * _s_object(p, g) + (1.0 - alpha) * _s_region(p, g)
    return min(1.0, max(0.0, score))


# --- E-measure ----------------------------------------------------------------


def e_measure(pred: PredInput, gt: BinaryMask) -> float:
    """Enhanced-alignment measure over the 0.5-binarized prediction."""
    pred = _as_map(pred)
    _check_dims(pred, gt)
    gt_area = gt.area
    if gt_area == 0:
        raise EmptyGroundTruth("E-measure is undefined for an empty ground truth")
    pb = pred.values > BINARIZE_THRESHOLD
    n = pb.size
    n_pred = int(pb.sum())
    mu_gt = gt_area / n
    if n_pred == 0:
        return 1.0 - mu_gt
    if n_pred == n:
        return mu_gt
    if gt_area == n:
        return n_pred / n
    p = pb.astype(np.float64)
    g = gt.bits.astype(np.float64)
    phi_p = p - p.mean()
    phi_g = g - g.mean()
    # both maps are non-constant here, so the denominator is never zero
    xi = 2.0 * phi_g * phi_p / (phi_g * phi_g + phi_p * phi_p)
    enhanced = (1.0 + xi) * (1.0 + xi) / 4.0
    return float(enhanced.mean())


# --- aggregation and report export ---------------------------------------------


@dataclass(frozen=True)
class MetricRow:
    count: int
    g_iou: float
    c_iou: float
    s_m: float
    f_m: float
    e_m: float

    def as_dict(self) -> dict:
        return {
            "count": self.count,
            "g_iou": self.g_iou,
            "c_iou": self.c_iou,
            "s_m": self.s_m,
            "f_m": self.f_m,
            "e_m": self.e_m,
        }


REPORT_ROW_ORDER = ("free_viewing", "intent", "preference", "overall")
REPORT_COLUMNS = ("gIoU", "cIoU", "S_m", "F_m", "E_m")


def format_score(value: float) -> str:
    """Scale to x100 and round half-up to 2 decimals (table formatting)."""
    return str(Decimal(repr(value * 100.0)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class BenchReport:
    """Per-mode plus overall metric rows in the Tables-1/2 column layout."""

    rows: dict

    def row(self, name: str) -> MetricRow:
        return self.rows[name]

    def ordered_rows(self) -> list[tuple[str, MetricRow]]:
        return [(name, self.rows[name]) for name in REPORT_ROW_ORDER if name in self.rows]

    def to_csv(self) -> str:
        lines = ["mode,n," + ",".join(REPORT_COLUMNS)]
        for name, row in self.ordered_rows():
            cells = [format_score(v) for v in (row.g_iou, row.c_iou, row.s_m, row.f_m, row.e_m)]
            lines.append(f"{name},{row.count}," + ",".join(cells))
        return "\n".join(lines) + "\n"

    def to_markdown(self) -> str:
        header = "| Mode | n | " + " | ".join(REPORT_COLUMNS) + " |"
        rule = "|" + "---|" * (len(REPORT_COLUMNS) + 2)
        lines = [header, rule]
        for name, row in self.ordered_rows():
            cells = [format_score(v) for v in (row.g_iou, row.c_iou, row.s_m, row.f_m, row.e_m)]
            lines.append(f"| {name} | {row.count} | " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"

    def as_dict(self) -> dict:
        return {name: row.as_dict() for name, row in self.ordered_rows()}


def _metric_row(pairs: Sequence[EvalPair]) -> MetricRow:
    inter_sum = 0
    union_sum = 0
    iou_sum = 0.0
    s_sum = 0.0
    f_sum = 0.0
    e_sum = 0.0
    for pair in pairs:
        pm = pair.pred_mask()
        inter, union = intersection_union(pm, pair.gt)
        inter_sum += inter
        union_sum += union
        iou_sum += (inter / union) if union else 0.0
        s_sum += s_measure(pair.pred, pair.gt)
        f_sum += f_measure_max(pair.pred, pair.gt)
        e_sum += e_measure(pair.pred, pair.gt)
    n = len(pairs)
    return MetricRow(
        count=n,
        g_iou=iou_sum / n,
        c_iou=(inter_sum / union_sum) if union_sum else 0.0,
        s_m=s_sum / n,
        f_m=f_sum / n,
        e_m=e_sum / n,
    )


def aggregate_report(pairs: Iterable[EvalPair]) -> BenchReport:
    """Five metrics per mode and overall.

    Dataset-level metrics (gIoU, cIoU) pool per-pair intersections/unions;
    map-level metrics (S, F, E) are per-pair means.
    """
    pairs = list(pairs)
    if not pairs:
        raise EmptyInput("aggregate_report requires at least one pair")
    rows: dict[str, MetricRow] = {}
    for mode in ObservationMode:
        group = [p for p in pairs if p.mode is mode]
        if group:
            rows[mode.value] = _metric_row(group)
    rows["overall"] = _metric_row(pairs)
    return BenchReport(rows)

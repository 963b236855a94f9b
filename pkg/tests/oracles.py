"""Brute-force reference implementations used to pin golden values.

Straight-line translations of the metric and RLE definitions, written with
plain Python loops and no numpy and no code shared with the package. The
acceptance suite compares the production implementations against these.

All functions take nested lists: masks as rows of 0/1 ints, maps as rows
of floats in [0, 1].
"""

from __future__ import annotations

BETA_SQ = 0.3
ALPHA = 0.5
THRESHOLD = 0.5


def iou_ref(pred, gt) -> float:
    inter = 0
    union = 0
    for row_p, row_g in zip(pred, gt):
        for p, g in zip(row_p, row_g):
            p = 1 if p else 0
            g = 1 if g else 0
            if p and g:
                inter += 1
            if p or g:
                union += 1
    if union == 0:
        return 0.0
    return inter / union


def binarize_ref(values, threshold=THRESHOLD):
    return [[1 if v > threshold else 0 for v in row] for row in values]


def g_iou_ref(pairs) -> float:
    """pairs: list of (pred_map, gt_mask) nested lists."""
    total = 0.0
    for pred, gt in pairs:
        total += iou_ref(binarize_ref(pred), gt)
    return total / len(pairs)


def c_iou_ref(pairs) -> float:
    inter_sum = 0
    union_sum = 0
    for pred, gt in pairs:
        pb = binarize_ref(pred)
        for row_p, row_g in zip(pb, gt):
            for p, g in zip(row_p, row_g):
                if p and g:
                    inter_sum += 1
                if p or g:
                    union_sum += 1
    if union_sum == 0:
        return 0.0
    return inter_sum / union_sum


def f_max_ref(values, gt) -> float:
    n_gt = 0
    for row in gt:
        for g in row:
            if g:
                n_gt += 1
    if n_gt == 0:
        raise ValueError("empty ground truth")
    best = 0.0
    for i in range(256):
        t = i / 255
        tp = 0
        n_pred = 0
        for row_v, row_g in zip(values, gt):
            for v, g in zip(row_v, row_g):
                if v > t:
                    n_pred += 1
                    if g:
                        tp += 1
        precision = tp / n_pred if n_pred else 0.0
        recall = tp / n_gt
        if precision + recall == 0.0:
            continue
        f = (1.0 + BETA_SQ) * precision * recall / (BETA_SQ * precision + recall)
        if f > best:
            best = f
    return best


def _mean(vals) -> float:
    return sum(vals) / len(vals)


def _pop_std(vals) -> float:
    m = _mean(vals)
    return (sum((v - m) * (v - m) for v in vals) / len(vals)) ** 0.5


def _object_term(vals) -> float:
    m = _mean(vals)
    s = _pop_std(vals)
    return 2.0 * m / (m * m + 1.0 + s)


def _round_half_up_ratio(num, den) -> int:
    return (2 * num + den) // (2 * den)


def _block(grid, y0, y1, x0, x1):
    vals = []
    for y in range(y0, y1):
        for x in range(x0, x1):
            vals.append(grid[y][x])
    return vals


def _ssim_ref(p_vals, g_vals) -> float:
    n = len(p_vals)
    p_const = all(v == p_vals[0] for v in p_vals)
    g_const = all(v == g_vals[0] for v in g_vals)
    x = p_vals[0] if p_const else _mean(p_vals)
    y = float(g_vals[0]) if g_const else _mean(g_vals)
    sx2 = sy2 = sxy = 0.0
    if n > 1 and not p_const:
        sx2 = sum((v - x) * (v - x) for v in p_vals) / (n - 1)
    if n > 1 and not g_const:
        sy2 = sum((v - y) * (v - y) for v in g_vals) / (n - 1)
    if n > 1 and not p_const and not g_const:
        sxy = sum((pv - x) * (gv - y) for pv, gv in zip(p_vals, g_vals)) / (n - 1)
    alpha = 4.0 * x * y * sxy
    beta = (x * x + y * y) * (sx2 + sy2)
    if beta == 0.0:
        return 1.0
    return alpha / beta


def s_measure_ref(values, gt) -> float:
    h = len(gt)
    w = len(gt[0])
    area = sum(1 for row in gt for g in row if g)
    if area == 0:
        raise ValueError("empty ground truth")
    if area == w * h:
        flat = [v for row in values for v in row]
        score = _mean(flat)
        return min(1.0, max(0.0, score))
    # object term
    mu = area / (w * h)
    fg = [v for row_v, row_g in zip(values, gt) for v, g in zip(row_v, row_g) if g]
    bg = [1.0 - v for row_v, row_g in zip(values, gt) for v, g in zip(row_v, row_g) if not g]
    s_object = mu * _object_term(fg) + (1.0 - mu) * _object_term(bg)
    # region term: split at the round-half-up 1-based centroid
    sx = 0
    sy = 0
    for y in range(h):
        for x in range(w):
            if gt[y][x]:
                sx += x
                sy += y
    cx = _round_half_up_ratio(sx + area, area)
    cy = _round_half_up_ratio(sy + area, area)
    gt_f = [[float(1 if g else 0) for g in row] for row in gt]
    s_region = 0.0
    for y0, y1, x0, x1 in (
        (0, cy, 0, cx),
        (0, cy, cx, w),
        (cy, h, 0, cx),
        (cy, h, cx, w),
    ):
        n_block = (y1 - y0) * (x1 - x0)
        if n_block == 0:
            continue
        weight = n_block / (w * h)
        s_region += weight * _ssim_ref(_block(values, y0, y1, x0, x1), _block(gt_f, y0, y1, x0, x1))
    score = ALPHA * s_object + (1.0 - ALPHA) * s_region
    return min(1.0, max(0.0, score))


def e_measure_ref(values, gt) -> float:
    h = len(gt)
    w = len(gt[0])
    n = w * h
    gt_area = sum(1 for row in gt for g in row if g)
    if gt_area == 0:
        raise ValueError("empty ground truth")
    pb = binarize_ref(values)
    n_pred = sum(1 for row in pb for p in row if p)
    mu_gt = gt_area / n
    if n_pred == 0:
        return 1.0 - mu_gt
    if n_pred == n:
        return mu_gt
    if gt_area == n:
        return n_pred / n
    mu_p = n_pred / n
    total = 0.0
    for row_p, row_g in zip(pb, gt):
        for p, g in zip(row_p, row_g):
            a = (1.0 if g else 0.0) - mu_gt
            b = (1.0 if p else 0.0) - mu_p
            xi = 2.0 * a * b / (a * a + b * b)
            total += (1.0 + xi) * (1.0 + xi) / 4.0
    return total / n


def rle_encode_ref(bits_rows) -> list:
    """Zero-run-first RLE of the row-major stream, by direct scan."""
    stream = [1 if b else 0 for row in bits_rows for b in row]
    counts = []
    current = 0
    run = 0
    for bit in stream:
        if bit == current:
            run += 1
        else:
            counts.append(run)
            current = bit
            run = 1
    counts.append(run)
    return counts

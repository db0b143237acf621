"""Independent brute-force references used as oracles by the test suite.

Nothing here shares code with the package under test beyond plain Python:
matchings are found by exhaustive enumeration, geometry by pixel sets, and
metrics by direct formula evaluation.
"""

from __future__ import annotations

import math


# -- assignment ---------------------------------------------------------------


def brute_match(matrix):
    """Max-total assignment by exhaustive enumeration.

    Zero entries are never matched. Candidates per row are the still-free
    positive columns in ascending order, then "unmatched", and the first
    maximum in that enumeration order wins; that is exactly the
    lexicographically-smallest-optimum rule the implementation promises.
    Returns (pairs, total) with pairs as (row, col) tuples and the total
    summed in row order.
    """
    n_rows = len(matrix)
    n_cols = len(matrix[0]) if n_rows else 0

    def assignments(row, used):
        if row == n_rows:
            yield ()
            return
        for col in range(n_cols):
            if col in used or matrix[row][col] <= 0.0:
                continue
            for rest in assignments(row + 1, used | {col}):
                yield ((row, col),) + rest
        for rest in assignments(row + 1, used):
            yield rest

    best_pairs = ()
    best_total = 0.0
    for pairs in assignments(0, frozenset()):
        total = 0.0
        for i, j in pairs:
            total += matrix[i][j]
        if total > best_total:
            best_pairs, best_total = pairs, total
    return best_pairs, best_total


def greedy_match_total(matrix):
    """Greedy descending-IoU matching, for the dominance property."""
    entries = sorted(
        (
            (matrix[i][j], i, j)
            for i in range(len(matrix))
            for j in range(len(matrix[0]) if matrix else 0)
            if matrix[i][j] > 0
        ),
        key=lambda e: (-e[0], e[1], e[2]),
    )
    used_rows, used_cols = set(), set()
    total = 0.0
    for value, i, j in entries:
        if i in used_rows or j in used_cols:
            continue
        used_rows.add(i)
        used_cols.add(j)
        total += value
    return total


# -- pixel-set geometry -------------------------------------------------------


def pixels(grid):
    """Set of (row, col) foreground pixels of a nested-list/array grid."""
    out = set()
    for r, row in enumerate(grid):
        for c, v in enumerate(row):
            if v:
                out.add((r, c))
    return out


def set_iou(a, b):
    union = len(a | b)
    if union == 0:
        return 0.0
    return len(a & b) / union


# -- image metrics ------------------------------------------------------------

TAUS = [(50 + 5 * k) / 100 for k in range(10)]


def datapoint_counts(pred_sets, gt_sets, tau):
    """TP/FP/FN for one datapoint at one threshold, matching by enumeration."""
    matrix = [[set_iou(p, g) for g in gt_sets] for p in pred_sets]
    pairs, _ = brute_match(matrix)
    tp = sum(1 for i, j in pairs if matrix[i][j] >= tau)
    return tp, len(pred_sets) - tp, len(gt_sets) - tp


def reference_image_metrics(datapoints, gate=0.5):
    """Independent pmF1 / macro_pF1 / IL_MCC / cgF1 (micro mode).

    ``datapoints`` is a list of (gt_pixel_sets, [(pred_pixel_set, score)]).
    One matching per datapoint on raw IoU, re-thresholded per tau.
    """
    per_tau_tp = [0] * len(TAUS)
    per_tau_fp = [0] * len(TAUS)
    per_tau_fn = [0] * len(TAUS)
    macro_sums = [0.0] * len(TAUS)
    n_pos = 0
    il_tp = il_tn = il_fp = il_fn = 0
    for gt_sets, scored_preds in datapoints:
        pred_sets = [p for p, s in scored_preds if s > gate]
        positive = len(gt_sets) > 0
        predicted = len(pred_sets) > 0
        if positive:
            il_tp += predicted
            il_fn += not predicted
        else:
            il_fp += predicted
            il_tn += not predicted
        if not positive:
            continue
        n_pos += 1
        matrix = [[set_iou(p, g) for g in gt_sets] for p in pred_sets]
        pairs, _ = brute_match(matrix)
        for k, tau in enumerate(TAUS):
            tp = sum(1 for i, j in pairs if matrix[i][j] >= tau)
            fp = len(pred_sets) - tp
            fn = len(gt_sets) - tp
            per_tau_tp[k] += tp
            per_tau_fp[k] += fp
            per_tau_fn[k] += fn
            macro_sums[k] += 2 * tp / (2 * tp + fp + fn)

    micro_per_tau = [
        2 * per_tau_tp[k] / (2 * per_tau_tp[k] + per_tau_fp[k] + per_tau_fn[k])
        for k in range(len(TAUS))
    ]
    pm = sum(micro_per_tau) / len(TAUS)
    macro = sum(v / n_pos for v in macro_sums) / len(TAUS)
    num = il_tp * il_tn - il_fp * il_fn
    den = (il_tp + il_fp) * (il_tp + il_fn) * (il_tn + il_fp) * (il_tn + il_fn)
    mcc = 0.0 if den == 0 else num / math.sqrt(den)
    return {
        "pmF1": pm,
        "macro_pF1": macro,
        "IL_MCC": mcc,
        "cgF1": 100.0 * pm * mcc,
    }


# -- HOTA ---------------------------------------------------------------------

ALPHAS = [(5 + 5 * k) / 100 for k in range(19)]


def reference_hota(sequences):
    """HOTA / DetA / AssA by exhaustive per-frame matching enumeration.

    ``sequences`` is a list of (gt_tracks, pred_tracks), each track being a
    dict frame -> pixel set. Per-frame matchings maximize the product of
    track alignment and mask IoU; the first maximum in lexicographic
    enumeration order wins, mirroring the deterministic tie-break of the
    implementation under test.
    """
    n_alpha = len(ALPHAS)
    tp = [0] * n_alpha
    fn = [0] * n_alpha
    fp = [0] * n_alpha
    ass_sum = [0.0] * n_alpha

    for gt_tracks, pred_tracks in sequences:
        frames = sorted(
            {t for tr in gt_tracks for t in tr} | {t for tr in pred_tracks for t in tr}
        )
        gt_count = [0] * len(gt_tracks)
        pred_count = [0] * len(pred_tracks)
        potential = [[0.0] * len(pred_tracks) for _ in gt_tracks]
        frame_data = []
        for t in frames:
            gt_ids = [i for i, tr in enumerate(gt_tracks) if tr.get(t)]
            pred_ids = [j for j, tr in enumerate(pred_tracks) if tr.get(t)]
            sim = [
                [set_iou(gt_tracks[i][t], pred_tracks[j][t]) for j in pred_ids]
                for i in gt_ids
            ]
            frame_data.append((gt_ids, pred_ids, sim))
            for i in gt_ids:
                gt_count[i] += 1
            for j in pred_ids:
                pred_count[j] += 1
            for a, i in enumerate(gt_ids):
                row_sum = sum(sim[a])
                for b, j in enumerate(pred_ids):
                    col_sum = sum(sim[x][b] for x in range(len(gt_ids)))
                    denom = row_sum + col_sum - sim[a][b]
                    if denom > 0:
                        potential[i][j] += sim[a][b] / denom

        alignment = [
            [
                potential[i][j] / (gt_count[i] + pred_count[j] - potential[i][j])
                if gt_count[i] + pred_count[j] - potential[i][j] > 0
                else 0.0
                for j in range(len(pred_tracks))
            ]
            for i in range(len(gt_tracks))
        ]

        matches = [
            [[0] * len(pred_tracks) for _ in gt_tracks] for _ in range(n_alpha)
        ]
        for gt_ids, pred_ids, sim in frame_data:
            if not gt_ids:
                for k in range(n_alpha):
                    fp[k] += len(pred_ids)
                continue
            if not pred_ids:
                for k in range(n_alpha):
                    fn[k] += len(gt_ids)
                continue
            score = [
                [alignment[gt_ids[a]][pred_ids[b]] * sim[a][b] for b in range(len(pred_ids))]
                for a in range(len(gt_ids))
            ]
            pairs, _ = brute_match(score)
            for k, alpha in enumerate(ALPHAS):
                hits = [(a, b) for a, b in pairs if sim[a][b] >= alpha]
                tp[k] += len(hits)
                fn[k] += len(gt_ids) - len(hits)
                fp[k] += len(pred_ids) - len(hits)
                for a, b in hits:
                    matches[k][gt_ids[a]][pred_ids[b]] += 1

        for k in range(n_alpha):
            for i in range(len(gt_tracks)):
                for j in range(len(pred_tracks)):
                    cnt = matches[k][i][j]
                    if cnt:
                        ass_sum[k] += cnt * (cnt / (gt_count[i] + pred_count[j] - cnt))

    det_a = [tp[k] / max(1, tp[k] + fn[k] + fp[k]) for k in range(n_alpha)]
    ass_a = [ass_sum[k] / max(1, tp[k]) for k in range(n_alpha)]
    hota_a = [math.sqrt(det_a[k] * ass_a[k]) for k in range(n_alpha)]
    return {
        "HOTA": sum(hota_a) / n_alpha,
        "DetA": sum(det_a) / n_alpha,
        "AssA": sum(ass_a) / n_alpha,
        "per_alpha": list(zip(ALPHAS, det_a, ass_a, hota_a)),
    }

"""Center-distance detection metrics on synthetic ground truth.

The composite score ``desk_nds`` follows the nuScenes NDS recipe but drops
the attribute error (no attribute head exists), so the divisor is 9:

    desk_nds = (5 * mAP + sum_{m in ATE, ASE, AOE, AVE} (1 - min(1, m))) / 9
"""
import numpy as np

DIST_THRESHOLDS = (0.5, 1.0, 2.0, 4.0)
TP_THRESHOLD = 2.0
TP_METRICS = ("mATE", "mASE", "mAOE", "mAVE")


def _sorted(preds):
    return sorted(range(len(preds)),
                  key=lambda i: (-preds[i]["score"], preds[i].get("query_id", i)))


def greedy_match(preds, gts, threshold):
    """Match predictions (dicts with box/class/score) to gts, best score first.

    Each prediction takes the nearest still-unmatched gt of its class whose
    2D centre distance is within ``threshold``. Returns per-prediction TP
    flags in score order and the matched (pred index, gt index) pairs.
    """
    taken = set()
    labels, pairs = [], []
    for i in _sorted(preds):
        p = preds[i]
        best, best_d = None, None
        for g, gt in enumerate(gts):
            if g in taken or gt["class"] != p["class"]:
                continue
            d = float(np.hypot(p["box"][0] - gt["box"][0], p["box"][1] - gt["box"][1]))
            if d <= threshold and (best_d is None or d < best_d):
                best, best_d = g, d
        if best is None:
            labels.append(False)
        else:
            taken.add(best)
            labels.append(True)
            pairs.append((i, best))
    return labels, pairs


def average_precision(labels, num_gt):
    """Step integral of precision over recall (each TP adds precision / num_gt)."""
    if num_gt == 0:
        return 0.0
    ap, tp = 0.0, 0
    for rank, is_tp in enumerate(labels, start=1):
        if is_tp:
            tp += 1
            ap += tp / rank
    return ap / num_gt


def box_errors(pred, gt):
    """(ATE, ASE, AOE, AVE) of one matched pair of 9-vectors."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    ate = float(np.hypot(pred[0] - gt[0], pred[1] - gt[1]))
    ratio = np.prod(np.minimum(pred[3:6], gt[3:6]) / np.maximum(pred[3:6], gt[3:6]))
    ase = float(1.0 - ratio)
    d = (pred[6] - gt[6]) % (2 * np.pi)
    aoe = float(min(d, 2 * np.pi - d))
    ave = float(np.hypot(pred[7] - gt[7], pred[8] - gt[8]))
    return ate, ase, aoe, ave


def tp_errors(pairs_boxes):
    """Mean TP errors over (pred_box, gt_box) pairs; None when there are no pairs."""
    if not pairs_boxes:
        return None
    errs = np.array([box_errors(p, g) for p, g in pairs_boxes])
    return tuple(float(x) for x in errs.mean(axis=0))


def nds(m_ap, errors):
    """desk-NDS from mAP and the four mean TP errors (mATE, mASE, mAOE, mAVE)."""
    return (5.0 * m_ap + sum(1.0 - min(1.0, float(e)) for e in errors)) / 9.0


def evaluate(preds, gts, thresholds=DIST_THRESHOLDS, tp_threshold=TP_THRESHOLD):
    """Full report. ``preds``/``gts`` are dicts with ``box`` (9 floats) and ``class``.

    Classes with neither gts nor predictions are skipped. A class with no
    true positive at the TP threshold gets TP errors of 1 (the worst value).
    """
    classes = sorted({int(g["class"]) for g in gts} | {int(p["class"]) for p in preds})
    per_class = {}
    aps, class_tp = [], []
    for c in classes:
        cp = [p for p in preds if int(p["class"]) == c]
        cg = [g for g in gts if int(g["class"]) == c]
        ap_by_thr = {}
        for thr in thresholds:
            labels, _ = greedy_match(cp, cg, thr)
            ap_by_thr[str(thr)] = average_precision(labels, len(cg))
        _, pairs = greedy_match(cp, cg, tp_threshold)
        errs = tp_errors([(cp[i]["box"], cg[g]["box"]) for i, g in pairs])
        if errs is None:
            errs = (1.0, 1.0, 1.0, 1.0)
        class_tp.append(errs)
        class_ap = float(np.mean(list(ap_by_thr.values())))
        aps.append(class_ap)
        per_class[str(c)] = {"AP": class_ap, "AP_by_threshold": ap_by_thr,
                             "num_gt": len(cg), "num_pred": len(cp),
                             **dict(zip(TP_METRICS, errs))}
    m_ap = float(np.mean(aps)) if aps else 0.0
    if class_tp:
        means = tuple(float(x) for x in np.mean(np.array(class_tp), axis=0))
    else:
        means = (1.0, 1.0, 1.0, 1.0)
    report = {"mAP": m_ap, **dict(zip(TP_METRICS, means)),
              "desk_NDS": nds(m_ap, means), "per_class": per_class,
              "note": "desk_NDS excludes the attribute error (divisor 9)"}
    return report


def gt_rows(gt_frame):
    return [{"box": [float(x) for x in b], "class": int(c)}
            for b, c in zip(gt_frame.boxes, gt_frame.class_ids)]

"""Set matching, detection losses and a gradient-free fitting loop."""
import logging
import math

import numpy as np
from scipy.optimize import linear_sum_assignment

from .decoder import run_decoder
from .errors import ConfigurationError, ContractViolation
from .numerics import wrap_angle
from .parallel import ordered_map

log = logging.getLogger(__name__)

FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0
PROB_CLAMP = 1e-7
# x and y count double, everything else once
L1_WEIGHTS = np.array([2.0, 2.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0])
LAMBDA_CLS = 2.0
LAMBDA_REG = 0.25


def hungarian(cost):
    """Minimum-cost injective assignment; returns sorted (row, col) pairs."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ConfigurationError("cost matrix must be 2-D")
    if not np.all(np.isfinite(cost)):
        raise ConfigurationError("cost matrix has non-finite entries")
    if cost.size == 0:
        return []
    rows, cols = linear_sum_assignment(cost)
    return sorted(zip(rows.tolist(), cols.tolist()))


def focal_term(p, y, alpha=FOCAL_ALPHA, gamma=FOCAL_GAMMA):
    """Sigmoid focal loss of a single probability; vectorises over arrays."""
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_CLAMP, 1 - PROB_CLAMP)
    pos = -alpha * (1 - p) ** gamma * np.log(p)
    neg = -(1 - alpha) * p ** gamma * np.log(1 - p)
    return np.where(np.asarray(y) > 0, pos, neg)


def box_l1(pred, gt, weights=L1_WEIGHTS):
    """Weighted L1 over 9-vectors with the yaw difference wrapped first."""
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)
    diff = diff.copy()
    diff[..., 6] = wrap_angle(diff[..., 6])
    return np.sum(weights * np.abs(diff), axis=-1)


def _layer_loss(boxes, scores, gt_boxes, gt_classes, lambda_cls, lambda_reg):
    neg = focal_term(scores, 0)                      # N x K
    loss = lambda_cls * float(np.sum(neg))
    if len(gt_classes) == 0:
        return loss, []
    p_gt = scores[:, gt_classes]                     # N x G
    cls_cost = focal_term(p_gt, 1) - focal_term(p_gt, 0)
    reg_cost = box_l1(boxes[:, None, :], gt_boxes[None, :, :])
    pairs = hungarian(lambda_cls * cls_cost + lambda_reg * reg_cost)
    for i, g in pairs:
        loss += lambda_cls * float(cls_cost[i, g]) + lambda_reg * float(reg_cost[i, g])
    return loss, pairs


def set_loss(dets, gt, lambda_cls=LAMBDA_CLS, lambda_reg=LAMBDA_REG):
    """Sum of per-layer matched losses; returns (total, per-layer list).

    ``gt`` is any object with ``boxes`` (G x 9) and ``class_ids`` (G,).
    Matched queries pay the positive focal term on their gt class plus the
    box L1; every other (query, class) entry pays the negative focal term.
    """
    gt_boxes = np.asarray(gt.boxes, dtype=np.float64).reshape(-1, 9)
    gt_classes = np.asarray(gt.class_ids, dtype=np.int64)
    per_layer = []
    for layer in range(dets.num_layers):
        loss, _ = _layer_loss(dets.boxes[layer], dets.scores[layer], gt_boxes,
                              gt_classes, lambda_cls, lambda_reg)
        per_layer.append(loss)
    return float(sum(per_layer)), per_layer


def spsa_fit(params, inputs, gt, steps, step_size=3e-4, perturb=1e-2, seed=0,
             num_layers=None, threads=1, callback=None, grad_clip=10.0):
    """Simultaneous-perturbation stochastic approximation on the flat parameters.

    Every step draws a Rademacher direction, estimates the gradient from two
    probes at +/- ``perturb`` and moves by ``step_size``. The scalar slope
    estimate is clipped to +/- ``grad_clip`` (None disables) so a single
    probe that flips the set matching cannot throw the parameters far away.
    Returns the fitted params and the loss at the start of each step.
    """
    if steps < 0:
        raise ConfigurationError("steps must be >= 0")
    rng = np.random.default_rng([seed, 5150])
    theta = params.flat()
    trace = []

    def loss_at(vec):
        value, _ = set_loss(run_decoder(params.with_flat(vec), inputs, num_layers), gt)
        if not math.isfinite(value):
            raise ContractViolation(f"non-finite loss at step {len(trace)}")
        return value

    for step in range(steps):
        delta = rng.choice(np.array([-1.0, 1.0]), size=theta.size)
        probes = [theta, theta + perturb * delta, theta - perturb * delta]
        current, plus, minus = ordered_map(loss_at, probes, threads)
        trace.append(current)
        slope = (plus - minus) / (2 * perturb)
        if grad_clip is not None:
            slope = min(max(slope, -grad_clip), grad_clip)
        grad = slope * delta
        theta = theta - step_size * grad
        if callback is not None:
            callback(step, current)
        if step % 50 == 0:
            log.debug("spsa step %d loss %.5f", step, current)
    return params.with_flat(theta), trace

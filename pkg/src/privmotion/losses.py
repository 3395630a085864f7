"""Interpolation, prediction, simulation and total losses.

Position losses (``mp``) average the 3-D Euclidean error over joints and
frames, with K = 3J parameters laid out as consecutive (x, y, z) triples.
Angle losses (``ma``) average the absolute error over the K parameters.
Inputs may carry a leading batch axis; the batch is averaged as well.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .config import METRICS
from .errors import ContractError, DimensionError


@dataclass(frozen=True)
class LossBreakdown:
    itp: float = 0.0
    fp: float = 0.0
    simu: float = 0.0
    total: float = 0.0
    metric: str = "mp"
    lam: float = 0.6


def _as_node(x, graph: tc.Graph | None) -> tc.Node:
    if isinstance(x, tc.Node):
        return x
    return (graph or tc.Graph()).const(x)


def _batch_size(x: tc.Node) -> int:
    return x.shape[0] if x.value.ndim == 3 else 1


def pose_error(pred, gt, metric: str = "mp") -> tc.Node:
    """Mean per-joint position error or mean absolute angle error over all frames."""
    if metric not in METRICS:
        raise ContractError(f"unknown metric {metric!r}")
    pred = _as_node(pred, None)
    gt = _as_node(gt, pred.graph)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    k, frames = pred.shape[-2:]
    diff = tc.sub(pred, gt)
    if metric == "mp":
        if k % 3:
            raise ContractError(f"position metric needs K divisible by 3, got K={k}")
        joints = k // 3
        rows = tc.reshape(tc.transpose(diff), diff.shape[:-2] + (frames, joints, 3))
        total = tc.loss_reduce("l2_rows", rows)
        denom = frames * joints
    else:
        total = tc.loss_reduce("l1_sum", diff)
        denom = frames * k
    return tc.scale(total, 1.0 / (denom * _batch_size(pred)))


def loss_itp(pred_seq, gt_seq, metric: str = "mp") -> tc.Node:
    """Error over the whole observed+target+privileged window."""
    return pose_error(pred_seq, gt_seq, metric)


def loss_fp(pred_seq, gt_seq, metric: str = "mp") -> tc.Node:
    """Error over the first N+T frames only; trailing privileged frames are ignored."""
    pred = _as_node(pred_seq, None)
    scored = np.shape(gt_seq.value if isinstance(gt_seq, tc.Node) else gt_seq)[-1]
    if scored > pred.shape[-1]:
        raise DimensionError(f"ground truth has {scored} frames, prediction only {pred.shape[-1]}")
    return pose_error(tc.take_cols(pred, 0, scored), gt_seq, metric)


def loss_psl(pred_seq, gt_seq, scored: int, psl_weight: float, metric: str = "mp") -> tc.Node:
    """Prediction loss on the first ``scored`` frames plus weighted loss on the rest."""
    pred = _as_node(pred_seq, None)
    gt = _as_node(gt_seq, pred.graph)
    frames = pred.shape[-1]
    head = pose_error(tc.take_cols(pred, 0, scored), tc.take_cols(gt, 0, scored), metric)
    if psl_weight == 0.0 or scored == frames:
        return head
    tail = pose_error(tc.take_cols(pred, scored, frames), tc.take_cols(gt, scored, frames), metric)
    return tc.affine_combine(1.0, head, psl_weight, tail)


def loss_simu(s, e) -> tc.Node:
    """Frobenius distance between simulator output and the (fixed) representation."""
    s = _as_node(s, None)
    if isinstance(e, tc.Node):
        e = tc.detach(e)
    e = _as_node(e, s.graph)
    if s.shape != e.shape:
        raise DimensionError(f"simulator output {s.shape} and target {e.shape} differ in shape")
    return tc.scale(tc.loss_reduce("frobenius", tc.sub(s, e)), 1.0 / _batch_size(s))


def loss_total(fp: tc.Node, simu: tc.Node, lam: float = 0.6) -> tc.Node:
    if lam < 0:
        raise ContractError(f"lambda must be non-negative, got {lam}")
    return tc.affine_combine(1.0, fp, lam, simu)

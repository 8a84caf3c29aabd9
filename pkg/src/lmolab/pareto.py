"""Robust Pareto frontier selection over (learning, forgetting) point clouds."""

import logging
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InvalidParameter

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ParetoConfig:
    """``c``: robustness margin; ``mode``: "loss" (lower is better) or "accuracy"."""

    c: float = 0.001
    mode: str = "loss"

    def __post_init__(self):
        if not self.c >= 0:
            raise InvalidParameter(f"c must be >= 0, got {self.c}")
        if self.mode not in ("loss", "accuracy"):
            raise InvalidParameter(f"mode must be 'loss' or 'accuracy', got {self.mode!r}")


def nondominated(xy):
    """Boolean mask of points no other point weakly dominates with one strict axis (minimization)."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    if xy.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    return np.asarray(kernels.nondominated_mask(np.ascontiguousarray(xy[:, 0]), np.ascontiguousarray(xy[:, 1])),
                      dtype=bool)


def robust_filter(xy, c):
    """Keep i iff for every other j: x_i <= x_j - c or y_i <= y_j - c (minimization)."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    x, y = xy[:, 0], xy[:, 1]
    ok = (x[:, None] <= x[None, :] - c) | (y[:, None] <= y[None, :] - c)
    np.fill_diagonal(ok, True)
    return ok.all(axis=1)


@dataclass
class FrontierResult:
    indices: list  # selected indices into the group's points
    stage1: list  # non-dominated indices
    fallback: bool


def frontier_indices(xy, cfg=None):
    """Two-stage selection for a single algorithm's points.

    Stage 1 is the classical non-dominated set; stage 2 applies the c-margin
    rule among the stage-1 points. If stage 2 removes everything, the stage-1
    point with minimal x (then minimal y) is returned and ``fallback`` is set.
    """
    cfg = cfg or ParetoConfig()
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    if xy.shape[0] == 0:
        return FrontierResult([], [], False)
    if cfg.mode == "accuracy":
        xy = -xy
    s1 = np.flatnonzero(nondominated(xy))
    keep = robust_filter(xy[s1], cfg.c)
    if keep.any():
        return FrontierResult([int(i) for i in s1[keep]], [int(i) for i in s1], False)
    order = np.lexsort((xy[s1, 1], xy[s1, 0]))
    return FrontierResult([int(s1[order[0]])], [int(i) for i in s1], True)


def _xy(p):
    if hasattr(p, "learn_metric"):
        return (p.learn_metric, p.forget_metric)
    return tuple(p)


def pareto_frontier(points, cfg=None, key=_xy, group=None):
    """Select the robust frontier of ``points`` separately for each algorithm.

    ``points`` are RunRecords (x = learn_metric, y = forget_metric) or (x, y)
    pairs; ``group`` maps a point to its algorithm (RunRecord.algo by default,
    a single group for plain pairs). Diverged or non-finite points are skipped.
    Returns the selected points in input order.
    """
    cfg = cfg or ParetoConfig()
    points = list(points)
    if group is None:
        def group(p):
            return getattr(p, "algo", None)
    groups = defaultdict(list)
    for i, p in enumerate(points):
        if getattr(p, "diverged", False):
            continue
        xy = key(p)
        if not np.all(np.isfinite(xy)):
            continue
        groups[group(p)].append(i)
    chosen = []
    for g, idx in groups.items():
        res = frontier_indices([key(points[i]) for i in idx], cfg)
        if res.fallback:
            log.info("pareto: c-filter emptied group %r; falling back to the min-x stage-1 point", g)
        chosen += [idx[j] for j in res.indices]
    return [points[i] for i in sorted(chosen)]

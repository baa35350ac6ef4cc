"""Terminal rewards: binary answer accuracy and an assignment-based point
reward for counting tasks, plus the minimum-cost assignment solver itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import KindTaskMismatch, NonFiniteCost
from .taskgen import QuestionKind, VisualTask


class RewardKind(Enum):
    ACCURACY = "accuracy"
    ACCURACY_PLUS_POINT = "accuracy_plus_point"


@dataclass(frozen=True)
class RewardConfig:
    kind: RewardKind = RewardKind.ACCURACY
    point_weight: float = 0.5  # weight of the point term in the mix
    match_radius: float = 48.0  # pixels, original frame

    def validate(self) -> None:
        from .errors import ConfigInvalid

        if not 0.0 <= self.point_weight <= 1.0:
            raise ConfigInvalid("point_weight must be in [0, 1]")
        if self.match_radius <= 0:
            raise ConfigInvalid("match_radius must be positive")


@dataclass
class Assignment:
    pairs: list[tuple[int, int]]  # (pred index, gt index), injective
    cost: float  # sum of matched pair costs


def accuracy_reward(traj, task: VisualTask) -> float:
    """1 iff the rollout terminated with the correct answer, else 0.

    For counting tasks answer_index encodes the count, so the comparison is
    uniform across kinds. Turn-limit terminations score 0.
    """
    from .rollout import Termination

    if traj.terminated_by is not Termination.ANSWER or traj.final_answer is None:
        return 0.0
    return 1.0 if traj.final_answer == task.answer_index else 0.0


_PAD_COST = 1e12


def hungarian(cost: np.ndarray) -> Assignment:
    """Minimum-total-cost injective assignment of min(n, m) pairs.

    O(N^3) augmenting-path (potentials) variant on a square matrix padded
    with a large finite cost; pad pairs are dropped from the result and do
    not contribute to the reported cost.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size and not np.isfinite(cost).all():
        raise NonFiniteCost("cost matrix contains non-finite entries")
    if cost.ndim != 2:
        if cost.size == 0:
            return Assignment([], 0.0)
        raise NonFiniteCost(f"expected 2-d cost matrix, got shape {cost.shape}")
    n, m = cost.shape
    if n == 0 or m == 0:
        return Assignment([], 0.0)
    size = max(n, m)
    c = np.full((size, size), _PAD_COST, dtype=np.float64)
    c[:n, :m] = cost

    # job[w] = row assigned to column w; column `size` is a virtual staging
    # slot for the row currently being inserted (augmenting-path search with
    # row/column potentials).
    inf = math.inf
    job = [-1] * (size + 1)
    pot_row = [0.0] * size
    pot_col = [0.0] * (size + 1)
    for row in range(size):
        w_cur = size
        job[w_cur] = row
        min_to = [inf] * size
        prev = [-1] * size
        in_tree = [False] * (size + 1)
        while job[w_cur] != -1:
            in_tree[w_cur] = True
            j = job[w_cur]
            delta = inf
            w_next = -1
            for w in range(size):
                if in_tree[w]:
                    continue
                reduced = c[j, w] - pot_row[j] - pot_col[w]
                if reduced < min_to[w]:
                    min_to[w] = reduced
                    prev[w] = w_cur
                if min_to[w] < delta:
                    delta = min_to[w]
                    w_next = w
            for w in range(size + 1):
                if in_tree[w]:
                    pot_row[job[w]] += delta
                    pot_col[w] -= delta
                elif w < size:
                    min_to[w] -= delta
            w_cur = w_next
        while w_cur != size:
            w = prev[w_cur]
            job[w_cur] = job[w]
            w_cur = w

    pairs = []
    total = 0.0
    for w in range(size):
        r = job[w]
        if 0 <= r < n and w < m:
            pairs.append((r, w))
            total += float(cost[r, w])
    pairs.sort()
    return Assignment(pairs, total)


def point_reward(
    pred: list[tuple[float, float]],
    gt: list[tuple[float, float]],
    match_radius: float,
) -> float:
    """Matched fraction under optimal assignment: a pair counts as matched
    iff its Euclidean distance is within match_radius; normalized by the
    larger cardinality so both missing and spurious points cost reward."""
    if not pred or not gt:
        return 0.0
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    d = np.sqrt(((p[:, None, :] - g[None, :, :]) ** 2).sum(axis=2))
    assign = hungarian(d)
    matched = sum(1 for i, j in assign.pairs if d[i, j] <= match_radius)
    return matched / max(len(pred), len(gt), 1)


def combined_reward(traj, task: VisualTask, cfg: RewardConfig) -> float:
    """ACCURACY -> binary accuracy; ACCURACY_PLUS_POINT -> convex mix of
    accuracy and the point reward (counting tasks only)."""
    acc = accuracy_reward(traj, task)
    if cfg.kind is RewardKind.ACCURACY:
        return acc
    if task.question_kind is not QuestionKind.COUNT:
        raise KindTaskMismatch("point reward requires a counting task")
    pt = point_reward(traj.points_original, task.gt_points, cfg.match_radius)
    lam = cfg.point_weight
    return (1.0 - lam) * acc + lam * pt

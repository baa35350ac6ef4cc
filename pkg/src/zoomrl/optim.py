"""Group-relative advantages, policy-gradient accumulation over multi-turn
trajectories, the optional clipped surrogate, and AdamW (ascent form).

Gradient semantics: advantages weight the sum of per-turn score terms; only
sampled actions contribute (visual/context entries never enter the loss).
With a single update per sampled batch the importance ratio is exactly 1,
so the clipped path coincides bitwise with the plain one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteGradient, ShapeMismatch
from .policy import PolicyParams, grad_logprob, logprob_of
from .rollout import RolloutGroup


def compute_advantages(rewards) -> np.ndarray:
    """advantage_g = r_g - mean(r); sums to zero up to rounding."""
    r = np.asarray(rewards, dtype=np.float64)
    return r - r.mean()


@dataclass
class GradAccum:
    grads: dict[str, np.ndarray]
    count: int = 0

    @classmethod
    def zeros(cls, params: PolicyParams) -> "GradAccum":
        return cls(params.zeros_like(), 0)

    def add_scaled(self, tree: dict[str, np.ndarray], scale: float) -> None:
        if tree.keys() != self.grads.keys():
            raise ShapeMismatch("gradient tree keys do not match accumulator")
        for k, v in tree.items():
            self.grads[k] += scale * v

    def mean(self) -> dict[str, np.ndarray]:
        n = max(self.count, 1)
        return {k: v / n for k, v in self.grads.items()}


def accumulate_group_grad(
    group: RolloutGroup, params: PolicyParams, acc: GradAccum
) -> None:
    """Add advantage-weighted score terms for every trajectory in the group.

    Features are the ones cached at rollout time; gradients are recomputed
    against the current params. Zero-advantage trajectories contribute
    exactly nothing (all-equal-reward groups leave the accumulator bitwise
    unchanged).
    """
    advantages = compute_advantages(group.rewards)
    for traj, adv in zip(group.trajectories, advantages):
        acc.count += 1
        if adv == 0.0:
            continue
        for record in traj.turns:
            for action, _ in record.atoms:
                acc.add_scaled(grad_logprob(params, record.feature, action), adv)


def clipped_surrogate_grad(
    group: RolloutGroup,
    params: PolicyParams,
    clip_ratio: float,
    acc: GradAccum,
) -> None:
    """PPO-style clipped objective gradient, one ratio per turn record.

    rho = exp(new_logprob - old_logprob) with old logprobs recorded at
    sampling time; each term contributes grad min(rho*A, clip(rho)*A). When
    params are unchanged since sampling, rho == 1 exactly and the result
    equals the unclipped accumulation.
    """
    lo, hi = 1.0 - clip_ratio, 1.0 + clip_ratio
    advantages = compute_advantages(group.rewards)
    for traj, adv in zip(group.trajectories, advantages):
        acc.count += 1
        if adv == 0.0:
            continue
        for record in traj.turns:
            old_lp = record.logprob
            new_lp = sum(
                logprob_of(params, record.feature, action)
                for action, _ in record.atoms
            )
            rho = math.exp(new_lp - old_lp)
            unclipped = rho * adv
            clipped = min(max(rho, lo), hi) * adv
            if unclipped <= clipped or lo <= rho <= hi:
                scale = rho * adv
            else:
                continue  # clipped flat region: zero gradient for this term
            for action, _ in record.atoms:
                acc.add_scaled(grad_logprob(params, record.feature, action), scale)


def surrogate_objective(
    group: RolloutGroup, params: PolicyParams, clip_ratio: float
) -> float:
    """Scalar clipped-surrogate value (what clipped_surrogate_grad climbs);
    exists for finite-difference verification."""
    lo, hi = 1.0 - clip_ratio, 1.0 + clip_ratio
    advantages = compute_advantages(group.rewards)
    total = 0.0
    for traj, adv in zip(group.trajectories, advantages):
        for record in traj.turns:
            new_lp = sum(
                logprob_of(params, record.feature, action)
                for action, _ in record.atoms
            )
            rho = math.exp(new_lp - record.logprob)
            total += min(rho * adv, min(max(rho, lo), hi) * adv)
    return total


@dataclass(frozen=True)
class AdamWConfig:
    learning_rate: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


@dataclass
class OptimState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros(cls, params: PolicyParams) -> "OptimState":
        return cls(params.zeros_like(), params.zeros_like(), 0)

    def to_jsonable(self) -> dict:
        return {
            "step": self.step,
            "m": {k: v.ravel().tolist() for k, v in self.m.items()},
            "v": {k: v.ravel().tolist() for k, v in self.v.items()},
            "shapes": {k: list(v.shape) for k, v in self.m.items()},
        }

    @classmethod
    def from_jsonable(cls, obj: dict) -> "OptimState":
        shapes = obj["shapes"]
        m = {
            k: np.asarray(obj["m"][k], dtype=np.float64).reshape(shapes[k])
            for k in obj["m"]
        }
        v = {
            k: np.asarray(obj["v"][k], dtype=np.float64).reshape(shapes[k])
            for k in obj["v"]
        }
        return cls(m, v, int(obj["step"]))


def adamw_step(
    params: PolicyParams,
    grad: dict[str, np.ndarray],
    state: OptimState,
    cfg: AdamWConfig,
) -> None:
    """Bias-corrected AdamW ascent step with decoupled weight decay.

    The gradient is of the maximization objective. Non-finite gradients
    reject the whole update (params and moments untouched).
    """
    if grad.keys() != params.arrays.keys():
        raise ShapeMismatch("gradient keys do not match params")
    for k, g in grad.items():
        if not np.isfinite(g).all():
            raise NonFiniteGradient(f"non-finite gradient in {k!r}")
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for k, g in grad.items():
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p = params.arrays[k]
        p += cfg.learning_rate * ((m / c1) / (np.sqrt(v / c2) + cfg.eps))
        if cfg.weight_decay:
            p -= cfg.learning_rate * cfg.weight_decay * p

"""A small stochastic policy: four independent categorical heads over
coordinate bins (grounding) plus one categorical head over answer choices,
with an optional shared tanh hidden layer.

Log-probabilities and gradients are exact and analytic; params are plain
float64 arrays in a keyed dict so the optimizer can treat them uniformly.
The per-axis bin independence deliberately allows disordered boxes: whether
a decoded box is valid is judged downstream, which is what makes the
valid-grounding-ratio metric meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyHistory, ShapeMismatch
from .geometry import BBox, Size

GROUND_AXES = 4


@dataclass(frozen=True)
class GroundAction:
    bx1: int
    by1: int
    bx2: int
    by2: int

    def bins(self) -> tuple[int, int, int, int]:
        return (self.bx1, self.by1, self.bx2, self.by2)


@dataclass(frozen=True)
class AnswerAction:
    choice: int


@dataclass(frozen=True)
class PolicySpec:
    feature_dim: int
    bins: int = 8
    choices: int = 4
    hidden: int = 64  # 0 disables the hidden layer (affine heads)
    init_scale: float = 0.01

    @property
    def head_dim(self) -> int:
        return self.hidden if self.hidden else self.feature_dim


@dataclass
class PolicyParams:
    spec: PolicySpec
    arrays: dict[str, np.ndarray]

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.spec, {k: v.copy() for k, v in self.arrays.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.arrays.items()}


def param_keys(spec: PolicySpec) -> list[str]:
    keys = ["hidden"] if spec.hidden else []
    for i in range(GROUND_AXES):
        keys += [f"ground_w{i}", f"ground_b{i}"]
    keys += ["answer_w", "answer_b"]
    return keys


def init_params(spec: PolicySpec, rng: np.random.Generator) -> PolicyParams:
    """Near-uniform initial behavior: tiny uniform weights, zero biases."""
    s = spec.init_scale
    d = spec.head_dim
    arrays: dict[str, np.ndarray] = {}
    if spec.hidden:
        arrays["hidden"] = rng.uniform(-s, s, size=(spec.hidden, spec.feature_dim))
    for i in range(GROUND_AXES):
        arrays[f"ground_w{i}"] = rng.uniform(-s, s, size=(spec.bins, d))
        arrays[f"ground_b{i}"] = np.zeros(spec.bins)
    arrays["answer_w"] = rng.uniform(-s, s, size=(spec.choices, d))
    arrays["answer_b"] = np.zeros(spec.choices)
    return PolicyParams(spec, arrays)


# --- feature construction ----------------------------------------------------


@dataclass(frozen=True)
class FeatureLayout:
    """Fixed layout of the conversation-state feature vector."""

    token_dim: int
    turn_slots: int = 2
    kinds: int = 2

    @property
    def dim(self) -> int:
        # two visual slots x (mean pool + max pool) + turn/kind one-hots +
        # normalized answer count
        return 4 * self.token_dim + self.turn_slots + self.kinds + 1


def pool_tokens(data: np.ndarray) -> np.ndarray:
    """(mean, max) pooling over a token grid -> length 2*dim vector."""
    return np.concatenate(
        [data.mean(axis=0, dtype=np.float64), data.max(axis=0).astype(np.float64)]
    )


def featurize(history, layout: FeatureLayout) -> np.ndarray:
    """Summarize a conversation state from its two most recent visual
    entries, plus a turn one-hot, a question-kind one-hot, and the
    normalized answer count.

    The first block is the pooled features of the older entry; the second
    block is the pooled DELTA of the newest entry against it (zero when
    only one visual exists, and zero whenever the newest entry merely
    re-presents the previous image, as the invalid-coordinates fallback
    does). Encoding the second slot as a difference keeps "nothing new was
    attached" indistinguishable from "no second image", which stops the
    fallback path from double-counting evidence that is already in the
    first slot.

    ``history`` needs: pooled_visuals (list of pooled vectors), current_turn
    (1-based), kind_index, n_answers.
    """
    pooled = history.pooled_visuals
    if not pooled:
        raise EmptyHistory("history has no visual entries")
    if len(pooled) == 1:
        first = pooled[0]
        second = np.zeros(2 * layout.token_dim)
    else:
        first = pooled[-2]
        second = pooled[-1] - pooled[-2]
    turn = np.zeros(layout.turn_slots)
    turn[min(history.current_turn, layout.turn_slots) - 1] = 1.0
    kind = np.zeros(layout.kinds)
    kind[history.kind_index] = 1.0
    return np.concatenate([first, second, turn, kind, [history.n_answers / 5.0]])


# --- distributions -----------------------------------------------------------


@dataclass
class Categorical:
    logits: np.ndarray  # (n,) float64

    def logprobs(self) -> np.ndarray:
        z = self.logits - self.logits.max()
        return z - np.log(np.exp(z).sum())

    def probs(self) -> np.ndarray:
        return np.exp(self.logprobs())


@dataclass
class Forward:
    """Cached forward pass: hidden activation plus per-head logits."""

    h: np.ndarray
    ground: list[Categorical] = field(default_factory=list)
    answer: Categorical | None = None


def _check_features(params: PolicyParams, f: np.ndarray) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (params.spec.feature_dim,):
        raise ShapeMismatch(
            f"feature vector {f.shape} != ({params.spec.feature_dim},)"
        )
    return f


def _hidden(params: PolicyParams, f: np.ndarray) -> np.ndarray:
    if params.spec.hidden:
        return np.tanh(params.arrays["hidden"] @ f)
    return f


def ground_distribution(params: PolicyParams, f: np.ndarray) -> list[Categorical]:
    f = _check_features(params, f)
    h = _hidden(params, f)
    return [
        Categorical(params.arrays[f"ground_w{i}"] @ h + params.arrays[f"ground_b{i}"])
        for i in range(GROUND_AXES)
    ]


def answer_distribution(params: PolicyParams, f: np.ndarray) -> Categorical:
    f = _check_features(params, f)
    h = _hidden(params, f)
    return Categorical(params.arrays["answer_w"] @ h + params.arrays["answer_b"])


def sample(dist: Categorical, rng: np.random.Generator | None, temperature: float = 1.0):
    """Draw an index from softmax(logits / temperature).

    temperature 0 means greedy (argmax; no rng consumed). The returned
    log-probability is always the temperature-1 value: temperature shapes
    exploration, not the optimized likelihood.
    """
    lp = dist.logprobs()
    if temperature == 0.0:
        idx = int(np.argmax(dist.logits))
        return idx, float(lp[idx])
    if temperature == 1.0:
        p = np.exp(lp)
    else:
        z = dist.logits / temperature
        z = z - z.max()
        p = np.exp(z)
        p /= p.sum()
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(p), u, side="right"))
    idx = min(idx, len(p) - 1)
    return idx, float(lp[idx])


def sample_ground(
    params: PolicyParams, f: np.ndarray, rng, temperature: float = 1.0
) -> tuple[GroundAction, float]:
    dists = ground_distribution(params, f)
    bins, logprob = [], 0.0
    for d in dists:
        b, lp = sample(d, rng, temperature)
        bins.append(b)
        logprob += lp
    return GroundAction(*bins), logprob


def sample_answer(
    params: PolicyParams, f: np.ndarray, rng, temperature: float = 1.0
) -> tuple[AnswerAction, float]:
    idx, lp = sample(answer_distribution(params, f), rng, temperature)
    return AnswerAction(idx), lp


def logprob_of(params: PolicyParams, f: np.ndarray, action) -> float:
    """Exact log-probability; grounding actions sum their four axis terms
    (the axes are modeled as independent)."""
    if isinstance(action, GroundAction):
        dists = ground_distribution(params, f)
        total = 0.0
        for d, b in zip(dists, action.bins()):
            if not 0 <= b < params.spec.bins:
                raise ShapeMismatch(f"bin {b} out of range")
            total += float(d.logprobs()[b])
        return total
    if isinstance(action, AnswerAction):
        if not 0 <= action.choice < params.spec.choices:
            raise ShapeMismatch(f"choice {action.choice} out of range")
        return float(answer_distribution(params, f).logprobs()[action.choice])
    raise ShapeMismatch(f"unknown action type {type(action)!r}")


def grad_logprob(params: PolicyParams, f: np.ndarray, action) -> dict[str, np.ndarray]:
    """Analytic gradient of logprob_of w.r.t. every parameter array.

    Only the heads the action touches get nonzero blocks; the hidden layer
    accumulates the chain-rule term from those heads.
    """
    f = _check_features(params, f)
    h = _hidden(params, f)
    grad = params.zeros_like()
    dh = np.zeros_like(h)

    def head(prefix_w: str, prefix_b: str, w: np.ndarray, b: np.ndarray, idx: int):
        nonlocal dh
        logits = w @ h + b
        z = logits - logits.max()
        p = np.exp(z)
        p /= p.sum()
        delta = -p
        delta[idx] += 1.0
        grad[prefix_w] += np.outer(delta, h)
        grad[prefix_b] += delta
        dh = dh + w.T @ delta

    if isinstance(action, GroundAction):
        for i, b in enumerate(action.bins()):
            if not 0 <= b < params.spec.bins:
                raise ShapeMismatch(f"bin {b} out of range")
            head(
                f"ground_w{i}",
                f"ground_b{i}",
                params.arrays[f"ground_w{i}"],
                params.arrays[f"ground_b{i}"],
                b,
            )
    elif isinstance(action, AnswerAction):
        if not 0 <= action.choice < params.spec.choices:
            raise ShapeMismatch(f"choice {action.choice} out of range")
        head("answer_w", "answer_b", params.arrays["answer_w"], params.arrays["answer_b"], action.choice)
    else:
        raise ShapeMismatch(f"unknown action type {type(action)!r}")

    if params.spec.hidden:
        dpre = (1.0 - h * h) * dh
        grad["hidden"] += np.outer(dpre, f)
    return grad


def decode_ground_action(action: GroundAction, frame: Size, bins: int) -> BBox:
    """Bin tuple -> raw box in ``frame``: x1 = bx1*(w/B), x2 = (bx2+1)*(w/B).

    No reordering: reversed or degenerate tuples surface as INVALID
    downstream, by design.
    """
    cw = frame.width / bins
    ch = frame.height / bins
    return BBox(
        action.bx1 * cw,
        action.by1 * ch,
        (action.bx2 + 1) * cw,
        (action.by2 + 1) * ch,
    )


# --- checkpoint (de)serialization -------------------------------------------


def params_to_jsonable(params: PolicyParams) -> dict:
    spec = params.spec
    return {
        "feature_dim": spec.feature_dim,
        "bins": spec.bins,
        "choices": spec.choices,
        "hidden": spec.hidden,
        "init_scale": spec.init_scale,
        "arrays": {k: v.ravel().tolist() for k, v in params.arrays.items()},
        "shapes": {k: list(v.shape) for k, v in params.arrays.items()},
    }


def params_from_jsonable(obj: dict) -> PolicyParams:
    spec = PolicySpec(
        feature_dim=obj["feature_dim"],
        bins=obj["bins"],
        choices=obj["choices"],
        hidden=obj["hidden"],
        init_scale=obj.get("init_scale", 0.01),
    )
    arrays = {
        k: np.asarray(obj["arrays"][k], dtype=np.float64).reshape(obj["shapes"][k])
        for k in obj["arrays"]
    }
    return PolicyParams(spec, arrays)

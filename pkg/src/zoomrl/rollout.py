"""Multi-turn rollout state machine, group sampling, and transcript
render/parse.

Two modes:

* ``multiturn`` — the fixed grounding template: turn 1 samples coordinates,
  the validity check either crops the original full-resolution image (then
  budget-resizes the crop) or falls back to re-presenting the resized
  original, and turn 2 answers. A generalized schedule (max_turns > 2)
  repeats grounding turns and answers at ``answer_turn``; exhausting the
  turn budget terminates with no answer.
* ``singleturn`` — the baseline: coordinates and answer are sampled from
  the same feature vector in one turn, coordinates recorded for the
  validity metric but never acted on.

Rollouts never abort: malformed boxes degrade to the fallback.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .errors import BadLetter, BadShape, NoBoxedAnswer, NoJsonFound
from .geometry import (
    BBox,
    IntRect,
    Size,
    ValidityVerdict,
    clamp_and_round_crop_rect,
    remap_to_original,
    validate_bbox,
)
from .imaging import ImageBuffer, ImagingConfig, PatchTokens, align_to_grid, resize_to_budget, tokenize
from .policy import (
    AnswerAction,
    FeatureLayout,
    GroundAction,
    PolicyParams,
    decode_ground_action,
    featurize,
    pool_tokens,
    sample_answer,
    sample_ground,
)
from .rng import member_stream
from .taskgen import QuestionKind, VisualTask


class Mode(Enum):
    MULTITURN = "multiturn"
    SINGLETURN = "singleturn"


class Provenance(Enum):
    ORIGINAL = "ORIGINAL"
    RESIZED = "RESIZED"
    CROP = "CROP"


class Termination(Enum):
    ANSWER = "ANSWER"
    TURN_LIMIT = "TURN_LIMIT"


@dataclass
class VisualEntry:
    image: ImageBuffer
    frame: Size
    provenance: Provenance
    source_rect: Optional[IntRect] = None  # CROP only, original-frame pixels
    tokens: Optional[PatchTokens] = None
    pooled: Optional[np.ndarray] = None


@dataclass
class ActionEntry:
    action: object
    logprob: float
    turn: int


@dataclass
class ConversationState:
    """Alternating visual/action history plus the featurizer's view of it."""

    entries: list = field(default_factory=list)
    kind_index: int = 0
    n_answers: int = 4
    current_turn: int = 1

    @property
    def pooled_visuals(self) -> list[np.ndarray]:
        return [e.pooled for e in self.entries if isinstance(e, VisualEntry)]

    def visuals(self) -> list[VisualEntry]:
        return [e for e in self.entries if isinstance(e, VisualEntry)]


@dataclass
class TurnRecord:
    """One conversation turn: the feature vector it was conditioned on and
    the primitive actions emitted (several for composite outputs)."""

    turn: int
    feature: np.ndarray
    atoms: list[tuple[object, float]]

    @property
    def logprob(self) -> float:
        return sum(lp for _, lp in self.atoms)

    def feature_digest(self) -> str:
        return hashlib.sha1(
            np.ascontiguousarray(self.feature, dtype=np.float64).tobytes()
        ).hexdigest()[:12]


@dataclass
class Trajectory:
    task_id: str
    mode: Mode
    turns: list[TurnRecord]
    k_g: int
    final_answer: Optional[int]
    terminated_by: Termination
    ground_action: Optional[GroundAction] = None
    ground_bbox_input: Optional[BBox] = None
    input_size: Optional[Size] = None
    validity: Optional[ValidityVerdict] = None
    grounding_bbox_original: Optional[BBox] = None
    crop_rect: Optional[IntRect] = None
    points_original: list = field(default_factory=list)
    state: Optional[ConversationState] = None  # in-memory only, not logged


@dataclass
class RolloutGroup:
    task_id: str
    trajectories: list[Trajectory]
    rewards: list[float]
    baseline: float


@dataclass(frozen=True)
class RunCfg:
    imaging: ImagingConfig = ImagingConfig()
    bins: int = 8
    max_turns: int = 2
    answer_turn: Optional[int] = None  # defaults to max_turns
    temperature: float = 1.0
    min_crop_side: int = 8
    layout: FeatureLayout = FeatureLayout(token_dim=6)
    # Debug hook: maps a task to the GroundAction to emit instead of
    # sampling (used by tests and the oracle-forced evaluation mode).
    ground_override: Optional[Callable[[VisualTask], GroundAction]] = None

    @property
    def effective_answer_turn(self) -> int:
        return self.answer_turn if self.answer_turn is not None else self.max_turns


class TaskBundle:
    """A task plus its original image and cached model input.

    The original may be passed as a zero-arg factory; it materializes on
    first access (rollouts touch it only when a valid box triggers a crop).
    When the factory exposes a uint8 raster (``raster`` attribute), crops
    convert just the sliced region instead of the whole image; the float
    values are identical either way (same per-element quantized mapping).
    """

    def __init__(
        self,
        task: VisualTask,
        original,
        input_entry: VisualEntry,
        input_scale: float,
        raster_fn=None,
    ):
        self.task = task
        self.input_entry = input_entry
        self.input_scale = input_scale
        self._raster_fn = raster_fn
        if callable(original):
            self._original_fn = original
            self._original = None
        else:
            self._original_fn = None
            self._original = original

    @property
    def original(self) -> ImageBuffer:
        if self._original is None:
            self._original = self._original_fn()
        return self._original

    def crop_original(self, rect: IntRect) -> ImageBuffer:
        """Full-resolution crop of the original at ``rect``."""
        if self._original is None and self._raster_fn is not None:
            raw = self._raster_fn()[rect.y1 : rect.y2, rect.x1 : rect.x2]
            return ImageBuffer(
                np.ascontiguousarray(raw).astype(np.float32) * np.float32(1.0 / 255.0)
            )
        return self.original.crop(rect)


def _visual_entry(
    img: ImageBuffer,
    provenance: Provenance,
    icfg: ImagingConfig,
    source_rect: Optional[IntRect] = None,
) -> VisualEntry:
    tokens = tokenize(img, icfg)
    return VisualEntry(
        image=img,
        frame=img.size,
        provenance=provenance,
        source_rect=source_rect,
        tokens=tokens,
        pooled=pool_tokens(tokens.data),
    )


def prepare_input(original: ImageBuffer, icfg: ImagingConfig) -> tuple[VisualEntry, float]:
    """Budget-resize (and grid-align) the original into the model input."""
    resized, scale = resize_to_budget(original, icfg.max_pixels, icfg.align)
    resized = align_to_grid(resized, icfg.cell)
    prov = Provenance.RESIZED if resized.size != original.size else Provenance.ORIGINAL
    return _visual_entry(resized, prov, icfg), scale


def make_bundle(task: VisualTask, original: ImageBuffer, icfg: ImagingConfig) -> TaskBundle:
    entry, scale = prepare_input(original, icfg)
    return TaskBundle(task, original, entry, scale)


def finish_crop(crop: ImageBuffer, icfg: ImagingConfig) -> ImageBuffer:
    """Budget-resize then grid-align a freshly sliced crop."""
    crop, _ = resize_to_budget(crop, icfg.max_pixels, icfg.align)
    return align_to_grid(crop, icfg.cell)


def crop_from_original(
    original: ImageBuffer, rect: IntRect, icfg: ImagingConfig
) -> ImageBuffer:
    """The canonical crop pipeline: slice the full-resolution original,
    budget-resize, grid-align. Tests recompute this independently when
    checking crop provenance."""
    return finish_crop(original.crop(rect), icfg)


def _kind_index(task: VisualTask) -> int:
    return 0 if task.question_kind is QuestionKind.NEEDLE_CHOICE else 1


def _n_answers(task: VisualTask, run_cfg: RunCfg) -> int:
    return len(task.choices) if task.choices else 0


def _new_state(bundle: TaskBundle, run_cfg: RunCfg, n_answers: int) -> ConversationState:
    state = ConversationState(
        entries=[bundle.input_entry],
        kind_index=_kind_index(bundle.task),
        n_answers=n_answers,
    )
    return state


def _ground_turn(
    params: PolicyParams,
    bundle: TaskBundle,
    state: ConversationState,
    run_cfg: RunCfg,
    rng,
) -> tuple[TurnRecord, GroundAction, BBox, ValidityVerdict, Optional[BBox], Optional[IntRect]]:
    """Sample coordinates, validate, and extend the history with either the
    crop or the fallback visual."""
    icfg = run_cfg.imaging
    f = featurize(state, run_cfg.layout)
    if run_cfg.ground_override is not None:
        action = run_cfg.ground_override(bundle.task)
        from .policy import logprob_of

        logprob = logprob_of(params, f, action)
    else:
        action, logprob = sample_ground(params, f, rng, run_cfg.temperature)
    record = TurnRecord(state.current_turn, f, [(action, logprob)])

    input_frame = bundle.input_entry.frame
    bbox_input = decode_ground_action(action, input_frame, run_cfg.bins)
    verdict = validate_bbox(bbox_input, input_frame)
    bbox_original = None
    rect = None
    if verdict:
        bbox_original = remap_to_original(bbox_input, input_frame, bundle.task.original_size)
        rect = clamp_and_round_crop_rect(
            bbox_original, bundle.task.original_size, run_cfg.min_crop_side
        )
        crop = finish_crop(bundle.crop_original(rect), icfg)
        next_visual = _visual_entry(crop, Provenance.CROP, icfg, source_rect=rect)
    else:
        # Invalid coordinates: the (resized) original is returned.
        next_visual = VisualEntry(
            image=bundle.input_entry.image,
            frame=bundle.input_entry.frame,
            provenance=bundle.input_entry.provenance,
            tokens=bundle.input_entry.tokens,
            pooled=bundle.input_entry.pooled,
        )
    state.entries.append(ActionEntry(action, logprob, state.current_turn))
    state.entries.append(next_visual)
    state.current_turn += 1
    return record, action, bbox_input, verdict, bbox_original, rect


def _count_points(
    params: PolicyParams,
    f: np.ndarray,
    bundle: TaskBundle,
    run_cfg: RunCfg,
    rng,
) -> tuple[list[tuple[object, float]], list[tuple[float, float]]]:
    """Counting template: one point proposal per ground-truth object,
    decoded as the emitted box's center remapped to the original frame."""
    task = bundle.task
    input_frame = bundle.input_entry.frame
    w_ori, h_ori = task.original_size
    sx = w_ori / input_frame.width
    sy = h_ori / input_frame.height
    atoms: list[tuple[object, float]] = []
    points: list[tuple[float, float]] = []
    for _ in range(task.gt_count):
        action, lp = sample_ground(params, f, rng, run_cfg.temperature)
        atoms.append((action, lp))
        box = decode_ground_action(action, input_frame, run_cfg.bins)
        cx = 0.5 * (box.x1 + box.x2) * sx
        cy = 0.5 * (box.y1 + box.y2) * sy
        if 0.0 <= cx < w_ori and 0.0 <= cy < h_ori:
            points.append((cx, cy))
    return atoms, points


def run_multiturn_rollout(
    params: PolicyParams, bundle: TaskBundle, run_cfg: RunCfg, rng
) -> Trajectory:
    """The crop-and-continue template over the configured turn schedule."""
    task = bundle.task
    n_answers = params.spec.choices
    state = _new_state(bundle, run_cfg, n_answers)
    turns: list[TurnRecord] = []
    ground_action = None
    bbox_input = None
    verdict = None
    bbox_original = None
    rect = None
    final_answer = None
    points: list[tuple[float, float]] = []
    terminated = Termination.TURN_LIMIT

    for turn in range(1, run_cfg.max_turns + 1):
        if turn == run_cfg.effective_answer_turn:
            f = featurize(state, run_cfg.layout)
            if task.question_kind is QuestionKind.COUNT:
                atoms, points = _count_points(params, f, bundle, run_cfg, rng)
                answer, lp = sample_answer(params, f, rng, run_cfg.temperature)
                atoms.append((answer, lp))
                record = TurnRecord(state.current_turn, f, atoms)
            else:
                answer, lp = sample_answer(params, f, rng, run_cfg.temperature)
                record = TurnRecord(state.current_turn, f, [(answer, lp)])
            turns.append(record)
            state.entries.append(ActionEntry(answer, lp, state.current_turn))
            final_answer = answer.choice
            terminated = Termination.ANSWER
            break
        record, action, box_in, v, box_ori, r = _ground_turn(
            params, bundle, state, run_cfg, rng
        )
        turns.append(record)
        if ground_action is None:
            ground_action, bbox_input, verdict, bbox_original, rect = (
                action,
                box_in,
                v,
                box_ori,
                r,
            )

    return Trajectory(
        task_id=task.task_id,
        mode=Mode.MULTITURN,
        turns=turns,
        k_g=len(turns),
        final_answer=final_answer,
        terminated_by=terminated,
        ground_action=ground_action,
        ground_bbox_input=bbox_input,
        input_size=bundle.input_entry.frame,
        validity=verdict,
        grounding_bbox_original=bbox_original,
        crop_rect=rect,
        points_original=points,
        state=state,
    )


def run_singleturn_rollout(
    params: PolicyParams, bundle: TaskBundle, run_cfg: RunCfg, rng
) -> Trajectory:
    """Baseline: coordinates then answer from the same feature vector, one
    turn, no crop; the coordinates only feed the validity metric."""
    task = bundle.task
    state = _new_state(bundle, run_cfg, params.spec.choices)
    f = featurize(state, run_cfg.layout)

    input_frame = bundle.input_entry.frame
    atoms: list[tuple[object, float]] = []
    points: list[tuple[float, float]] = []
    if task.question_kind is QuestionKind.COUNT:
        point_atoms, points = _count_points(params, f, bundle, run_cfg, rng)
        atoms.extend(point_atoms)
        ground_action = point_atoms[0][0] if point_atoms else None
    else:
        if run_cfg.ground_override is not None:
            from .policy import logprob_of

            ground_action = run_cfg.ground_override(task)
            atoms.append((ground_action, logprob_of(params, f, ground_action)))
        else:
            ground_action, lp_g = sample_ground(params, f, rng, run_cfg.temperature)
            atoms.append((ground_action, lp_g))
    answer, lp_a = sample_answer(params, f, rng, run_cfg.temperature)
    atoms.append((answer, lp_a))

    bbox_input = None
    verdict = None
    bbox_original = None
    if ground_action is not None:
        bbox_input = decode_ground_action(ground_action, input_frame, run_cfg.bins)
        verdict = validate_bbox(bbox_input, input_frame)
        if verdict:
            bbox_original = remap_to_original(
                bbox_input, input_frame, task.original_size
            )

    record = TurnRecord(1, f, atoms)
    state.entries.append(ActionEntry(answer, lp_a, 1))
    return Trajectory(
        task_id=task.task_id,
        mode=Mode.SINGLETURN,
        turns=[record],
        k_g=1,
        final_answer=answer.choice,
        terminated_by=Termination.ANSWER,
        ground_action=ground_action,
        ground_bbox_input=bbox_input,
        input_size=input_frame,
        validity=verdict,
        grounding_bbox_original=bbox_original,
        crop_rect=None,
        points_original=points,
        state=state,
    )


def run_rollout(
    params: PolicyParams, bundle: TaskBundle, mode: Mode, run_cfg: RunCfg, rng
) -> Trajectory:
    if mode is Mode.MULTITURN:
        return run_multiturn_rollout(params, bundle, run_cfg, rng)
    return run_singleturn_rollout(params, bundle, run_cfg, rng)


def run_group(
    params: PolicyParams,
    bundle: TaskBundle,
    group_size: int,
    mode: Mode,
    run_cfg: RunCfg,
    reward_cfg,
    group_seed: int,
) -> RolloutGroup:
    """G independent rollouts on per-member derived streams (seed xor g),
    scored and baselined with the in-group mean reward."""
    from .rewards import combined_reward

    if group_size < 2:
        raise ValueError("group size must be >= 2")
    trajectories = [
        run_rollout(params, bundle, mode, run_cfg, member_stream(group_seed, g))
        for g in range(group_size)
    ]
    rewards = [combined_reward(t, bundle.task, reward_cfg) for t in trajectories]
    baseline = float(np.mean(rewards))
    return RolloutGroup(bundle.task.task_id, trajectories, rewards, baseline)


# --- transcripts -------------------------------------------------------------

_GROUND_PROMPT = (
    "Output the coordinates of the key image area relevant to the problem "
    "in JSON format."
)
_ANSWER_PROMPT = "Put the answer letter (A, B, C, D, or E) within \\boxed{}."


def question_text(task: VisualTask) -> str:
    if task.question_kind is QuestionKind.COUNT:
        return "How many solid marker squares does the image contain?"
    lettered = "  ".join(
        f"{chr(65 + i)}) {name}" for i, name in enumerate(task.choices)
    )
    return f"Which color family does the hidden patterned glyph use? {lettered}"


def _fmt_box(b: BBox) -> str:
    return json.dumps({"bbox_2d": [b.x1, b.y1, b.x2, b.y2]})


def _answer_text(traj: Trajectory, task: VisualTask) -> str:
    if traj.final_answer is None:
        return "(no final answer: turn limit reached)"
    if task.question_kind is QuestionKind.COUNT:
        # count answers are rendered as the count value itself
        lo = task.gt_count - task.answer_index
        return f"\\boxed{{{lo + traj.final_answer}}}"
    return f"\\boxed{{{chr(65 + traj.final_answer)}}}"


def render_transcript(traj: Trajectory, task: VisualTask) -> str:
    """Human-readable dialogue: grounding turn(s) with the JSON coordinate
    payload and the tool response, then the boxed final answer."""
    w, h = traj.input_size if traj.input_size else task.original_size
    lines = [
        f"[task {task.task_id}]",
        "=== turn 1 ===",
        f"[user] <image {w}x{h}> {question_text(task)}",
        f"[user] {_GROUND_PROMPT}",
    ]
    if traj.mode is Mode.SINGLETURN:
        lines.append(f"[user] {_ANSWER_PROMPT}")
        payload = []
        if traj.ground_bbox_input is not None:
            payload.append(_fmt_box(traj.ground_bbox_input))
        payload.append(_answer_text(traj, task))
        lines.append("[assistant] " + " ".join(payload))
        return "\n".join(lines) + "\n"

    lines.append(
        "[assistant] "
        + (_fmt_box(traj.ground_bbox_input) if traj.ground_bbox_input else "(no coordinates)")
    )
    if traj.validity and traj.crop_rect is not None:
        r = traj.crop_rect
        lines.append(
            f"[tool] cropped region [{r.x1}, {r.y1}, {r.x2}, {r.y2}] of the "
            "original image is attached"
        )
    else:
        reason = traj.validity.reason.value if traj.validity else "MISSING"
        lines.append(
            f"[tool] coordinates invalid ({reason}); the original image is returned"
        )
    lines += [
        "=== turn 2 ===",
        f"[user] <image> {question_text(task)}",
        f"[user] {_ANSWER_PROMPT}",
        f"[assistant] {_answer_text(traj, task)}",
    ]
    return "\n".join(lines) + "\n"


def parse_coordinates_json(text: str) -> BBox:
    """First JSON object carrying a 4-number "bbox_2d" array, unvalidated."""
    found_key = False
    for start in range(len(text)):
        if text[start] != "{":
            continue
        depth = 0
        for end in range(start, len(text)):
            if text[end] == "{":
                depth += 1
            elif text[end] == "}":
                depth -= 1
                if depth == 0:
                    chunk = text[start : end + 1]
                    try:
                        obj = json.loads(chunk)
                    except json.JSONDecodeError:
                        break
                    if isinstance(obj, dict) and "bbox_2d" in obj:
                        found_key = True
                        arr = obj["bbox_2d"]
                        if (
                            isinstance(arr, list)
                            and len(arr) == 4
                            and all(isinstance(v, (int, float)) for v in arr)
                        ):
                            return BBox(*[float(v) for v in arr])
                        raise BadShape(f"bbox_2d is not a 4-number array: {arr!r}")
                    break
        if found_key:
            break
    raise NoJsonFound("no JSON object with bbox_2d found")


_BOXED = re.compile(r"\\boxed\{([^{}]*)\}")


def parse_boxed_answer(text: str) -> str:
    """Last \\boxed{X} with X one of A-E."""
    matches = _BOXED.findall(text)
    if not matches:
        raise NoBoxedAnswer("no \\boxed{} answer found")
    letter = matches[-1].strip()
    if letter not in ("A", "B", "C", "D", "E"):
        raise BadLetter(f"boxed answer {letter!r} is not a letter A-E")
    return letter


def trajectory_record(traj: Trajectory, reward: Optional[float] = None) -> dict:
    """Flat JSONL form of a trajectory for the rollout log."""
    atoms = []
    for rec in traj.turns:
        for action, lp in rec.atoms:
            if isinstance(action, GroundAction):
                desc = {"kind": "ground", "bins": list(action.bins())}
            else:
                desc = {"kind": "answer", "choice": action.choice}
            desc["turn"] = rec.turn
            desc["logprob"] = lp
            atoms.append(desc)
    return {
        "task_id": traj.task_id,
        "mode": traj.mode.value,
        "k_g": traj.k_g,
        "terminated_by": traj.terminated_by.value,
        "final_answer": traj.final_answer,
        "validity": (
            None
            if traj.validity is None
            else (traj.validity.valid or traj.validity.reason.value)
        ),
        "feature_digests": [rec.feature_digest() for rec in traj.turns],
        "actions": atoms,
        "reward": reward,
    }

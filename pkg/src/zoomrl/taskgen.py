"""Seeded generators for synthetic high-resolution visual-search tasks.

Needle tasks hide one patterned glyph among achromatic distractors on a
noisy gray background. A glyph is a two-color pattern whose colors average
to the background gray, so area-average downsampling erases it: the class
is only readable at (or near) full resolution. A faint background wash (the
"hint") leans toward one class color and is correct with fixed probability;
it survives any amount of downsampling, which is what makes the tasks
partially answerable without cropping and fully answerable with a good
crop.

Counting tasks place N solid-color squares; the global channel means carry
the count at any resolution, and ground-truth point annotations are
recorded for assignment-based rewards.

Everything is a pure function of (config seed, task index) via counter-based
streams: regenerating a task is cheaper than storing it.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np

from .errors import KindTaskMismatch, MalformedRecord, PlacementFailure
from .geometry import BBox, Size, validate_bbox
from .imaging import ImageBuffer, read_ppm, write_ppm
from .rng import stream


class QuestionKind(Enum):
    NEEDLE_CHOICE = "NEEDLE_CHOICE"
    COUNT = "COUNT"


class _Abstain:
    def __repr__(self) -> str:
        return "ABSTAIN"

    def __bool__(self) -> bool:
        return False


#: Sentinel returned by the oracle when no class signature is detectable.
ABSTAIN = _Abstain()

# Oracle color-match tolerance (L-inf) and detection threshold on the
# matched-fraction score. Alphabet palettes are spaced > 2x the tolerance
# apart so signatures never cross-fire between alphabets. The oracle reads
# the image at ORACLE_CELL-pixel mean granularity (the same acuity as the
# default featurizer cell), so detail destroyed for the policy is destroyed
# for the adjudicator too.
MATCH_TOL = 0.06
DETECT_THRESHOLD = 0.18
ORACLE_CELL = 4

BACKGROUND = 0.5
NOISE_BLOCK = 8
NOISE_AMP = 0.04


@dataclass(frozen=True)
class Alphabet:
    """A glyph family: pattern shape, class color pairs, hint behavior.

    The "hint" is a handful of solid marker dots in a muted class color.
    Solid color survives any area-average downsample, so the hint is
    readable at every budget; it points at the right class only with
    probability hint_reliability, which caps how far a policy can get
    without cropping. Marker amplitude sits well below glyph amplitude so
    a crop that actually contains the target overrides the hint through
    the same max-pooled color channels.
    """

    name: str
    pattern: str  # "checker" | "stripes"
    class_names: tuple[str, ...]
    pairs: tuple[tuple[tuple[float, float, float], tuple[float, float, float]], ...]
    hint_reliability: float = 0.45
    hint_dots: int = 12
    dot_amplitude: float = 0.15
    # Distractor gray pairs sit close to the background so that crop-level
    # max-pooled features deviate from the full-image ones only when the
    # target glyph or a marker dot is in the crop.
    distractor_levels: tuple[tuple[float, float], ...] = (
        (0.58, 0.42),
        (0.56, 0.44),
        (0.60, 0.40),
    )
    count_color: tuple[float, float, float] = (0.95, 0.5, 0.5)

    def class_direction(self, k: int) -> np.ndarray:
        """Unit-ish RGB direction of class k's amplitude channels."""
        p, q = self.pairs[k]
        d = np.asarray(p, dtype=np.float64) - np.asarray(q, dtype=np.float64)
        return d / np.abs(d).max()

    def dot_color(self, k: int) -> tuple[float, float, float]:
        c = BACKGROUND + self.dot_amplitude * self.class_direction(k)
        return tuple(float(v) for v in c)


def _pairs(amplitude: float):
    # Complementary pairs around mid-gray. Every pair swings luminance by
    # exactly 2*amplitude/3, so the per-cell contrast feature carries no
    # class information once the colors themselves are averaged away (the
    # fourth class trades a third channel down instead of using pure gray,
    # which would triple the luminance swing and leak through contrast).
    lo, hi = 0.5 - amplitude, 0.5 + amplitude
    return (
        ((hi, 0.5, 0.5), (lo, 0.5, 0.5)),
        ((0.5, hi, 0.5), (0.5, lo, 0.5)),
        ((0.5, 0.5, hi), (0.5, 0.5, lo)),
        ((hi, hi, lo), (lo, lo, hi)),
    )


ALPHABETS: dict[str, Alphabet] = {
    "primary": Alphabet(
        name="primary",
        pattern="checker",
        class_names=("red", "green", "blue", "yellow"),
        pairs=_pairs(0.45),
    ),
    "shifted": Alphabet(
        name="shifted",
        pattern="stripes",
        class_names=("red", "green", "blue", "yellow"),
        pairs=_pairs(0.30),
        dot_amplitude=0.14,
        count_color=(0.80, 0.5, 0.5),
    ),
}


@dataclass(frozen=True)
class GenConfig:
    image_size: Size = Size(1024, 1024)
    glyph_side: int = 32
    distractor_count: int = 12
    glyph_alphabet_id: str = "primary"
    count_range: tuple[int, int] = (1, 9)
    seed: int = 101

    def validate(self) -> None:
        from .errors import ConfigInvalid

        if self.glyph_side < 4 or self.glyph_side % 2 != 0:
            raise ConfigInvalid("glyph_side must be an even integer >= 4")
        if self.distractor_count < 0:
            raise ConfigInvalid("distractor_count must be >= 0")
        if self.glyph_alphabet_id not in ALPHABETS:
            raise ConfigInvalid(f"unknown alphabet {self.glyph_alphabet_id!r}")
        if not (1 <= self.count_range[0] <= self.count_range[1]):
            raise ConfigInvalid("count_range must satisfy 1 <= min <= max")
        w, h = self.image_size
        dots = ALPHABETS[self.glyph_alphabet_id].hint_dots
        max_glyphs = 1 + self.distractor_count + dots
        if self.count_range[1] + self.distractor_count > max_glyphs:
            max_glyphs = self.count_range[1] + self.distractor_count
        if w < self.glyph_side * 2 or h < self.glyph_side * 2:
            raise ConfigInvalid("image too small for glyph placement")
        # Loose capacity check: total glyph area under a third of the image.
        if max_glyphs * self.glyph_side**2 * 3 > w * h:
            raise ConfigInvalid("too many glyphs for the image size")


@dataclass
class VisualTask:
    task_id: str
    image_ref: Union[ImageBuffer, str, None]
    original_size: Size
    question_kind: QuestionKind
    choices: list[str]
    answer_index: int
    target_bbox: Optional[BBox] = None
    gt_points: list[tuple[float, float]] = field(default_factory=list)
    gt_count: int = 0
    alphabet_id: str = "primary"
    glyph_side: int = 32


# --- rendering helpers -----------------------------------------------------
#
# Rasters are built natively on the 8-bit grid (uint8), so generated pixels
# equal their PPM persistence exactly and originals cache at 3 bytes/pixel.
# The float contract (values in [0,1]) is v = u/255.


def _u8(color) -> np.ndarray:
    return np.rint(np.asarray(color, dtype=np.float64) * 255.0).astype(np.uint8)


def _glyph_patch_u8(pair, pattern: str, side: int) -> np.ndarray:
    p, q = _u8(pair[0]), _u8(pair[1])
    patch = np.empty((side, side, 3), dtype=np.uint8)
    half = side // 2
    if pattern == "checker":
        patch[:half, :half] = p
        patch[:half, half:] = q
        patch[half:, :half] = q
        patch[half:, half:] = p
    elif pattern == "stripes":
        patch[:half, :] = p
        patch[half:, :] = q
    else:
        raise ValueError(f"unknown pattern {pattern!r}")
    return patch


def _background_u8(size: Size, rng: np.random.Generator, base_rgb) -> np.ndarray:
    """Base color plus blocky achromatic noise, on the uint8 grid."""
    w, h = size
    base = np.rint(np.asarray(base_rgb, dtype=np.float64) * 255.0).astype(np.int16)
    bh = -(-h // NOISE_BLOCK)
    bw = -(-w // NOISE_BLOCK)
    amp = int(round(NOISE_AMP * 255.0))
    noise = rng.integers(-amp, amp + 1, size=(bh, bw), dtype=np.int16)
    # Compose at block resolution, then expand: base +- amp stays inside
    # [0, 255] for every palette (hint shifts are a few levels), so no clip.
    tile = np.clip(noise[:, :, None] + base[None, None, :], 0, 255).astype(np.uint8)
    img = np.repeat(np.repeat(tile, NOISE_BLOCK, axis=0), NOISE_BLOCK, axis=1)
    return np.ascontiguousarray(img[:h, :w])


def to_image(raster: np.ndarray) -> ImageBuffer:
    return ImageBuffer(raster.astype(np.float32) * np.float32(1.0 / 255.0))


def _place_rects(
    rng: np.random.Generator, size: Size, side: int, n: int, max_tries: int = 200
) -> list[tuple[int, int]]:
    """Non-overlapping top-left corners on the glyph-side lattice.

    Placement snaps to multiples of the glyph side so glyph patterns and
    marker dots stay phase-locked to the downsampling grid at the
    calibrated budgets.
    """
    lattice = side
    nx = (size.width - side) // lattice + 1
    ny = (size.height - side) // lattice + 1
    placed: list[tuple[int, int]] = []
    for _ in range(n):
        for attempt in range(max_tries):
            x = int(rng.integers(nx)) * lattice
            y = int(rng.integers(ny)) * lattice
            if all(
                x + side <= px or px + side <= x or y + side <= py or py + side <= y
                for px, py in placed
            ):
                placed.append((x, y))
                break
        else:
            raise PlacementFailure(
                f"could not place glyph {len(placed) + 1}/{n} in {size}"
            )
    return placed


# --- generators ------------------------------------------------------------


def render_needle(cfg: GenConfig, index: int) -> tuple[np.ndarray, VisualTask]:
    """Raster (uint8) plus metadata for one needle task."""
    cfg.validate()
    alpha = ALPHABETS[cfg.glyph_alphabet_id]
    rng = stream(cfg.seed, "needle", index)

    k = int(rng.integers(len(alpha.class_names)))
    hint_correct = rng.random() < alpha.hint_reliability
    if hint_correct:
        hint_class = k
    else:
        hint_class = (k + 1 + int(rng.integers(len(alpha.class_names) - 1))) % len(
            alpha.class_names
        )

    # slots: [target, distractors..., hint dots...]
    n_items = 1 + cfg.distractor_count + alpha.hint_dots
    corners = _place_rects(rng, cfg.image_size, cfg.glyph_side, n_items)
    img = _background_u8(cfg.image_size, rng, (BACKGROUND,) * 3)
    g = cfg.glyph_side
    for x, y in corners[1 : 1 + cfg.distractor_count]:
        level = alpha.distractor_levels[int(rng.integers(len(alpha.distractor_levels)))]
        pair = ((level[0],) * 3, (level[1],) * 3)
        img[y : y + g, x : x + g] = _glyph_patch_u8(pair, alpha.pattern, g)
    dot = _u8(alpha.dot_color(hint_class))
    for x, y in corners[1 + cfg.distractor_count :]:
        img[y : y + g, x : x + g] = dot
    tx, ty = corners[0]
    img[ty : ty + g, tx : tx + g] = _glyph_patch_u8(alpha.pairs[k], alpha.pattern, g)

    task = VisualTask(
        task_id=f"needle_{cfg.glyph_alphabet_id}_s{cfg.seed}_i{index}",
        image_ref=None,
        original_size=cfg.image_size,
        question_kind=QuestionKind.NEEDLE_CHOICE,
        choices=list(alpha.class_names),
        answer_index=k,
        target_bbox=BBox(float(tx), float(ty), float(tx + g), float(ty + g)),
        alphabet_id=cfg.glyph_alphabet_id,
        glyph_side=cfg.glyph_side,
    )
    return img, task


def gen_needle_task(cfg: GenConfig, index: int) -> VisualTask:
    """One target glyph among achromatic distractors; 4-way color-class
    question with a fixed canonical choice order."""
    raster, task = render_needle(cfg, index)
    task.image_ref = to_image(raster)
    return task


def render_count(cfg: GenConfig, index: int) -> tuple[np.ndarray, VisualTask]:
    """Raster (uint8) plus metadata for one counting task."""
    cfg.validate()
    alpha = ALPHABETS[cfg.glyph_alphabet_id]
    rng = stream(cfg.seed, "count", index)

    lo, hi = cfg.count_range
    count = lo + int(rng.integers(hi - lo + 1))
    corners = _place_rects(rng, cfg.image_size, cfg.glyph_side, count + cfg.distractor_count)
    img = _background_u8(cfg.image_size, rng, (BACKGROUND,) * 3)
    g = cfg.glyph_side
    for x, y in corners[count:]:
        level = alpha.distractor_levels[int(rng.integers(len(alpha.distractor_levels)))]
        pair = ((level[0],) * 3, (level[1],) * 3)
        img[y : y + g, x : x + g] = _glyph_patch_u8(pair, "checker", g)
    count_u8 = _u8(alpha.count_color)
    for x, y in corners[:count]:
        img[y : y + g, x : x + g] = count_u8

    points = [(x + g / 2.0, y + g / 2.0) for x, y in corners[:count]]
    task = VisualTask(
        task_id=f"count_{cfg.glyph_alphabet_id}_s{cfg.seed}_i{index}",
        image_ref=None,
        original_size=cfg.image_size,
        question_kind=QuestionKind.COUNT,
        choices=[],
        answer_index=count - lo,
        gt_points=points,
        gt_count=count,
        alphabet_id=cfg.glyph_alphabet_id,
        glyph_side=cfg.glyph_side,
    )
    return img, task


def gen_count_task(cfg: GenConfig, index: int) -> VisualTask:
    """N solid count-color squares plus achromatic distractors; the answer
    is the count, with centers recorded as ground-truth points."""
    raster, task = render_count(cfg, index)
    task.image_ref = to_image(raster)
    return task


# --- oracle ----------------------------------------------------------------


def _window_max_min_frac(
    mask_p: np.ndarray, mask_q: np.ndarray, win: int, stride: int
) -> float:
    """Max over windows of min(fraction matching P, fraction matching Q)."""
    h, w = mask_p.shape
    if h <= win and w <= win:
        return float(min(mask_p.mean(), mask_q.mean()))
    cp = np.zeros((h + 1, w + 1), dtype=np.int64)
    cq = np.zeros((h + 1, w + 1), dtype=np.int64)
    np.cumsum(np.cumsum(mask_p, axis=0), axis=1, out=cp[1:, 1:])
    np.cumsum(np.cumsum(mask_q, axis=0), axis=1, out=cq[1:, 1:])
    ys = list(range(0, max(h - win, 0) + 1, stride))
    xs = list(range(0, max(w - win, 0) + 1, stride))
    if ys[-1] != h - win and h - win > 0:
        ys.append(h - win)
    if xs[-1] != w - win and w - win > 0:
        xs.append(w - win)
    yi = np.asarray(ys)[:, None]
    xi = np.asarray(xs)[None, :]
    area = float(min(win, h) * min(win, w))

    def sums(c):
        return (
            c[yi + win, xi + win]
            - c[yi, xi + win]
            - c[yi + win, xi]
            + c[yi, xi]
        )

    frac = np.minimum(sums(cp), sums(cq)) / area
    return float(frac.max())


def _cell_means(px: np.ndarray, cell: int) -> np.ndarray:
    h, w = px.shape[:2]
    rows, cols = h // cell, w // cell
    if rows == 0 or cols == 0:
        return px.mean(axis=(0, 1), dtype=np.float64).astype(np.float32)[None, None, :]
    trimmed = px[: rows * cell, : cols * cell]
    return (
        trimmed.reshape(rows, cell, cols, cell, 3)
        .mean(axis=(1, 3), dtype=np.float64)
        .astype(np.float32)
    )


def oracle_answer(task: VisualTask, img: ImageBuffer, scale: float = 1.0):
    """Ground-truth adjudicator: the class whose two-color signature is
    detectable in ``img``, or ABSTAIN when nothing clears the threshold.

    ``scale`` is the pixel scale of ``img`` relative to the task's original
    frame (1.0 for the original or a full-resolution crop). Matching runs on
    ORACLE_CELL-pixel cell means scanned with glyph-sized windows, so a
    resize that mixes a glyph's colors below cell granularity leaves no
    detectable signature.
    """
    if task.question_kind is QuestionKind.COUNT:
        raise KindTaskMismatch("oracle adjudicates choice tasks only")
    alpha = ALPHABETS[task.alphabet_id]
    cells = _cell_means(img.pixels, ORACLE_CELL)
    win = max(1, int(round(task.glyph_side * scale / ORACLE_CELL)))
    stride = max(1, win // 2)
    best_k, best_score = -1, 0.0
    for k, (p, q) in enumerate(alpha.pairs):
        mp = np.abs(cells - np.asarray(p, dtype=np.float32)).max(axis=2) <= MATCH_TOL
        mq = np.abs(cells - np.asarray(q, dtype=np.float32)).max(axis=2) <= MATCH_TOL
        score = _window_max_min_frac(mp, mq, win, stride)
        if score > best_score:
            best_k, best_score = k, score
    if best_score >= DETECT_THRESHOLD:
        return best_k
    return ABSTAIN


# --- dataset persistence ---------------------------------------------------


def _task_record(task: VisualTask, image_rel: str) -> dict:
    return {
        "task_id": task.task_id,
        "kind": task.question_kind.value,
        "width": task.original_size.width,
        "height": task.original_size.height,
        "alphabet": task.alphabet_id,
        "glyph_side": task.glyph_side,
        "choices": task.choices,
        "answer_index": task.answer_index,
        "target_bbox": list(task.target_bbox.as_tuple()) if task.target_bbox else None,
        "gt_points": [list(p) for p in task.gt_points],
        "gt_count": task.gt_count,
        "image": image_rel,
    }


def save_dataset(tasks: Sequence[VisualTask], directory) -> None:
    """Write manifest.jsonl plus images/*.ppm under ``directory``."""
    directory = os.fspath(directory)
    os.makedirs(os.path.join(directory, "images"), exist_ok=True)
    lines = []
    for task in tasks:
        rel = os.path.join("images", f"{task.task_id}.ppm")
        img = task.image_ref
        if isinstance(img, str):
            img = read_ppm(os.path.join(directory, img))
        if not isinstance(img, ImageBuffer):
            raise KindTaskMismatch(f"task {task.task_id} has no image to save")
        write_ppm(img, os.path.join(directory, rel))
        lines.append(json.dumps(_task_record(task, rel)))
    with open(os.path.join(directory, "manifest.jsonl"), "w") as f:
        for line in lines:
            f.write(line + "\n")


def load_dataset(directory) -> list[VisualTask]:
    """Read back a dataset directory; image_ref holds the relative path."""
    directory = os.fspath(directory)
    path = os.path.join(directory, "manifest.jsonl")
    tasks: list[VisualTask] = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise MalformedRecord(f"line {lineno}: {e}", line=lineno) from e
            try:
                kind = QuestionKind(rec["kind"])
                bbox = rec["target_bbox"]
                task = VisualTask(
                    task_id=rec["task_id"],
                    image_ref=rec["image"],
                    original_size=Size(int(rec["width"]), int(rec["height"])),
                    question_kind=kind,
                    choices=list(rec["choices"]),
                    answer_index=int(rec["answer_index"]),
                    target_bbox=BBox(*bbox) if bbox is not None else None,
                    gt_points=[tuple(p) for p in rec["gt_points"]],
                    gt_count=int(rec["gt_count"]),
                    alphabet_id=rec["alphabet"],
                    glyph_side=int(rec["glyph_side"]),
                )
            except (KeyError, TypeError, ValueError) as e:
                raise MalformedRecord(f"line {lineno}: {e}", line=lineno) from e
            tasks.append(task)
    return tasks


def load_task_image(directory, task: VisualTask) -> ImageBuffer:
    if isinstance(task.image_ref, ImageBuffer):
        return task.image_ref
    if isinstance(task.image_ref, str):
        return read_ppm(os.path.join(os.fspath(directory), task.image_ref))
    raise MalformedRecord(f"task {task.task_id} has no image reference")


def regenerate(cfg: GenConfig, kind: QuestionKind, index: int) -> VisualTask:
    """Rebuild a task (pixels included) from its generator coordinates."""
    if kind is QuestionKind.NEEDLE_CHOICE:
        return gen_needle_task(cfg, index)
    return gen_count_task(cfg, index)


def render(cfg: GenConfig, kind: QuestionKind, index: int):
    """Raster-level variant of :func:`regenerate` (uint8 raster, metadata)."""
    if kind is QuestionKind.NEEDLE_CHOICE:
        return render_needle(cfg, index)
    return render_count(cfg, index)


def verify_solvable(task: VisualTask) -> bool:
    """The defining invariant: the oracle answers the full-res target crop."""
    if task.question_kind is not QuestionKind.NEEDLE_CHOICE:
        return True
    img = task.image_ref
    assert isinstance(img, ImageBuffer) and task.target_bbox is not None
    assert validate_bbox(task.target_bbox, task.original_size)
    b = task.target_bbox
    crop = ImageBuffer(
        img.pixels[int(b.y1) : int(b.y2), int(b.x1) : int(b.x2)].copy()
    )
    return oracle_answer(task, crop, scale=1.0) == task.answer_index

"""Bounding-box and point arithmetic.

Boxes are half-open [x1, x2) x [y1, y2) on the pixel grid of a declared
frame. Raw boxes (e.g. decoded policy output) may be disordered or out of
bounds; validation is always explicit and never mutates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

from .errors import FrameTooSmall, InvalidInputBox


class Size(NamedTuple):
    width: int
    height: int

    @property
    def area(self) -> int:
        return self.width * self.height


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


class InvalidReason(Enum):
    OUT_OF_BOUNDS = "OUT_OF_BOUNDS"
    DEGENERATE_ORDER = "DEGENERATE_ORDER"
    NON_FINITE = "NON_FINITE"


@dataclass(frozen=True)
class ValidityVerdict:
    valid: bool
    reason: InvalidReason | None = None

    def __bool__(self) -> bool:
        return self.valid


VALID = ValidityVerdict(True)


def validate_bbox(b: BBox, frame: Size) -> ValidityVerdict:
    """Classify a raw box against its frame.

    VALID iff 0 <= x1 < x2 <= width and 0 <= y1 < y2 <= height (x2 = width
    is allowed: full-frame crops must be expressible). Exactly one verdict
    for any finite or non-finite input; never raises.
    """
    coords = b.as_tuple()
    if not all(math.isfinite(c) for c in coords):
        return ValidityVerdict(False, InvalidReason.NON_FINITE)
    if not (b.x1 < b.x2 and b.y1 < b.y2):
        return ValidityVerdict(False, InvalidReason.DEGENERATE_ORDER)
    if b.x1 < 0 or b.y1 < 0 or b.x2 > frame.width or b.y2 > frame.height:
        return ValidityVerdict(False, InvalidReason.OUT_OF_BOUNDS)
    return VALID


def remap_to_original(b: BBox, s_input: Size, s_ori: Size) -> BBox:
    """Rescale a box from the input frame to the original frame.

    x coordinates scale by width ratio, y by height ratio. The input box
    must be VALID in s_input; the result is VALID in s_ori.
    """
    if not validate_bbox(b, s_input):
        raise InvalidInputBox(
            f"box {b.as_tuple()} is not valid in frame {s_input}"
        )
    sx = s_ori.width / s_input.width
    sy = s_ori.height / s_input.height
    return BBox(b.x1 * sx, b.y1 * sy, b.x2 * sx, b.y2 * sy)


class IntRect(NamedTuple):
    """Integer pixel rectangle, half-open."""

    x1: int
    y1: int
    x2: int
    y2: int

    @property
    def width(self) -> int:
        return self.x2 - self.x1

    @property
    def height(self) -> int:
        return self.y2 - self.y1


def _expand_axis(lo: int, hi: int, limit: int, min_side: int) -> tuple[int, int]:
    # Grow symmetrically around the center until the side reaches min_side,
    # then shift back inside [0, limit].
    short = min_side - (hi - lo)
    if short > 0:
        lo -= short // 2
        hi += short - short // 2
    if lo < 0:
        hi -= lo
        lo = 0
    if hi > limit:
        lo -= hi - limit
        hi = limit
    return max(lo, 0), hi


def clamp_and_round_crop_rect(b: BBox, frame: Size, min_side: int = 8) -> IntRect:
    """Snap a VALID box to the pixel grid: floor the near edges, ceil the
    far edges, clamp to the frame, and expand each side to min_side."""
    if frame.width < min_side or frame.height < min_side:
        raise FrameTooSmall(f"frame {frame} smaller than min_side {min_side}")
    if not validate_bbox(b, frame):
        raise InvalidInputBox(
            f"box {b.as_tuple()} is not valid in frame {frame}"
        )
    x1 = max(0, math.floor(b.x1))
    y1 = max(0, math.floor(b.y1))
    x2 = min(frame.width, math.ceil(b.x2))
    y2 = min(frame.height, math.ceil(b.y2))
    x1, x2 = _expand_axis(x1, x2, frame.width, min_side)
    y1, y2 = _expand_axis(y1, y2, frame.height, min_side)
    return IntRect(x1, y1, x2, y2)


def point_in_bbox(p: tuple[float, float], b: BBox) -> bool:
    """Half-open membership: x1 <= px < x2 and y1 <= py < y2."""
    return b.x1 <= p[0] < b.x2 and b.y1 <= p[1] < b.y2


def bbox_contains(outer: BBox, inner: BBox) -> bool:
    return (
        outer.x1 <= inner.x1
        and outer.y1 <= inner.y1
        and inner.x2 <= outer.x2
        and inner.y2 <= outer.y2
    )

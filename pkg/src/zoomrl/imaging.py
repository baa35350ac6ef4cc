"""Image buffers, area-average resizing, pixel-budget enforcement, patch
tokenization, and PPM persistence.

All pixel data is float32 RGB in [0, 1], shape (height, width, 3). Resizing
is exact area-weighted averaging: integer downscale factors use a reshape
mean, everything else goes through a float64 integral image evaluated at
fractional cell edges (the integral of a piecewise-constant image is
piecewise bilinear, so bilinear evaluation is exact, not an approximation).
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .errors import DimensionMismatch, MalformedPPM
from .geometry import IntRect, Size

# Single-threaded OpenCV keeps reductions bit-reproducible run to run.
cv2.setNumThreads(1)


@dataclass
class ImageBuffer:
    pixels: np.ndarray  # (h, w, 3) float32 in [0, 1]

    @property
    def size(self) -> Size:
        return Size(self.pixels.shape[1], self.pixels.shape[0])

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ImageBuffer":
        a = np.asarray(arr, dtype=np.float32)
        if a.ndim != 3 or a.shape[2] != 3:
            raise DimensionMismatch(f"expected (h, w, 3) array, got {a.shape}")
        return cls(a)

    @classmethod
    def filled(cls, size: Size, rgb=(0.0, 0.0, 0.0)) -> "ImageBuffer":
        a = np.empty((size.height, size.width, 3), dtype=np.float32)
        a[:] = np.asarray(rgb, dtype=np.float32)
        return cls(a)

    def validate(self) -> None:
        a = self.pixels
        if a.ndim != 3 or a.shape[2] != 3 or a.shape[0] < 1 or a.shape[1] < 1:
            raise DimensionMismatch(f"bad pixel shape {a.shape}")
        if not np.isfinite(a).all():
            raise DimensionMismatch("non-finite pixel values")
        if a.min() < 0.0 or a.max() > 1.0:
            raise DimensionMismatch("pixel values outside [0, 1]")

    def crop(self, rect: IntRect) -> "ImageBuffer":
        return ImageBuffer(
            np.ascontiguousarray(self.pixels[rect.y1 : rect.y2, rect.x1 : rect.x2])
        )


@dataclass(frozen=True)
class ImagingConfig:
    patch_size: int = 2
    merge: int = 2
    max_pixels: int = 16384
    feature_dim: int = 6
    align: int = 4

    @property
    def cell(self) -> int:
        """Side of one merged-patch cell in pixels."""
        return self.patch_size * self.merge

    def validate(self) -> None:
        from .errors import ConfigInvalid

        if self.patch_size < 1 or self.merge < 1:
            raise ConfigInvalid("patch_size and merge must be >= 1")
        if self.max_pixels < self.cell**2:
            raise ConfigInvalid("max_pixels below one merged cell")
        if self.feature_dim < 1:
            raise ConfigInvalid("feature_dim must be >= 1")
        if self.align < 1 or self.align % self.cell != 0:
            raise ConfigInvalid("align must be a positive multiple of patch_size*merge")


def resize_area(img: ImageBuffer, target: Size) -> ImageBuffer:
    """Area-weighted average resample to ``target``.

    Downscales ride OpenCV's INTER_AREA (agrees with the float64 integral
    reference to float32 rounding); upscales and mixed cases use the exact
    integral-image path directly.
    """
    h, w = img.pixels.shape[:2]
    tw, th = target
    if tw < 1 or th < 1:
        raise DimensionMismatch(f"target must be positive, got {target}")
    if (tw, th) == (w, h):
        return ImageBuffer(img.pixels.copy())
    if tw <= w and th <= h:
        px = np.ascontiguousarray(img.pixels)
        return ImageBuffer(cv2.resize(px, (tw, th), interpolation=cv2.INTER_AREA))
    return ImageBuffer(_integral_resize(img.pixels, tw, th))


def _integral_resize(px: np.ndarray, tw: int, th: int) -> np.ndarray:
    h, w = px.shape[:2]
    cum = np.zeros((h + 1, w + 1, 3), dtype=np.float64)
    np.cumsum(px, axis=0, dtype=np.float64, out=cum[1:, 1:, :])
    np.cumsum(cum[1:, 1:, :], axis=1, out=cum[1:, 1:, :])

    def eval_axis(cum2: np.ndarray, edges: np.ndarray, axis_len: int, axis: int) -> np.ndarray:
        idx = np.minimum(np.floor(edges).astype(np.int64), axis_len - 1)
        frac = edges - idx
        lo = np.take(cum2, idx, axis=axis)
        hi = np.take(cum2, idx + 1, axis=axis)
        shape = [1] * cum2.ndim
        shape[axis] = len(edges)
        f = frac.reshape(shape)
        return lo * (1.0 - f) + hi * f

    ys = np.arange(th + 1, dtype=np.float64) * (h / th)
    xs = np.arange(tw + 1, dtype=np.float64) * (w / tw)
    grid = eval_axis(eval_axis(cum, ys, h, 0), xs, w, 1)
    box = grid[1:, 1:] - grid[:-1, 1:] - grid[1:, :-1] + grid[:-1, :-1]
    area = np.diff(ys)[:, None] * np.diff(xs)[None, :]
    return (box / area[:, :, None]).astype(np.float32)


def _floor_multiple(v: float, align: int) -> int:
    return int(v // align) * align


def resize_to_budget(
    img: ImageBuffer, max_pixels: int, align: int = 1
) -> tuple[ImageBuffer, float]:
    """Shrink an over-budget image so its area fits max_pixels.

    Under-budget images pass through unchanged with scale 1. Otherwise the
    scale is sqrt(max_pixels / area) and each side is floored to a multiple
    of ``align`` (minimum ``align``), with a final cap keeping the product
    within budget for extreme aspect ratios.
    """
    w, h = img.size
    if max_pixels < align * align:
        raise DimensionMismatch("max_pixels below align^2")
    if w * h <= max_pixels:
        return img, 1.0
    scale = float(np.sqrt(max_pixels / (w * h)))
    nw = max(align, _floor_multiple(w * scale, align))
    nw = min(nw, _floor_multiple(max_pixels / align, align))
    nh = max(align, _floor_multiple(h * scale, align))
    nh = min(nh, _floor_multiple(max_pixels / nw, align))
    return resize_area(img, Size(nw, nh)), scale


def align_to_grid(img: ImageBuffer, multiple: int) -> ImageBuffer:
    """Resize down (area-average) so both sides are multiples of ``multiple``.

    No-op when already aligned. Used on crops whose integer rects are not
    grid-aligned before tokenization.
    """
    w, h = img.size
    nw = max(multiple, _floor_multiple(w, multiple))
    nh = max(multiple, _floor_multiple(h, multiple))
    if (nw, nh) == (w, h):
        return img
    return resize_area(img, Size(nw, nh))


@dataclass
class PatchTokens:
    grid: tuple[int, int]  # (columns, rows)
    dim: int
    data: np.ndarray  # (columns*rows, dim) float32, row-major


def tokenize(img: ImageBuffer, cfg: ImagingConfig) -> PatchTokens:
    """One token per merged cell: [mean R, mean G, mean B, center x, center y,
    luminance contrast], padded or truncated to cfg.feature_dim.

    Image sides must be divisible by patch_size*merge; callers resize first.
    """
    s = cfg.cell
    h, w = img.pixels.shape[:2]
    if w % s != 0 or h % s != 0:
        raise DimensionMismatch(
            f"image {w}x{h} not divisible by merged cell {s}"
        )
    rows, cols = h // s, w // s
    px = np.ascontiguousarray(img.pixels)
    means = cv2.resize(px, (cols, rows), interpolation=cv2.INTER_AREA)
    lum = px.mean(axis=2, dtype=np.float32)
    m1 = cv2.resize(lum, (cols, rows), interpolation=cv2.INTER_AREA)
    m2 = cv2.resize(lum * lum, (cols, rows), interpolation=cv2.INTER_AREA)
    contrast = np.sqrt(np.maximum(m2 - m1 * m1, 0.0))
    xc = np.broadcast_to((np.arange(cols) + 0.5) / cols, (rows, cols))
    yc = np.broadcast_to(((np.arange(rows) + 0.5) / rows)[:, None], (rows, cols))
    feats = np.stack(
        [means[:, :, 0], means[:, :, 1], means[:, :, 2], xc, yc, contrast], axis=2
    ).reshape(rows * cols, 6)
    if cfg.feature_dim < 6:
        feats = feats[:, : cfg.feature_dim]
    elif cfg.feature_dim > 6:
        feats = np.pad(feats, ((0, 0), (0, cfg.feature_dim - 6)))
    return PatchTokens((cols, rows), cfg.feature_dim, feats.astype(np.float32))


def write_ppm(img: ImageBuffer, path) -> None:
    """Binary PPM (P6), 8-bit channels, values quantized by round(v*255)."""
    w, h = img.size
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    data = np.clip(np.rint(img.pixels * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(header)
        f.write(data.tobytes())


def _read_token(f) -> bytes:
    # PPM tokens are separated by whitespace; '#' starts a comment to EOL.
    tok = b""
    while True:
        c = f.read(1)
        if c == b"":
            if tok:
                return tok
            raise MalformedPPM("unexpected end of header")
        if c == b"#":
            while c not in (b"\n", b""):
                c = f.read(1)
            continue
        if c.isspace():
            if tok:
                return tok
            continue
        tok += c


def read_ppm(path) -> ImageBuffer:
    with open(path, "rb") as f:
        if f.read(2) != b"P6":
            raise MalformedPPM(f"{path}: missing P6 magic")
        try:
            w = int(_read_token(f))
            h = int(_read_token(f))
            maxval = int(_read_token(f))
        except ValueError as e:
            raise MalformedPPM(f"{path}: bad header field: {e}") from e
        if w < 1 or h < 1:
            raise MalformedPPM(f"{path}: bad dimensions {w}x{h}")
        if maxval != 255:
            raise MalformedPPM(f"{path}: unsupported maxval {maxval}")
        raw = f.read(w * h * 3)
        if len(raw) != w * h * 3:
            raise MalformedPPM(f"{path}: truncated pixel data")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)
    return ImageBuffer((arr / 255.0).astype(np.float32))

"""Raster types and file I/O for probability maps, binary maps, and label maps.

Pixel grids are numpy arrays indexed ``[y, x]`` with the origin at the
top-left and y growing downward.  All public coordinates and vectors are
``(x, y)`` pairs in that frame.  Row-major order (y, then x) is the
canonical pixel order everywhere in this package.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np
from PIL import Image


class FormatError(ValueError):
    """Raised for unsupported or corrupt image files."""


class Label(IntEnum):
    BACKGROUND = 0
    ARTERY = 1
    VEIN = 2


# Fig-1 rendering convention: artery red, vein blue, background black.
OVERLAY_COLORS = {
    Label.BACKGROUND: (0, 0, 0),
    Label.ARTERY: (255, 0, 0),
    Label.VEIN: (0, 0, 255),
}


@dataclass(frozen=True)
class ProbabilityMaps:
    """Per-pixel vessel confidence plus artery/vein softmax outputs."""

    vessel: np.ndarray
    artery: np.ndarray
    vein: np.ndarray

    def __post_init__(self):
        if not (self.vessel.shape == self.artery.shape == self.vein.shape):
            raise ValueError(
                "map dimensions differ: vessel %s, artery %s, vein %s"
                % (self.vessel.shape, self.artery.shape, self.vein.shape)
            )
        for name in ("vessel", "artery", "vein"):
            grid = getattr(self, name)
            if grid.ndim != 2:
                raise ValueError(f"{name} map must be 2-D, got {grid.ndim}-D")
            if grid.size and (grid.min() < 0.0 or grid.max() > 1.0):
                raise ValueError(f"{name} map has values outside [0, 1]")
        # softmax residual is background, so artery + vein never exceeds 1
        if self.artery.size and float((self.artery + self.vein).max()) > 1.0 + 1e-6:
            raise ValueError("artery + vein exceeds 1 at some pixel")

    @property
    def width(self) -> int:
        return self.vessel.shape[1]

    @property
    def height(self) -> int:
        return self.vessel.shape[0]

    @classmethod
    def load(cls, vessel_path, artery_path, vein_path) -> "ProbabilityMaps":
        return cls(
            vessel=load_probability_map(vessel_path),
            artery=load_probability_map(artery_path),
            vein=load_probability_map(vein_path),
        )


@dataclass(frozen=True)
class BinaryMap:
    """Boolean pixel grid."""

    bits: np.ndarray

    def __post_init__(self):
        if self.bits.dtype != np.bool_:
            raise ValueError("BinaryMap bits must be boolean")
        if self.bits.ndim != 2:
            raise ValueError("BinaryMap bits must be 2-D")

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel {background, artery, vein} labels as a uint8 grid."""

    labels: np.ndarray

    def __post_init__(self):
        if self.labels.dtype != np.uint8:
            raise ValueError("LabelMap labels must be uint8")
        if self.labels.ndim != 2:
            raise ValueError("LabelMap labels must be 2-D")
        if self.labels.size and self.labels.max() > 2:
            raise ValueError("LabelMap values must be in {0, 1, 2}")

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    def vessel_mask(self) -> BinaryMap:
        return BinaryMap(self.labels != Label.BACKGROUND)


def binarize(vessel: np.ndarray, threshold: float) -> BinaryMap:
    """Threshold a probability grid; a pixel is foreground iff value > threshold.

    The inequality is strict, so boundary-valued pixels are reproducibly
    excluded.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    return BinaryMap(vessel > threshold)


# ---------------------------------------------------------------------------
# PFM (portable float map)
# ---------------------------------------------------------------------------

def read_pfm(path) -> np.ndarray:
    """Read a grayscale PFM file into a float32 array (top-left origin).

    The scale-line sign selects endianness (negative = little-endian).
    PFM stores rows bottom-to-top; the result is flipped to top-left origin.
    """
    with open(path, "rb") as f:
        header = f.readline().rstrip()
        if header == b"PF":
            raise FormatError(f"{path}: color PFM not supported, expected grayscale 'Pf'")
        if header != b"Pf":
            raise FormatError(f"{path}: not a PFM file (header {header!r})")
        dims = f.readline().split()
        if len(dims) != 2:
            raise FormatError(f"{path}: malformed PFM dimension line")
        try:
            width, height = int(dims[0]), int(dims[1])
            scale = float(f.readline())
        except ValueError as exc:
            raise FormatError(f"{path}: corrupt PFM header") from exc
        if width <= 0 or height <= 0:
            raise FormatError(f"{path}: bad PFM dimensions {width}x{height}")
        endian = "<" if scale < 0 else ">"
        buf = f.read(width * height * 4)
        if len(buf) != width * height * 4:
            raise FormatError(f"{path}: truncated PFM payload")
    grid = np.frombuffer(buf, dtype=endian + "f4").reshape(height, width)
    return np.flipud(grid).astype(np.float32)


def write_pfm(path, grid: np.ndarray) -> None:
    """Write a 2-D float array as little-endian grayscale PFM."""
    grid = np.asarray(grid, dtype="<f4")
    if grid.ndim != 2:
        raise ValueError("PFM writer expects a 2-D grid")
    height, width = grid.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{width} {height}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.flipud(grid).tobytes())


# ---------------------------------------------------------------------------
# PNG
# ---------------------------------------------------------------------------

def _open_image(path) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise FormatError(f"{path}: cannot decode image ({exc})") from exc
    return img


def load_probability_map(path) -> np.ndarray:
    """Load one probability grid from an 8/16-bit grayscale PNG or a PFM.

    Integer pixel values are scaled to [0, 1] by the format maximum
    (255 or 65535); PFM values are read verbatim and clamped to [0, 1].
    """
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        grid = np.clip(read_pfm(path), 0.0, 1.0)
    else:
        img = _open_image(path)
        if img.format != "PNG":
            raise FormatError(f"{path}: unsupported format {img.format}, expected PNG or PFM")
        if img.mode == "L":
            maximum = 255.0
        elif img.mode in ("I", "I;16"):
            maximum = 65535.0
        else:
            raise FormatError(
                f"{path}: unsupported PNG mode {img.mode}, expected 8/16-bit grayscale"
            )
        grid = (np.asarray(img, dtype=np.float64) / maximum).astype(np.float32)
    if grid.shape[0] < 16 or grid.shape[1] < 16:
        raise FormatError(f"{path}: map is {grid.shape[1]}x{grid.shape[0]}, minimum is 16x16")
    return grid


def save_mask(path, mask: BinaryMap) -> None:
    """Write a binary map as an 8-bit grayscale PNG (foreground = 255)."""
    Image.fromarray(mask.bits.astype(np.uint8) * 255, mode="L").save(path, format="PNG")


def load_mask(path) -> BinaryMap:
    """Read a binary map from a grayscale PNG; any value > 127 is foreground."""
    img = _open_image(path)
    if img.mode not in ("L", "I", "I;16", "1"):
        raise FormatError(f"{path}: expected a grayscale mask PNG, got mode {img.mode}")
    return BinaryMap(np.asarray(img) > 127)


def save_overlay(labels: LabelMap, path) -> None:
    """Render a LabelMap as an RGB PNG: artery red, vein blue, background black."""
    palette = np.zeros((3, 3), dtype=np.uint8)
    for label, color in OVERLAY_COLORS.items():
        palette[label] = color
    rgb = palette[labels.labels]
    Image.fromarray(rgb, mode="RGB").save(path, format="PNG")


def load_overlay(path) -> LabelMap:
    """Read labels back from an overlay-convention RGB PNG.

    Only the three convention colors are accepted; anything else is a
    format error so silent misreads cannot happen.
    """
    img = _open_image(path)
    if img.mode != "RGB":
        raise FormatError(f"{path}: expected an RGB overlay PNG, got mode {img.mode}")
    rgb = np.asarray(img)
    labels = np.zeros(rgb.shape[:2], dtype=np.uint8)
    matched = np.zeros(rgb.shape[:2], dtype=bool)
    for label, color in OVERLAY_COLORS.items():
        hit = (rgb == np.array(color, dtype=np.uint8)).all(axis=2)
        labels[hit] = label
        matched |= hit
    if not matched.all():
        ys, xs = np.nonzero(~matched)
        y, x = int(ys[0]), int(xs[0])
        raise FormatError(
            f"{path}: unexpected color {tuple(int(v) for v in rgb[y, x])} at ({x}, {y})"
        )
    return LabelMap(labels)


def save_labels(path, labels: LabelMap) -> None:
    """Write a LabelMap as an 8-bit PNG of raw class indices {0, 1, 2}."""
    Image.fromarray(labels.labels, mode="L").save(path, format="PNG")


def load_labels(path) -> LabelMap:
    """Read a LabelMap from either a class-index PNG or an RGB overlay PNG."""
    img = _open_image(path)
    if img.mode == "RGB":
        return load_overlay(path)
    if img.mode != "L":
        raise FormatError(f"{path}: expected class-index or RGB label PNG, got mode {img.mode}")
    arr = np.asarray(img)
    if arr.size and arr.max() > 2:
        raise FormatError(f"{path}: class-index PNG has values outside {{0, 1, 2}}")
    return LabelMap(arr.astype(np.uint8))

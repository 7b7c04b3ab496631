"""Synthetic vessel trees and propagation fixtures with exact reproducibility.

The generator draws every random quantity from a counter-based 64-bit
mixing function (SplitMix64), so identical (seed, spec) pairs produce
bit-identical outputs on any platform, independent of numpy's own RNG.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .raster import BinaryMap, Label, LabelMap, ProbabilityMaps
from .vessel_graph import CupRegion, Segment, VesselGraph, endpoint_tangent


class InfeasibleSpecError(ValueError):
    """Raised when a synthesis spec cannot be realized on its canvas."""


_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


class SplitMix64:
    """SplitMix64 stream in counter form: draw k is mix(seed + (k+1)*golden).

    Scalar draws and bulk ``at`` draws therefore agree exactly, and the
    sequence is a pure function of (seed, counter) on every platform.
    """

    def __init__(self, seed: int):
        self._seed = seed & 0xFFFFFFFFFFFFFFFF
        self._counter = 0

    def next_u64(self) -> int:
        value = int(SplitMix64.at(self._seed, 1, self._counter)[0])
        self._counter += 1
        return value

    def uniform(self) -> float:
        # 53 high bits give a uniform double in [0, 1)
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def uniform_in(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) by the multiply-shift reduction."""
        return (self.next_u64() * n) >> 64

    @staticmethod
    def at(seed: int, count: int, offset: int = 0) -> np.ndarray:
        """Vectorized draws ``offset .. offset+count-1`` of the stream."""
        idx = np.arange(offset + 1, offset + count + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            return _mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + idx * _GOLDEN)


def _uniform_grid(seed: int, shape: tuple[int, int], offset: int) -> np.ndarray:
    raw = SplitMix64.at(seed, shape[0] * shape[1], offset)
    return ((raw >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)).reshape(shape)


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 42
    width: int = 128
    height: int = 128
    tree_count: int = 4
    branch_depth: int = 3
    width_range: tuple[float, float] = (2.0, 6.0)
    noise_flip_prob: float = 0.0
    confidence_contrast: float = 0.5
    cup: CupRegion | None = None

    def validate(self) -> None:
        if self.width < 64 or self.height < 64:
            raise InfeasibleSpecError(
                f"canvas {self.width}x{self.height} is below the 64x64 floor"
            )
        if self.tree_count < 1:
            raise InfeasibleSpecError("tree_count must be >= 1")
        lo, hi = self.width_range
        if not 1.0 <= lo <= hi or hi > min(self.width, self.height) / 4:
            raise InfeasibleSpecError(f"width_range {self.width_range} cannot fit the canvas")
        if not 0.0 <= self.noise_flip_prob <= 1.0:
            raise InfeasibleSpecError("noise_flip_prob must be in [0, 1]")
        if not 0.0 < self.confidence_contrast <= 1.0:
            raise InfeasibleSpecError("confidence_contrast must be in (0, 1]")
        if not 0 <= self.branch_depth <= 8:
            raise InfeasibleSpecError("branch_depth must be in [0, 8]")

    def to_dict(self) -> dict:
        doc = {
            "seed": self.seed,
            "width": self.width,
            "height": self.height,
            "tree_count": self.tree_count,
            "branch_depth": self.branch_depth,
            "width_range": list(self.width_range),
            "noise_flip_prob": self.noise_flip_prob,
            "confidence_contrast": self.confidence_contrast,
        }
        if self.cup is not None:
            doc["cup"] = {"center": list(self.cup.center), "radius": self.cup.radius}
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthSpec":
        cup = None
        if "cup" in doc and doc["cup"]:
            cup = CupRegion(tuple(doc["cup"]["center"]), float(doc["cup"]["radius"]))
        return cls(
            seed=int(doc.get("seed", 42)),
            width=int(doc.get("width", 128)),
            height=int(doc.get("height", 128)),
            tree_count=int(doc.get("tree_count", 4)),
            branch_depth=int(doc.get("branch_depth", 3)),
            width_range=tuple(doc.get("width_range", (2.0, 6.0))),
            noise_flip_prob=float(doc.get("noise_flip_prob", 0.0)),
            confidence_contrast=float(doc.get("confidence_contrast", 0.5)),
            cup=cup,
        )


def _stamp_capsule(grid: np.ndarray, p0, p1, width: float) -> None:
    """Mark pixels within width/2 of the straight stroke from p0 to p1."""
    h, w = grid.shape
    r = max(0.6, width / 2.0)
    x0, y0 = p0
    x1, y1 = p1
    lo_x = max(0, int(min(x0, x1) - r - 1))
    hi_x = min(w, int(max(x0, x1) + r + 2))
    lo_y = max(0, int(min(y0, y1) - r - 1))
    hi_y = min(h, int(max(y0, y1) + r + 2))
    if lo_x >= hi_x or lo_y >= hi_y:
        return
    ys, xs = np.mgrid[lo_y:hi_y, lo_x:hi_x]
    dx, dy = x1 - x0, y1 - y0
    norm2 = dx * dx + dy * dy
    if norm2 == 0:
        dist2 = (xs - x0) ** 2 + (ys - y0) ** 2
    else:
        t = np.clip(((xs - x0) * dx + (ys - y0) * dy) / norm2, 0.0, 1.0)
        dist2 = (xs - (x0 + t * dx)) ** 2 + (ys - (y0 + t * dy)) ** 2
    grid[lo_y:hi_y, lo_x:hi_x][dist2 <= r * r] = 1


def _draw_branch(grid, rng, x, y, angle, width, depth, spec) -> None:
    length = rng.uniform_in(0.2, 0.4) * min(spec.width, spec.height)
    x2 = x + math.cos(angle) * length
    y2 = y + math.sin(angle) * length
    if spec.cup is not None and spec.cup.radius > 0:
        # strokes stop at the cup boundary rather than entering it
        ccx, ccy = spec.cup.center
        steps = max(2, int(length))
        for s in range(steps + 1):
            px = x + (x2 - x) * s / steps
            py = y + (y2 - y) * s / steps
            if (px - ccx) ** 2 + (py - ccy) ** 2 <= spec.cup.radius ** 2:
                x2 = x + (x2 - x) * max(0, s - 1) / steps
                y2 = y + (y2 - y) * max(0, s - 1) / steps
                break
    _stamp_capsule(grid, (x, y), (x2, y2), width)
    if depth <= 0:
        return
    spread = math.radians(rng.uniform_in(20.0, 50.0))
    child_width = max(spec.width_range[0], width * 0.8)
    _draw_branch(grid, rng, x2, y2, angle - spread, child_width, depth - 1, spec)
    _draw_branch(grid, rng, x2, y2, angle + spread, child_width, depth - 1, spec)


def generate(spec: SynthSpec) -> tuple[ProbabilityMaps, LabelMap, BinaryMap]:
    """Render random vessel trees and their probability maps.

    Each tree is a branching polyline of disks, alternately labeled artery
    and vein.  The vessel map is near 1 on trees and near 0 elsewhere; the
    class maps put the true class at 0.5 + contrast/2, then each vessel
    pixel's preference flips independently with ``noise_flip_prob``.
    """
    spec.validate()
    h, w = spec.height, spec.width
    rng = SplitMix64(spec.seed)

    labels = np.zeros((h, w), dtype=np.uint8)
    for t in range(spec.tree_count):
        side = rng.below(4)
        pos = rng.uniform_in(0.2, 0.8)
        if side == 0:
            x, y, angle = pos * w, 2.0, math.pi / 2
        elif side == 1:
            x, y, angle = pos * w, h - 3.0, -math.pi / 2
        elif side == 2:
            x, y, angle = 2.0, pos * h, 0.0
        else:
            x, y, angle = w - 3.0, pos * h, math.pi
        angle += rng.uniform_in(-0.5, 0.5)
        width = rng.uniform_in(*spec.width_range)
        tree_class = Label.ARTERY if t % 2 == 0 else Label.VEIN
        tree_mask = np.zeros((h, w), dtype=np.uint8)
        _draw_branch(tree_mask, rng, x, y, angle, width, spec.branch_depth, spec)
        labels[tree_mask > 0] = tree_class

    vessel_gt = labels > 0

    # independent jitter/noise streams, keyed off the spec seed
    vessel_jitter = _uniform_grid(spec.seed ^ 0xA5A5A5A5, (h, w), 0)
    flip_draws = _uniform_grid(spec.seed ^ 0x5C5C5C5C, (h, w), 0)

    vessel = np.where(vessel_gt, 1.0 - 0.1 * vessel_jitter, 0.05 * vessel_jitter)
    true_high = 0.5 + spec.confidence_contrast / 2.0
    true_low = 0.5 - spec.confidence_contrast / 2.0

    artery = np.zeros((h, w))
    vein = np.zeros((h, w))
    is_artery = labels == Label.ARTERY
    is_vein = labels == Label.VEIN
    artery[is_artery] = true_high
    vein[is_artery] = true_low
    artery[is_vein] = true_low
    vein[is_vein] = true_high

    flip = vessel_gt & (flip_draws < spec.noise_flip_prob)
    artery_flipped = np.where(flip, vein, artery)
    vein_flipped = np.where(flip, artery, vein)

    maps = ProbabilityMaps(
        vessel=vessel.astype(np.float32),
        artery=artery_flipped.astype(np.float32),
        vein=vein_flipped.astype(np.float32),
    )
    return maps, LabelMap(labels), BinaryMap(vessel_gt)


def chain_instance(
    n_segments: int,
    wrong_indices: set[int],
    wrong_confidence: float,
    segment_length: int = 12,
    spacing: int = 0,
) -> tuple[VesselGraph, list[Label]]:
    """A collinear horizontal chain of touching segments for propagation demos.

    Correct segments sit at confidence +1 (artery); the interior segments
    in ``wrong_indices`` start at ``-wrong_confidence``.  With zero spacing
    consecutive segments share their boundary pixel, like chains cut at
    skeleton keypoints; positive spacing opens a gap between them.
    """
    if not 2 <= n_segments <= 64:
        raise ValueError(f"n_segments must be in [2, 64], got {n_segments}")
    if segment_length < 5:
        raise ValueError("segment_length must be >= 5 for stable tangents")
    for idx in wrong_indices:
        if not 0 < idx < n_segments - 1:
            raise ValueError(f"wrong index {idx} is not interior")

    y = 8
    stride = segment_length + spacing
    segments = []
    for i in range(n_segments):
        x0 = 4 + i * stride
        xs = np.arange(x0, x0 + segment_length + 1, dtype=np.int64)
        pixels = np.stack([xs, np.full_like(xs, y)], axis=1)
        conf = -wrong_confidence if i in wrong_indices else 1.0
        segments.append(Segment(
            id=i,
            pixels=pixels,
            tangents=(endpoint_tangent(pixels, 0), endpoint_tangent(pixels, 1)),
            mean_thickness=3.0,
            confidence=conf,
            in_cup=False,
            source_threshold=0.5,
        ))
    width = 4 + (n_segments - 1) * stride + segment_length + 5
    graph = VesselGraph(
        segments=segments,
        keypoints=[],
        adjacency={},
        width=width,
        height=y + 9,
    )
    expected = [Label.ARTERY] * n_segments
    return graph, expected

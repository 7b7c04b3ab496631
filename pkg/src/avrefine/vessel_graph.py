"""Vessel graph extraction from skeleton maps.

Keypoints are skeleton pixels with more than two 8-neighbors (crossings)
or at most one (terminals); maximal skeletal chains between keypoints
become segments.  Segments found at several binarization thresholds are
fused into one graph, keeping the higher-threshold copy of duplicates.

Coordinates are (x, y) with y growing downward; grids are indexed [y, x].
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .raster import BinaryMap
from .skeleton import SkeletonMap

# Neighbor visit order for deterministic chain walking: clockwise from north.
_NEIGHBORS = ((0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1))

MIN_CHAIN_PIXELS = 3      # shorter chains are thinning noise
ENDPOINT_SNAP_PX = 2.0    # junctions can shift ~1 px between thresholds
DUPLICATE_OVERLAP = 0.5   # fraction of the shorter segment within 1 px Chebyshev


class KeyPointKind(str, Enum):
    CROSSING = "crossing"
    TERMINAL = "terminal"


@dataclass(frozen=True)
class KeyPoint:
    x: int
    y: int
    kind: KeyPointKind

    @property
    def position(self) -> tuple[int, int]:
        return (self.x, self.y)


@dataclass(frozen=True)
class CupRegion:
    """Optic-cup circle; segments inside it are frozen during propagation."""

    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError(f"cup radius must be >= 0, got {self.radius}")

    def contains(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        cx, cy = self.center
        return (xs - cx) ** 2 + (ys - cy) ** 2 <= self.radius ** 2


@dataclass(frozen=True)
class Segment:
    """Ordered skeletal pixel chain with endpoint geometry and confidence.

    ``pixels`` is an (n, 2) int array of (x, y); both ends are keypoint (or
    terminal) pixels.  ``tangents`` holds the unit direction from each end
    toward the interior.  ``confidence`` is signed: positive means artery.
    """

    id: int
    pixels: np.ndarray
    tangents: tuple[np.ndarray, np.ndarray]
    mean_thickness: float = 0.0
    confidence: float = 0.0
    in_cup: bool = False
    source_threshold: float = 0.0

    def __len__(self) -> int:
        return len(self.pixels)

    def endpoint(self, end: int) -> np.ndarray:
        """Endpoint pixel as float (x, y); end is 0 (start) or 1 (end)."""
        return self.pixels[0 if end == 0 else -1].astype(np.float64)

    @property
    def is_artery(self) -> bool:
        # tie at zero resolves to artery, deterministically
        return self.confidence >= 0.0


@dataclass(frozen=True)
class VesselGraph:
    segments: list[Segment]
    keypoints: list[KeyPoint]
    adjacency: dict[int, list[tuple[int, int]]]  # keypoint idx -> (segment id, end)
    width: int
    height: int

    def with_confidences(self, confidences: np.ndarray) -> "VesselGraph":
        segments = [replace(s, confidence=float(c)) for s, c in zip(self.segments, confidences)]
        return replace(self, segments=segments)


def neighbor_counts(bits: np.ndarray) -> np.ndarray:
    """Number of true 8-neighbors per pixel (off-image counts as background)."""
    padded = np.zeros((bits.shape[0] + 2, bits.shape[1] + 2), dtype=np.uint8)
    padded[1:-1, 1:-1] = bits
    return sum(
        padded[1 + dy:bits.shape[0] + 1 + dy, 1 + dx:bits.shape[1] + 1 + dx]
        for dx, dy in _NEIGHBORS
    ) * bits


def find_keypoints(sk: SkeletonMap) -> list[KeyPoint]:
    """Crossing (>2 skeletal neighbors) and terminal (<=1) pixels, row-major."""
    counts = neighbor_counts(sk.bits)
    points = []
    for y, x in zip(*np.nonzero(sk.bits)):
        c = counts[y, x]
        if c > 2:
            points.append(KeyPoint(int(x), int(y), KeyPointKind.CROSSING))
        elif c <= 1:
            points.append(KeyPoint(int(x), int(y), KeyPointKind.TERMINAL))
    return points


def endpoint_tangent(pixels: np.ndarray, end: int) -> np.ndarray:
    """Unit (dx, dy) from an endpoint toward the fifth pixel along the chain.

    Chains shorter than six pixels aim at the farthest chain pixel instead.
    """
    if len(pixels) < 2:
        raise ValueError("tangent undefined for a single-pixel segment")
    chain = pixels if end == 0 else pixels[::-1]
    target = chain[5] if len(chain) >= 6 else chain[-1]
    vec = target.astype(np.float64) - chain[0].astype(np.float64)
    norm = math.hypot(vec[0], vec[1])
    if norm == 0.0:
        raise ValueError("degenerate chain: endpoint coincides with target pixel")
    return vec / norm


def _make_segment(pixels: list[tuple[int, int]], threshold: float) -> Segment:
    arr = np.array(pixels, dtype=np.int64)
    return Segment(
        id=-1,
        pixels=arr,
        tangents=(endpoint_tangent(arr, 0), endpoint_tangent(arr, 1)),
        source_threshold=threshold,
    )


def extract_segments(sk: SkeletonMap, keypoints: Sequence[KeyPoint]) -> list[Segment]:
    """Split a skeleton into maximal chains between keypoints.

    Every skeleton pixel of a chain of at least MIN_CHAIN_PIXELS belongs to
    a segment; isolated cycles (components without keypoints) become one
    closed segment each.  Interior pixels have exactly two skeletal
    neighbors, so walks are unambiguous and the output is deterministic.
    """
    bits = sk.bits
    height, width = bits.shape

    def on(x, y):
        return 0 <= x < width and 0 <= y < height and bits[y, x]

    def neighbors_of(x, y):
        return [(x + dx, y + dy) for dx, dy in _NEIGHBORS if on(x + dx, y + dy)]

    kp_set = {kp.position for kp in keypoints}
    segments: list[Segment] = []
    used_steps: set[tuple[tuple[int, int], tuple[int, int]]] = set()
    chained: set[tuple[int, int]] = set()

    for kp in sorted(kp_set, key=lambda p: (p[1], p[0])):
        for start in neighbors_of(*kp):
            if (kp, start) in used_steps:
                continue
            used_steps.add((kp, start))
            chain = [kp, start]
            prev, cur = kp, start
            while cur not in kp_set:
                nxt = [p for p in neighbors_of(*cur) if p != prev]
                if not nxt:
                    break  # dead end without a terminal keypoint cannot occur
                prev, cur = cur, nxt[0]
                chain.append(cur)
            if chain[-1] in kp_set:
                used_steps.add((chain[-1], chain[-2]))
                if chain[-1] == chain[0] and len(chain) > 2:
                    chain = chain[:-1]  # closed loop back to the same keypoint
            chained.update(chain)
            if len(chain) >= MIN_CHAIN_PIXELS:
                segments.append(_make_segment(chain, sk.source_threshold))

    # isolated cycles: leftover pixels where every pixel has two neighbors
    remaining = sorted(
        (p for p in zip(*np.nonzero(bits)) if (p[1], p[0]) not in chained),
        key=lambda p: (p[0], p[1]),
    )
    visited: set[tuple[int, int]] = set()
    for y, x in remaining:
        if (x, y) in visited:
            continue
        chain = [(x, y)]
        visited.add((x, y))
        prev, cur = (x, y), neighbors_of(x, y)[0]
        while cur != (x, y):
            chain.append(cur)
            visited.add(cur)
            nxt = [p for p in neighbors_of(*cur) if p != prev]
            prev, cur = cur, nxt[0]
        if len(chain) >= MIN_CHAIN_PIXELS:
            segments.append(_make_segment(chain, sk.source_threshold))

    return segments


# ---------------------------------------------------------------------------
# Thickness via 3-4 chamfer distance transform
# ---------------------------------------------------------------------------

def chamfer_distance(bits: np.ndarray) -> np.ndarray:
    """Two-pass 3-4 chamfer distance to background, scaled to ~pixels.

    Off-image pixels count as background.  Integer weights (3 orthogonal,
    4 diagonal) keep the passes deterministic; dividing by 3 yields an
    approximation of Euclidean distance.
    """
    height, width = bits.shape
    big = np.int64(1) << 40
    d = np.pad(np.where(bits, big, 0), 1, constant_values=0)

    cols3 = 3 * np.arange(width + 2, dtype=np.int64)
    for r in range(1, height + 1):
        row = d[r].copy()
        row[1:-1] = np.minimum.reduce(
            [row[1:-1], d[r - 1, 1:-1] + 3, d[r - 1, :-2] + 4, d[r - 1, 2:] + 4]
        )
        # west propagation: min over k <= c of row[k] + 3 (c - k)
        d[r] = np.minimum.accumulate(row - cols3) + cols3
    for r in range(height, 0, -1):
        row = d[r].copy()
        row[1:-1] = np.minimum.reduce(
            [row[1:-1], d[r + 1, 1:-1] + 3, d[r + 1, :-2] + 4, d[r + 1, 2:] + 4]
        )
        # east propagation, mirrored
        d[r] = (np.minimum.accumulate(row[::-1] - cols3) + cols3)[::-1]
    return d[1:-1, 1:-1].astype(np.float64) / 3.0


def mean_thickness(segment: Segment, support: BinaryMap) -> float:
    """Mean full width (2x chamfer distance) along the segment's skeleton.

    Floors at 2.0, the width of a one-pixel-wide chain, so degenerate
    segments never report a vanishing thickness.
    """
    dist = chamfer_distance(support.bits)
    xs, ys = segment.pixels[:, 0], segment.pixels[:, 1]
    return max(2.0, float(2.0 * dist[ys, xs].mean()))


# ---------------------------------------------------------------------------
# Multi-threshold fusion
# ---------------------------------------------------------------------------

def _dilated_pixel_set(pixels: np.ndarray) -> set[tuple[int, int]]:
    out = set()
    for x, y in pixels:
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                out.add((int(x) + dx, int(y) + dy))
    return out


def _is_duplicate(candidate: Segment, accepted: Segment, accepted_halo: set) -> bool:
    """True when >= DUPLICATE_OVERLAP of the shorter chain lies within 1 px
    (Chebyshev) of the other chain."""
    if len(candidate) <= len(accepted):
        shorter, halo = candidate.pixels, accepted_halo
    else:
        shorter = accepted.pixels
        halo = _dilated_pixel_set(candidate.pixels)
    hits = sum(1 for x, y in shorter if (int(x), int(y)) in halo)
    return hits >= DUPLICATE_OVERLAP * len(shorter)


def build_graph(
    skeletons: Sequence[SkeletonMap],
    support: BinaryMap,
    cup: CupRegion,
) -> VesselGraph:
    """Assemble one vessel graph from skeletons at descending thresholds.

    Segments are extracted per threshold and concatenated; a segment whose
    chain substantially overlaps an already-accepted (higher-threshold)
    chain is dropped.  ``support`` should be the widest binary map (the
    lowest threshold) so every skeleton lies inside it for the thickness
    estimate.  Endpoints snap to fused keypoints within ENDPOINT_SNAP_PX.
    """
    if not skeletons:
        raise ValueError("no skeletons given")
    shape = skeletons[0].bits.shape
    if any(sk.bits.shape != shape for sk in skeletons) or support.bits.shape != shape:
        raise ValueError("skeleton/support dimensions differ")

    dist = chamfer_distance(support.bits)

    accepted: list[Segment] = []
    halos: list[set] = []
    all_keypoints: dict[tuple[int, int], KeyPoint] = {}
    for sk in skeletons:
        kps = find_keypoints(sk)
        for kp in kps:
            all_keypoints.setdefault(kp.position, kp)  # highest threshold wins
        for seg in extract_segments(sk, kps):
            # duplicates only exist across thresholds; short sibling arms at a
            # junction legitimately overlap within one skeleton
            if any(
                acc.source_threshold > seg.source_threshold and _is_duplicate(seg, acc, halo)
                for acc, halo in zip(accepted, halos)
            ):
                continue
            accepted.append(seg)
            halos.append(_dilated_pixel_set(seg.pixels))

    segments = []
    for idx, seg in enumerate(accepted):
        xs = seg.pixels[:, 0].astype(np.float64)
        ys = seg.pixels[:, 1].astype(np.float64)
        thickness = max(2.0, float(2.0 * dist[seg.pixels[:, 1], seg.pixels[:, 0]].mean()))
        in_cup = bool(cup.contains(xs, ys).mean() >= 0.5) if cup.radius > 0 else False
        segments.append(replace(seg, id=idx, mean_thickness=thickness, in_cup=in_cup))

    keypoints = sorted(all_keypoints.values(), key=lambda kp: (kp.y, kp.x))
    adjacency: dict[int, list[tuple[int, int]]] = {i: [] for i in range(len(keypoints))}
    if keypoints:
        kp_xy = np.array([[kp.x, kp.y] for kp in keypoints], dtype=np.float64)
        for seg in segments:
            for end in (0, 1):
                delta = kp_xy - seg.endpoint(end)
                d2 = (delta ** 2).sum(axis=1)
                best = int(np.argmin(d2))
                if d2[best] <= ENDPOINT_SNAP_PX ** 2:
                    adjacency[best].append((seg.id, end))

    return VesselGraph(
        segments=segments,
        keypoints=keypoints,
        adjacency=adjacency,
        width=shape[1],
        height=shape[0],
    )


# ---------------------------------------------------------------------------
# JSON export
# ---------------------------------------------------------------------------

def graph_to_json(graph: VesselGraph, config_digest: str = "") -> str:
    """Serialize a graph with stable field ordering for golden-file tests."""
    doc = {
        "width": graph.width,
        "height": graph.height,
        "config_digest": config_digest,
        "keypoints": [
            {"x": kp.x, "y": kp.y, "kind": kp.kind.value} for kp in graph.keypoints
        ],
        "segments": [
            {
                "id": seg.id,
                "pixels": [[int(x), int(y)] for x, y in seg.pixels],
                "mean_thickness": round(seg.mean_thickness, 6),
                "confidence": round(seg.confidence, 9),
                "in_cup": seg.in_cup,
                "source_threshold": seg.source_threshold,
                "tangents": [
                    [round(float(v), 9) for v in t] for t in seg.tangents
                ],
            }
            for seg in graph.segments
        ],
    }
    return json.dumps(doc, indent=2)


def config_digest(payload: dict) -> str:
    """Short provenance digest of a JSON-serializable configuration."""
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

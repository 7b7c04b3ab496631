"""Label unification and iterative prediction propagation over the vessel graph.

Each segment carries one signed confidence (positive = artery): the sum of
per-pixel artery-minus-vein softmax differences along its skeleton.  Low
confidence segments are then corrected by their geometrically compatible
neighbors: for every endpoint pair of two nearby segments, a coefficient in
[0, 1] multiplies the neighbor's confidence into the segment, built from
four similarity terms (tangent opposition, collinearity of the connecting
line, thickness difference, endpoint distance).  Updates run in place over
ascending segment ids, a fixed number of rounds; segments in the optic-cup
circle contribute but are never modified.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .raster import Label, LabelMap, ProbabilityMaps, binarize
from .skeleton import fuse_multiscale
from .vessel_graph import CupRegion, Segment, VesselGraph, build_graph, config_digest


class ConfigError(ValueError):
    """Raised for invalid refinement configuration."""


@dataclass(frozen=True)
class RefineConfig:
    """Tunable maxima of the propagation coefficient and pipeline knobs.

    The maxima normalize each raw similarity input into [0, 1]: values at
    or beyond a maximum contribute zero.  They are engineering defaults
    exposed for tuning per dataset, not learned.
    """

    thresholds: tuple[float, ...] = (0.5, 0.3, 0.1)
    iterations: int = 5
    angle_max_deg: float = 180.0      # tangent-opposition term
    line_angle_max_deg: float = 90.0  # collinearity term (line angle is in [0, 90])
    thickness_max_px: float = 5.0     # mean-thickness difference term
    distance_max_px: float = 20.0     # endpoint distance term; also neighbor radius
    cup: CupRegion = field(default_factory=lambda: CupRegion((0.0, 0.0), 0.0))

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        for name in ("angle_max_deg", "line_angle_max_deg", "thickness_max_px", "distance_max_px"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        ts = self.thresholds
        if not ts or any(not 0.0 < t < 1.0 for t in ts) or any(
            b >= a for a, b in zip(ts, ts[1:])
        ):
            raise ConfigError(f"thresholds must be strictly descending in (0, 1): {ts}")

    def to_dict(self) -> dict:
        return {
            "thresholds": list(self.thresholds),
            "iterations": self.iterations,
            "angle_max_deg": self.angle_max_deg,
            "line_angle_max_deg": self.line_angle_max_deg,
            "thickness_max_px": self.thickness_max_px,
            "distance_max_px": self.distance_max_px,
            "cup": {"center": list(self.cup.center), "radius": self.cup.radius},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RefineConfig":
        try:
            cup = doc.get("cup", {})
            return cls(
                thresholds=tuple(doc.get("thresholds", (0.5, 0.3, 0.1))),
                iterations=int(doc.get("iterations", 5)),
                angle_max_deg=float(doc.get("angle_max_deg", 180.0)),
                line_angle_max_deg=float(doc.get("line_angle_max_deg", 90.0)),
                thickness_max_px=float(doc.get("thickness_max_px", 5.0)),
                distance_max_px=float(doc.get("distance_max_px", 20.0)),
                cup=CupRegion(tuple(cup.get("center", (0.0, 0.0))), float(cup.get("radius", 0.0))),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"malformed config: {exc}") from exc

    @classmethod
    def from_json(cls, path) -> "RefineConfig":
        try:
            with open(path) as f:
                doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(doc)

    def digest(self) -> str:
        return config_digest(self.to_dict())


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    segment_id: int
    confidence_before: float
    confidence_after: float
    contributor_id: int
    coefficient: float


@dataclass
class PropagationTrace:
    """Applied nonzero-coefficient updates, for inspection and debugging."""

    entries: list[TraceEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)


def unify_labels(graph: VesselGraph, maps: ProbabilityMaps) -> VesselGraph:
    """Set each segment's confidence to the summed artery-vein differences
    of its skeleton pixels.

    The predicted label is artery when the sum is positive, vein when
    negative; an exact zero resolves to artery.
    """
    diff = maps.artery.astype(np.float64) - maps.vein.astype(np.float64)
    confidences = np.zeros(len(graph.segments))
    for i, seg in enumerate(graph.segments):
        xs, ys = seg.pixels[:, 0], seg.pixels[:, 1]
        confidences[i] = diff[ys, xs].sum()
    return graph.with_confidences(confidences)


def _normalized(x: float, maximum: float) -> float:
    """Map x monotonically from [0, maximum] onto [1, 0]; clamp beyond."""
    x = min(max(x, 0.0), maximum)
    return ((x - maximum) / maximum) ** 2


def _angle_deg(u: np.ndarray, v: np.ndarray) -> float:
    """Principal angle between unit vectors, in degrees on [0, 180]."""
    dot = float(np.clip(np.dot(u, v), -1.0, 1.0))
    return math.degrees(math.acos(dot))


def coefficient(
    seg_i: Segment, end_i: int, seg_j: Segment, end_j: int, cfg: RefineConfig
) -> float:
    """Influence of ``seg_j`` on ``seg_i`` for one endpoint pair, in [0, 1].

    The product of four terms, each 1 at perfect compatibility and 0 at the
    configured maximum:

    * tangent opposition: inward endpoint tangents of two pieces of the
      same vessel point at each other, so the angle between them is 180;
    * collinearity: the line through the two endpoints should align with
      ``seg_i``'s tangent line (folded to [0, 90] so a continuation in
      front of the endpoint scores like one behind it);
    * thickness: absolute difference of mean widths;
    * distance: Euclidean endpoint gap.

    Coincident endpoints leave the connecting direction undefined; the
    collinearity and distance terms are 1 by convention there.
    """
    u_i = seg_i.tangents[end_i]
    u_j = seg_j.tangents[end_j]
    p_i = seg_i.endpoint(end_i)
    p_j = seg_j.endpoint(end_j)

    opposition = _normalized(abs(_angle_deg(u_i, u_j) - 180.0), cfg.angle_max_deg)

    gap = p_j - p_i
    distance = math.hypot(gap[0], gap[1])
    if distance == 0.0:
        collinearity = 1.0
        proximity = 1.0
    else:
        connector_angle = _angle_deg(u_i, gap / distance)
        line_angle = min(connector_angle, 180.0 - connector_angle)
        collinearity = _normalized(line_angle, cfg.line_angle_max_deg)
        proximity = _normalized(distance, cfg.distance_max_px)

    thickness = _normalized(
        abs(seg_i.mean_thickness - seg_j.mean_thickness), cfg.thickness_max_px
    )
    return opposition * collinearity * thickness * proximity


def _candidate_pairs(graph: VesselGraph, cfg: RefineConfig) -> dict[int, list[tuple[int, int, int]]]:
    """For each segment id, the (neighbor id, own end, neighbor end) triples
    whose endpoints lie within the distance maximum."""
    n = len(graph.segments)
    if n == 0:
        return {}
    ends = np.empty((n, 2, 2))
    for i, seg in enumerate(graph.segments):
        ends[i, 0] = seg.endpoint(0)
        ends[i, 1] = seg.endpoint(1)
    flat = ends.reshape(n * 2, 2)
    d2 = ((flat[:, None, :] - flat[None, :, :]) ** 2).sum(axis=2)
    limit = cfg.distance_max_px ** 2
    out: dict[int, list[tuple[int, int, int]]] = {i: [] for i in range(n)}
    for i in range(n):
        for end_i in (0, 1):
            near = np.nonzero(d2[i * 2 + end_i] <= limit)[0]
            for k in near:
                j, end_j = divmod(int(k), 2)
                if j != i:
                    out[i].append((j, end_i, end_j))
    for i in range(n):
        out[i].sort()
    return out


def propagate(graph: VesselGraph, cfg: RefineConfig) -> tuple[VesselGraph, PropagationTrace]:
    """Run the confidence update rounds and return the refined graph.

    Per round, segments are visited in ascending id; every candidate
    neighbor endpoint pair adds coefficient-weighted neighbor confidence in
    place, so updates made earlier in a round are visible later in the same
    round.  Cup segments are sources only.  Confidences are not normalized
    between rounds; only signs matter downstream.
    """
    trace = PropagationTrace()
    conf = np.array([seg.confidence for seg in graph.segments], dtype=np.float64)
    if cfg.iterations == 0 or len(graph.segments) == 0:
        return graph.with_confidences(conf), trace

    pairs = _candidate_pairs(graph, cfg)
    eps_cache: dict[tuple[int, int, int, int], float] = {}
    for (i, triples) in pairs.items():
        seg_i = graph.segments[i]
        for j, end_i, end_j in triples:
            eps_cache[(i, end_i, j, end_j)] = coefficient(
                seg_i, end_i, graph.segments[j], end_j, cfg
            )

    for iteration in range(cfg.iterations):
        for i, seg in enumerate(graph.segments):
            if seg.in_cup:
                continue
            for j, end_i, end_j in pairs[i]:
                eps = eps_cache[(i, end_i, j, end_j)]
                if eps == 0.0:
                    continue
                before = conf[i]
                conf[i] = before + eps * conf[j]
                trace.entries.append(TraceEntry(
                    iteration=iteration,
                    segment_id=i,
                    confidence_before=before,
                    confidence_after=conf[i],
                    contributor_id=j,
                    coefficient=eps,
                ))
    return graph.with_confidences(conf), trace


def _nearest_segment_ids(graph: VesselGraph, shape: tuple[int, int], rounds: int) -> np.ndarray:
    """Per-pixel id of the Chebyshev-nearest segment skeleton pixel, ties to
    the lower id, computed by min-id dilation; -1 beyond ``rounds`` steps."""
    unset = np.iinfo(np.int32).max
    ids = np.full(shape, unset, dtype=np.int32)
    for seg in sorted(graph.segments, key=lambda s: -s.id):
        ids[seg.pixels[:, 1], seg.pixels[:, 0]] = seg.id
    for _ in range(rounds):
        padded = np.pad(ids, 1, constant_values=unset)
        best = ids.copy()
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dy == 0 and dx == 0:
                    continue
                shifted = padded[1 + dy:shape[0] + 1 + dy, 1 + dx:shape[1] + 1 + dx]
                best = np.minimum(best, shifted)
        grow = (ids == unset) & (best != unset)
        ids[grow] = best[grow]
    ids[ids == unset] = -1
    return ids


def synthesize_labels(
    graph: VesselGraph, maps: ProbabilityMaps, cfg: RefineConfig
) -> LabelMap:
    """Paint segment labels back onto pixels.

    Vessel support is the highest-threshold binarization of the vessel map.
    Each vessel pixel takes the label of its Chebyshev-nearest segment
    skeleton pixel (ties to the lower segment id); vessel pixels farther
    than the thickness maximum from any skeleton, or with no graph at all,
    fall back to the per-pixel artery/vein argmax (ties to artery).
    """
    support = binarize(maps.vessel, cfg.thresholds[0]).bits
    labels = np.zeros(support.shape, dtype=np.uint8)

    argmax = np.where(maps.artery >= maps.vein, Label.ARTERY, Label.VEIN).astype(np.uint8)

    if graph.segments:
        rounds = int(math.floor(cfg.thickness_max_px))
        ids = _nearest_segment_ids(graph, support.shape, rounds)
        seg_label = np.array(
            [Label.ARTERY if seg.is_artery else Label.VEIN for seg in graph.segments],
            dtype=np.uint8,
        )
        assigned = support & (ids >= 0)
        labels[assigned] = seg_label[ids[assigned]]
        fallback = support & (ids < 0)
    else:
        fallback = support
    labels[fallback] = argmax[fallback]
    return LabelMap(labels)


def refine_pipeline(
    maps: ProbabilityMaps, cfg: RefineConfig
) -> tuple[LabelMap, VesselGraph, PropagationTrace]:
    """Full post-processing chain: skeletonize, build the graph, unify,
    propagate, and synthesize the refined label map."""
    skeletons = fuse_multiscale(maps.vessel, cfg.thresholds)
    support = binarize(maps.vessel, cfg.thresholds[-1])
    graph = build_graph(skeletons, support, cfg.cup)
    graph = unify_labels(graph, maps)
    graph, trace = propagate(graph, cfg)
    labels = synthesize_labels(graph, maps, cfg)
    return labels, graph, trace

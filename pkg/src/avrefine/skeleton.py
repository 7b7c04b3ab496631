"""Binary thinning to one-pixel-wide skeletons, single- and multi-threshold.

The thinning is Zhang-Suen's two-sub-iteration parallel algorithm with two
deterministic additions:

* a survivor guard: when one parallel sweep would delete every remaining
  pixel of an 8-connected component (Zhang-Suen erases isolated 2x2 squares
  outright), the row-major-first pixel of that component is kept, so the
  8-component count of the input is always preserved;
* a staircase cleanup: after convergence, pixels inside 2x2 blocks are
  removed sequentially in row-major order whenever removal is locally safe
  (neighbor count >= 2 and exactly one 0-to-1 transition around the pixel),
  which strips the two-pixel-wide staircase steps the parallel passes leave
  on diagonal strokes.

Both sub-iterations evaluate their delete predicate against a frozen
snapshot of the grid, so results are independent of any internal
parallelism.  Border pixels treat off-image neighbors as background.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .raster import BinaryMap, binarize

_EIGHT = np.ones((3, 3), dtype=np.uint8)


@dataclass(frozen=True)
class SkeletonMap:
    """One-pixel-wide skeleton plus the threshold it was extracted at."""

    bits: np.ndarray
    source_threshold: float

    def __post_init__(self):
        if self.bits.dtype != np.bool_ or self.bits.ndim != 2:
            raise ValueError("SkeletonMap bits must be a 2-D boolean grid")

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]


def _neighbor_rings(grid: np.ndarray):
    """Return the 8 neighbor planes of the padded grid's core, in the
    clockwise order N, NE, E, SE, S, SW, W, NW."""
    return (
        grid[:-2, 1:-1], grid[:-2, 2:], grid[1:-1, 2:], grid[2:, 2:],
        grid[2:, 1:-1], grid[2:, :-2], grid[1:-1, :-2], grid[:-2, :-2],
    )


def _guard_survivors(core: np.ndarray, remove: np.ndarray) -> None:
    """Clear removal flags so no 8-component loses all of its pixels."""
    labels, count = ndimage.label(core, structure=_EIGHT)
    if count == 0:
        return
    total = np.bincount(labels.ravel(), minlength=count + 1)
    gone = np.bincount(labels[remove].ravel(), minlength=count + 1)
    for comp in np.nonzero((gone == total) & (total > 0))[0]:
        if comp == 0:
            continue
        flat = np.flatnonzero((labels == comp).ravel())
        remove.ravel()[flat[0]] = False  # row-major first pixel survives


# Ring order for the Yokoi connectivity number: E, NE, N, NW, W, SW, S, SE.
_RING = ((0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1))


def _yokoi8(padded: np.ndarray, y: int, x: int) -> tuple[int, int]:
    """(connectivity number, neighbor count) for 8-connected foreground.

    The connectivity number counts the 8-components of foreground touching
    the pixel; deleting a pixel is topology-safe exactly when it is 1.
    """
    ring = [padded[y + dy, x + dx] for dy, dx in _RING]
    count = sum(ring)
    bg = [0 if v else 1 for v in ring]
    conn = sum(
        bg[k] - bg[k] * bg[(k + 1) % 8] * bg[(k + 2) % 8] for k in (0, 2, 4, 6)
    )
    return conn, count


def _prune_redundant(padded: np.ndarray) -> None:
    """Remove chain pixels whose deletion is topology-safe, to a fixpoint.

    The parallel passes leave two-pixel staircase steps on diagonal
    strokes; those interior pixels read as false crossings downstream.
    Deletion runs sequentially in row-major order, rechecking the local
    connectivity number against the current grid before each removal, so
    the result is deterministic and never splits or loses a component.
    """
    ring_b = [padded[1 + dy:padded.shape[0] - 1 + dy, 1 + dx:padded.shape[1] - 1 + dx]
              for dy, dx in _RING]
    while True:
        bg = [(~p).astype(np.int8) for p in ring_b]
        count = sum(p.astype(np.int8) for p in ring_b)
        conn = sum(bg[k] - bg[k] * bg[(k + 1) % 8] * bg[(k + 2) % 8] for k in (0, 2, 4, 6))
        flagged = padded[1:-1, 1:-1] & (count >= 2) & (conn == 1)
        removed = False
        for y, x in zip(*np.nonzero(flagged)):
            c, b = _yokoi8(padded, y + 1, x + 1)
            if b >= 2 and c == 1:
                padded[y + 1, x + 1] = False
                removed = True
        if not removed:
            return


def thin(binary: BinaryMap, source_threshold: float = 0.0) -> SkeletonMap:
    """Thin a binary map to a one-pixel-wide 8-connected skeleton.

    The skeleton is a subset of the input foreground and has the same
    number of 8-connected components.  Empty input yields an empty
    skeleton.
    """
    padded = np.zeros((binary.height + 2, binary.width + 2), dtype=bool)
    padded[1:-1, 1:-1] = binary.bits
    changed = True
    while changed:
        changed = False
        for sub in (0, 1):
            n, ne, e, se, s, sw, w, nw = _neighbor_rings(padded)
            ring = [n, ne, e, se, s, sw, w, nw]
            count = sum(p.astype(np.int8) for p in ring)
            trans = sum((~a & b) for a, b in zip(ring, ring[1:] + ring[:1]))
            if sub == 0:
                side = ~(n & e & s) & ~(e & s & w)
            else:
                side = ~(n & e & w) & ~(n & s & w)
            core = padded[1:-1, 1:-1]
            remove = core & (count >= 2) & (count <= 6) & (trans == 1) & side
            if not remove.any():
                continue
            _guard_survivors(core, remove)
            core[remove] = False
            changed = True
    _prune_redundant(padded)
    return SkeletonMap(bits=padded[1:-1, 1:-1].copy(), source_threshold=source_threshold)


def fuse_multiscale(vessel: np.ndarray, thresholds: Sequence[float]) -> list[SkeletonMap]:
    """Binarize and thin at each threshold, coarsest (highest) first.

    Thresholds must be strictly descending and inside (0, 1); higher
    thresholds capture major vessels with high confidence while the lower
    ones pick up minor vessels the coarse skeletons miss.
    """
    thresholds = list(thresholds)
    if not thresholds:
        raise ValueError("threshold list is empty")
    if any(not 0.0 < t < 1.0 for t in thresholds):
        raise ValueError(f"thresholds must lie in (0, 1): {thresholds}")
    if any(later >= earlier for earlier, later in zip(thresholds, thresholds[1:])):
        raise ValueError(f"thresholds must be strictly descending: {thresholds}")
    return [thin(binarize(vessel, t), source_threshold=t) for t in thresholds]

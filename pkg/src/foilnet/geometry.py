"""Airfoil outlines: Selig-format parsing, shearing, and mask rasterization.

Outlines are simple polygons in chord units, listed trailing edge -> upper
surface -> leading edge -> lower surface (Selig order). The rasterizer
works on a fixed cell-centered window around the unit chord.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyMask, MalformedLine, OutOfRange, SelfIntersecting, TooFewPoints

__all__ = [
    "AirfoilShape",
    "GridSpec",
    "parse_uiuc",
    "serialize",
    "shear",
    "rasterize",
]


@dataclass(frozen=True)
class AirfoilShape:
    """A named simple polygon, points (N, 2) float64 in Selig order."""

    name: str
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise TooFewPoints(f"{self.name}: expected (N, 2) points, got {pts.shape}")
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class GridSpec:
    """Cell-centered sampling window.

    The window spans two chord lengths in each direction around the unit
    chord: one chord of margin behind, half ahead, one above and below.
    Cell (iy, ix) is centered at (xmin + (ix+0.5)*dx, ymin + (iy+0.5)*dy).
    """

    resolution: int = 128
    xmin: float = -0.5
    xmax: float = 1.5
    ymin: float = -1.0
    ymax: float = 1.0

    @property
    def dx(self) -> float:
        return (self.xmax - self.xmin) / self.resolution

    @property
    def dy(self) -> float:
        return (self.ymax - self.ymin) / self.resolution

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """(xs, ys) 1-d arrays of cell-center coordinates."""
        xs = self.xmin + (np.arange(self.resolution) + 0.5) * self.dx
        ys = self.ymin + (np.arange(self.resolution) + 0.5) * self.dy
        return xs, ys


def parse_uiuc(text: str) -> AirfoilShape:
    """Parse Selig-format airfoil coordinates.

    First non-empty line is the name; every further non-empty line must be
    exactly two floats. Lednicer files (point-count header, x far outside
    the chord) are rejected via the coordinate range check. Consecutive
    duplicate points are collapsed, including a last point that repeats
    the first.
    """
    lines = text.splitlines()
    name = None
    pts = []
    for lineno, raw in enumerate(lines, start=1):
        stripped = raw.strip()
        if not stripped:
            continue
        if name is None:
            name = stripped
            continue
        tokens = stripped.split()
        if len(tokens) != 2:
            raise MalformedLine(f"line {lineno}: expected two columns, got {len(tokens)}")
        try:
            x, y = float(tokens[0]), float(tokens[1])
        except ValueError:
            raise MalformedLine(f"line {lineno}: not numeric: {stripped!r}") from None
        if not (np.isfinite(x) and np.isfinite(y)):
            raise MalformedLine(f"line {lineno}: non-finite coordinate")
        # chord-normalized Selig data stays near the unit chord; this also
        # rejects Lednicer point-count headers like "33. 33."
        if not (-0.1 <= x <= 1.1) or abs(y) > 1.0:
            raise MalformedLine(f"line {lineno}: coordinate ({x}, {y}) outside chord range")
        pts.append((x, y))
    if name is None:
        raise MalformedLine("empty file")

    cleaned = []
    for p in pts:
        if not cleaned or p != cleaned[-1]:
            cleaned.append(p)
    if len(cleaned) > 1 and cleaned[0] == cleaned[-1]:
        cleaned.pop()
    if len(cleaned) < 3:
        raise TooFewPoints(f"{name}: {len(cleaned)} distinct points")

    points = np.array(cleaned, dtype=np.float64)
    _check_simple(points, name)
    return AirfoilShape(name=name, points=points)


def serialize(shape: AirfoilShape) -> str:
    """Inverse of parse_uiuc; coordinates written with full round-trip precision."""
    lines = [shape.name]
    for x, y in shape.points:
        lines.append(f"{x:.17g} {y:.17g}")
    return "\n".join(lines) + "\n"


def shear(shape: AirfoilShape, angle_deg: float) -> AirfoilShape:
    """Shear about the chord line: (x, y) -> (x + tan(a)*y, y).

    An invertible linear map, so a simple polygon stays simple and no
    intersection recheck is needed. |angle| <= 45 degrees.
    """
    if not abs(angle_deg) <= 45.0:
        raise OutOfRange(f"shear angle {angle_deg} outside [-45, 45] degrees")
    pts = shape.points.copy()
    pts[:, 0] += np.tan(np.radians(angle_deg)) * pts[:, 1]
    return AirfoilShape(name=shape.name, points=pts)


def rasterize(shape: AirfoilShape, grid: GridSpec = GridSpec()) -> np.ndarray:
    """Binary occupancy mask of the polygon on the grid, 1 inside.

    Even-odd crossing count against cell centers. Centers are nudged by
    1e-6 of a cell in both axes, far below half a cell, so centers that
    would sit exactly on an edge or vertex resolve deterministically and
    every other cell is unaffected.

    Returns a (resolution, resolution) uint8 array indexed [iy, ix] with
    row 0 at ymin. Raises EmptyMask when no center lands inside or the
    interior cells do not form one 4-connected component.
    """
    xs, ys = grid.centers()
    xc = xs + grid.dx * 1e-6
    yc = ys + grid.dy * 1e-6
    X = xc[None, :]
    Y = yc[:, None]

    P = shape.points
    inside = np.zeros((grid.resolution, grid.resolution), dtype=bool)
    n = len(P)
    for i in range(n):
        x1, y1 = P[i]
        x2, y2 = P[(i + 1) % n]
        if y1 == y2:
            continue
        spans = (y1 <= Y) != (y2 <= Y)
        xint = x1 + (Y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= spans & (X < xint)

    if not inside.any():
        raise EmptyMask(f"{shape.name}: no cell centers inside at {grid.resolution}^2")
    if not _connected(inside):
        raise EmptyMask(f"{shape.name}: interior cells disconnected at {grid.resolution}^2")
    return inside.astype(np.uint8)


def _connected(mask: np.ndarray) -> bool:
    """True when the set cells form a single 4-connected component."""
    comp = np.zeros_like(mask)
    seed = np.argwhere(mask)[0]
    comp[seed[0], seed[1]] = True
    while True:
        grown = comp.copy()
        grown[1:, :] |= comp[:-1, :]
        grown[:-1, :] |= comp[1:, :]
        grown[:, 1:] |= comp[:, :-1]
        grown[:, :-1] |= comp[:, 1:]
        grown &= mask
        if np.array_equal(grown, comp):
            return bool(comp.sum() == mask.sum())
        comp = grown


def _check_simple(P: np.ndarray, name: str) -> None:
    """Raise SelfIntersecting if any two non-adjacent edges touch or cross."""
    n = len(P)
    A = P
    B = np.roll(P, -1, axis=0)
    ii, jj = np.triu_indices(n, k=1)
    # edges sharing an endpoint (consecutive, including the wrap pair) are fine
    adjacent = (jj - ii == 1) | ((ii == 0) & (jj == n - 1))
    ii, jj = ii[~adjacent], jj[~adjacent]
    if len(ii) == 0:
        return

    p, q = A[ii], B[ii]
    r, s = A[jj], B[jj]

    def cross2(u, v):
        return u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]

    d1 = cross2(s - r, p - r)
    d2 = cross2(s - r, q - r)
    d3 = cross2(q - p, r - p)
    d4 = cross2(q - p, s - p)
    proper = ((d1 > 0) != (d2 > 0)) & ((d3 > 0) != (d4 > 0)) & (d1 != 0) & (d2 != 0) & (d3 != 0) & (d4 != 0)
    if proper.any():
        raise SelfIntersecting(f"{name}: edges cross")

    # degenerate contacts: an endpoint of one edge lying on the other
    for d, seg_a, seg_b, pt in ((d1, r, s, p), (d2, r, s, q), (d3, p, q, r), (d4, p, q, s)):
        touch = (d == 0) & _on_segment(seg_a, seg_b, pt)
        if touch.any():
            raise SelfIntersecting(f"{name}: edges touch")


def _on_segment(a: np.ndarray, b: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Collinearity assumed; is p within the bounding box of segment ab?"""
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    return np.all((p >= lo) & (p <= hi), axis=1)

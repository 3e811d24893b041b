"""2D scene model and ray geometry: image-method specular paths, scatterer
regions, and delay-band (ellipse arc) masses."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy.stats import qmc

SPEED_OF_LIGHT = 3.0e8
ENDPOINT_TOL = 1e-9


class GeometryError(ValueError):
    pass


class DegenerateGeometryError(GeometryError):
    pass


class SceneFormatError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class Point2D:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise GeometryError(f"non-finite point ({self.x}, {self.y})")

    def __iter__(self):
        yield self.x
        yield self.y

    def dist(self, other: Point2D) -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


def as_point(p) -> Point2D:
    if isinstance(p, Point2D):
        return p
    x, y = p
    return Point2D(float(x), float(y))


@dataclass(frozen=True, slots=True)
class WallSegment:
    a: Point2D
    b: Point2D

    def __post_init__(self):
        if self.a.dist(self.b) <= 0.0:
            raise GeometryError("wall segment has zero length")

    @property
    def length(self) -> float:
        return self.a.dist(self.b)


@dataclass(frozen=True)
class ScattererRegion:
    """Truncated bivariate Gaussian scatterer density.

    The support is the ellipse with half-axes ``truncation * sigma_x`` and
    ``truncation * sigma_y`` around ``center``.
    """

    center: Point2D
    sigma_x: float
    sigma_y: float
    truncation: float = 3.0

    def __post_init__(self):
        if not (self.sigma_x > 0 and self.sigma_y > 0):
            raise GeometryError("scatterer sigmas must be positive")
        if not self.truncation >= 1.0:
            raise GeometryError("truncation multiplier must be >= 1")

    def contains(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        u = (xy[..., 0] - self.center.x) / (self.truncation * self.sigma_x)
        v = (xy[..., 1] - self.center.y) / (self.truncation * self.sigma_y)
        return u * u + v * v <= 1.0 + 1e-12

    @property
    def gaussian_mass(self) -> float:
        """Mass of the untruncated Gaussian inside the truncation ellipse."""
        return 1.0 - math.exp(-0.5 * self.truncation**2)


@dataclass(frozen=True, slots=True)
class ScattererPoint:
    pos: Point2D
    weight: float


@dataclass(frozen=True)
class ScattererSet:
    """Sampled scatterers of one region, stored column-wise."""

    positions: np.ndarray  # (n, 2)
    weights: np.ndarray  # (n,)

    def __len__(self) -> int:
        return len(self.weights)

    def __iter__(self) -> Iterator[ScattererPoint]:
        for (x, y), w in zip(self.positions, self.weights):
            yield ScattererPoint(Point2D(float(x), float(y)), float(w))

    def __getitem__(self, i: int) -> ScattererPoint:
        x, y = self.positions[i]
        return ScattererPoint(Point2D(float(x), float(y)), float(self.weights[i]))

    @classmethod
    def from_points(cls, points: Sequence[ScattererPoint]) -> ScattererSet:
        pos = np.array([[p.pos.x, p.pos.y] for p in points], dtype=float).reshape(-1, 2)
        w = np.array([p.weight for p in points], dtype=float)
        return cls(pos, w)


@dataclass(frozen=True)
class SpecularPath:
    order: int
    reflection_points: tuple[Point2D, ...]
    segment_lengths: tuple[float, ...]
    walls: tuple[int, ...] = ()

    @property
    def total_length(self) -> float:
        return float(sum(self.segment_lengths))


@dataclass
class Scene:
    walls: list[WallSegment]
    tx: Point2D
    regions: list[ScattererRegion] = field(default_factory=list)
    bounds: tuple[float, float, float, float] = (0.0, 0.0, 10.0, 8.0)

    def __post_init__(self):
        if not self.in_bounds(self.tx):
            raise GeometryError(f"tx {self.tx} outside bounds {self.bounds}")
        for w in self.walls:
            if not (self.in_bounds(w.a) and self.in_bounds(w.b)):
                raise GeometryError(f"wall {w} outside bounds {self.bounds}")

    def in_bounds(self, p: Point2D) -> bool:
        x0, y0, x1, y1 = self.bounds
        return x0 <= p.x <= x1 and y0 <= p.y <= y1

    def without_regions(self) -> Scene:
        return Scene(list(self.walls), self.tx, [], self.bounds)


def mirror_point(p: Point2D, wall: WallSegment) -> Point2D:
    ax, ay = wall.a.x, wall.a.y
    dx, dy = wall.b.x - ax, wall.b.y - ay
    t = ((p.x - ax) * dx + (p.y - ay) * dy) / (dx * dx + dy * dy)
    fx, fy = ax + t * dx, ay + t * dy
    return Point2D(2.0 * fx - p.x, 2.0 * fy - p.y)


def _cross(ax, ay, bx, by):
    return ax * by - ay * bx


def _line_hit(p: Point2D, q: Point2D, wall: WallSegment):
    """Intersection of segment p->q with the wall segment.

    Returns (t along p->q, s along the wall in [0, 1], point) or None when the
    lines are parallel.
    """
    rx, ry = q.x - p.x, q.y - p.y
    sx, sy = wall.b.x - wall.a.x, wall.b.y - wall.a.y
    denom = _cross(rx, ry, sx, sy)
    if abs(denom) < 1e-15:
        return None
    qpx, qpy = wall.a.x - p.x, wall.a.y - p.y
    t = _cross(qpx, qpy, sx, sy) / denom
    s = _cross(qpx, qpy, rx, ry) / denom
    return t, s, Point2D(p.x + t * rx, p.y + t * ry)


def _reflection_point(image: Point2D, target: Point2D, wall: WallSegment) -> Point2D | None:
    hit = _line_hit(image, target, wall)
    if hit is None:
        return None
    t, s, pt = hit
    tol = ENDPOINT_TOL / wall.length
    if not (tol < s < 1.0 - tol):
        return None
    if not (0.0 < t < 1.0):
        return None
    return pt


def segment_blocked(p: Point2D, q: Point2D, walls: Sequence[WallSegment], skip=()) -> bool:
    """True if any wall (other than those in ``skip``) crosses segment p->q."""
    seg_len = p.dist(q)
    if seg_len == 0.0:
        return False
    eps = ENDPOINT_TOL / seg_len
    for k, w in enumerate(walls):
        if k in skip:
            continue
        hit = _line_hit(p, q, w)
        if hit is None:
            continue
        t, s, _ = hit
        if eps < t < 1.0 - eps and -1e-12 <= s <= 1.0 + 1e-12:
            return True
    return False


def specular_paths(scene: Scene, ue, max_order: int = 2, occlusion: bool = True) -> list[SpecularPath]:
    """Direct path plus image-method reflections up to ``max_order`` bounces,
    sorted by total length."""
    ue = as_point(ue)
    if max_order not in (0, 1, 2):
        raise ValueError(f"max_order must be 0, 1 or 2, got {max_order}")
    if not scene.in_bounds(ue):
        raise GeometryError(f"ue {ue} outside scene bounds")
    tx = scene.tx
    if tx.dist(ue) < ENDPOINT_TOL:
        raise DegenerateGeometryError("ue coincides with tx")
    walls = scene.walls
    paths = []

    if not (occlusion and segment_blocked(tx, ue, walls)):
        paths.append(SpecularPath(0, (), (tx.dist(ue),)))

    if max_order >= 1:
        images = [mirror_point(tx, w) for w in walls]
        for i, w in enumerate(walls):
            r = _reflection_point(images[i], ue, w)
            if r is None:
                continue
            segs = (tx.dist(r), r.dist(ue))
            if min(segs) <= ENDPOINT_TOL:
                continue
            if occlusion and (segment_blocked(tx, r, walls, skip=(i,))
                              or segment_blocked(r, ue, walls, skip=(i,))):
                continue
            paths.append(SpecularPath(1, (r,), segs, (i,)))

        if max_order >= 2:
            for i, wi in enumerate(walls):
                for j, wj in enumerate(walls):
                    if i == j:
                        continue
                    img2 = mirror_point(images[i], wj)
                    r2 = _reflection_point(img2, ue, wj)
                    if r2 is None:
                        continue
                    r1 = _reflection_point(images[i], r2, wi)
                    if r1 is None:
                        continue
                    segs = (tx.dist(r1), r1.dist(r2), r2.dist(ue))
                    if min(segs) <= ENDPOINT_TOL:
                        continue
                    if occlusion and (segment_blocked(tx, r1, walls, skip=(i,))
                                      or segment_blocked(r1, r2, walls, skip=(i, j))
                                      or segment_blocked(r2, ue, walls, skip=(j,))):
                        continue
                    paths.append(SpecularPath(2, (r1, r2), segs, (i, j)))

    paths.sort(key=lambda p: (p.total_length, p.order))
    return paths


def _rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def sample_scatterers(region: ScattererRegion, n: int, rng) -> ScattererSet:
    """Draw ``n`` equally weighted scatterers from the truncated Gaussian.

    Uses the exact polar inverse transform of the truncated density driven by a
    scrambled Sobol sequence, so the empirical measure converges faster than
    plain pseudo-random draws. Deterministic for a fixed seed.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    gen = _rng(rng)
    sobol = qmc.Sobol(d=2, scramble=True, seed=gen)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        u = sobol.random(n)
    tail = region.gaussian_mass
    rho = np.sqrt(-2.0 * np.log1p(-u[:, 0] * tail))
    theta = 2.0 * np.pi * u[:, 1]
    pos = np.column_stack([
        region.center.x + region.sigma_x * rho * np.cos(theta),
        region.center.y + region.sigma_y * rho * np.sin(theta),
    ])
    return ScattererSet(pos, np.full(n, 1.0 / n))


def bistatic_lengths(tx, ue, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distances tx->scatterer and scatterer->ue for each row of ``xy``."""
    tx, ue = as_point(tx), as_point(ue)
    r_d = np.hypot(xy[:, 0] - tx.x, xy[:, 1] - tx.y)
    r_t = np.hypot(xy[:, 0] - ue.x, xy[:, 1] - ue.y)
    return r_d, r_t


def ellipse_arc_mass(tx, ue, tau_lo: float, tau_hi: float, region: ScattererRegion,
                     n: int = 1 << 16, seed: int = 0,
                     scatterers: ScattererSet | None = None) -> float:
    """Probability mass of ``region`` whose bistatic delay lies in [tau_lo, tau_hi)."""
    tx, ue = as_point(tx), as_point(ue)
    lo, hi = SPEED_OF_LIGHT * tau_lo, SPEED_OF_LIGHT * tau_hi
    direct = tx.dist(ue)
    if lo < direct * (1.0 - 1e-12):
        raise GeometryError(f"delay band starts below the direct path ({lo:.6g} m < {direct:.6g} m)")
    if not hi > lo:
        raise GeometryError("tau_hi must exceed tau_lo")
    pts = scatterers if scatterers is not None else sample_scatterers(region, n, seed)
    r_d, r_t = bistatic_lengths(tx, ue, pts.positions)
    ell = r_d + r_t
    inside = (ell >= lo) & (ell < hi)
    return float(pts.weights[inside].sum())


def trajectory_arc_coverage(tx, positions: Sequence, region: ScattererRegion, band_width: float,
                            n: int = 1 << 15, seed: int = 0,
                            scatterers: ScattererSet | None = None) -> float:
    """Fraction of region mass swept by the dominant delay band of each position.

    At every position the region is binned into delay taps of ``band_width``
    path-length metres (tap k covers [(k - 1/2) w, (k + 1/2) w)); the tap holding
    the most region mass is the observed arc band. Coverage is the mass of the
    union of those bands over the trajectory.
    """
    if not positions:
        raise ValueError("need at least one position")
    if not band_width > 0:
        raise ValueError("band_width must be positive")
    pts = scatterers if scatterers is not None else sample_scatterers(region, n, seed)
    covered = np.zeros(len(pts), dtype=bool)
    for p in positions:
        r_d, r_t = bistatic_lengths(tx, p, pts.positions)
        taps = np.rint((r_d + r_t) / band_width).astype(np.int64)
        base = taps.min()
        mass = np.bincount(taps - base, weights=pts.weights)
        covered |= taps == base + int(np.argmax(mass))
    return float(pts.weights[covered].sum())


# -- scene file --------------------------------------------------------------

def parse_scene(text: str) -> Scene:
    walls, regions = [], []
    tx = bounds = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *vals = line.split()
        try:
            nums = [float(v) for v in vals]
        except ValueError as exc:
            raise SceneFormatError(f"line {lineno}: {exc}") from None
        expected = {"wall": 4, "tx": 2, "region": (4, 5), "bounds": 4}.get(key)
        if expected is None:
            raise SceneFormatError(f"line {lineno}: unknown record {key!r}")
        ok = len(nums) in expected if isinstance(expected, tuple) else len(nums) == expected
        if not ok:
            raise SceneFormatError(f"line {lineno}: wrong field count for {key!r}")
        try:
            if key == "wall":
                walls.append(WallSegment(Point2D(nums[0], nums[1]), Point2D(nums[2], nums[3])))
            elif key == "tx":
                tx = Point2D(*nums)
            elif key == "region":
                regions.append(ScattererRegion(Point2D(nums[0], nums[1]), *nums[2:]))
            else:
                bounds = tuple(nums)
        except GeometryError as exc:
            raise SceneFormatError(f"line {lineno}: {exc}") from None
    if tx is None or bounds is None:
        raise SceneFormatError("scene needs both a 'tx' and a 'bounds' record")
    return Scene(walls, tx, regions, bounds)


def format_scene(scene: Scene) -> str:
    out = ["# mudinet scene: lengths in metres",
           "bounds {:g} {:g} {:g} {:g}".format(*scene.bounds),
           f"tx {scene.tx.x:g} {scene.tx.y:g}"]
    for w in scene.walls:
        out.append(f"wall {w.a.x:g} {w.a.y:g} {w.b.x:g} {w.b.y:g}")
    for r in scene.regions:
        out.append(f"region {r.center.x:g} {r.center.y:g} {r.sigma_x:g} {r.sigma_y:g} {r.truncation:g}")
    return "\n".join(out) + "\n"


def load_scene(path) -> Scene:
    return parse_scene(Path(path).read_text())


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(format_scene(scene))


def box_walls(x0: float, y0: float, x1: float, y1: float) -> list[WallSegment]:
    c = [Point2D(x0, y0), Point2D(x1, y0), Point2D(x1, y1), Point2D(x0, y1)]
    return [WallSegment(c[k], c[(k + 1) % 4]) for k in range(4)]


def two_room_scene() -> Scene:
    """10 m x 8 m floor split by a partition at x = 5 with a 2 m doorway."""
    walls = box_walls(0.0, 0.0, 10.0, 8.0)
    walls += [
        WallSegment(Point2D(5.0, 0.0), Point2D(5.0, 3.0)),
        WallSegment(Point2D(5.0, 5.0), Point2D(5.0, 8.0)),
    ]
    regions = [
        ScattererRegion(Point2D(7.8, 5.8), 0.6, 0.4),
        ScattererRegion(Point2D(2.0, 2.0), 0.4, 0.5),
    ]
    return Scene(walls, Point2D(2.5, 5.5), regions, (0.0, 0.0, 10.0, 8.0))

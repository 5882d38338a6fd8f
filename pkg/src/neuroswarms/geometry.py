"""Maze environments: SVG-subset parsing, raster interior, wall field, visibility.

Coordinates are in points with the SVG convention (x to the right, y down).
The interior raster has one cell per point; cell ``(row j, col i)`` covers
``[i, i+1) x [j, j+1)`` and is sampled at its center ``(i + 0.5, j + 0.5)``.
"""
from __future__ import annotations

import hashlib
import math
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import InvalidEnvironment, OutsideEnvironment, ParseError, UnsupportedGeometry

__all__ = [
    "Marker",
    "EnvironmentMap",
    "WallField",
    "parse_environment",
    "load_environment",
    "serialize_environment",
    "build_wall_field",
    "line_of_sight",
    "notional_radius",
    "point_segment_distance",
    "segments_intersect",
]

ENTITY_KINDS = ("cue", "reward", "spawn")
_NUMBER = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_PATH_TOKEN = re.compile(rf"[A-Za-z]|{_NUMBER}")
_CURVED = set("CcSsQqTtAa")
_REJECTED_ELEMENTS = {"ellipse", "line", "polyline"}


@dataclass(frozen=True)
class Marker:
    """A cue, reward, or spawn disc. ``radius`` is only meaningful for spawn discs."""

    id: str
    x: float
    y: float
    radius: float = 0.0

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True, eq=False)
class EnvironmentMap:
    width: float
    height: float
    loops: tuple  # closed wall polygons, each an (k, 2) array
    interior: np.ndarray  # bool (rows, cols), True = allowable location
    cues: tuple = ()
    rewards: tuple = ()
    spawn_discs: tuple = ()
    source_hash: str = ""
    walls: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        segs = []
        for loop in self.loops:
            k = len(loop)
            for a in range(k):
                p, q = loop[a], loop[(a + 1) % k]
                if p[0] != q[0] or p[1] != q[1]:
                    segs.append((p[0], p[1], q[0], q[1]))
        walls = np.asarray(segs, dtype=float).reshape(-1, 4)
        walls.setflags(write=False)
        self.interior.setflags(write=False)
        object.__setattr__(self, "walls", walls)

    @property
    def shape(self):
        return self.interior.shape

    @property
    def interior_area(self) -> float:
        return float(self.interior.sum())

    @property
    def notional_radius(self) -> float:
        return notional_radius(self)

    @property
    def cue_positions(self) -> np.ndarray:
        return np.array([m.position for m in self.cues]).reshape(-1, 2)

    @property
    def reward_positions(self) -> np.ndarray:
        return np.array([m.position for m in self.rewards]).reshape(-1, 2)

    def interior_bins(self, size: float = 10.0) -> int:
        """Number of ``size``-point square bins holding at least one interior cell."""
        rows, cols = self.interior.shape
        r, c = np.nonzero(self.interior)
        keys = (r // size).astype(np.int64) * (int(cols // size) + 1) + (c // size).astype(np.int64)
        return int(np.unique(keys).size)

    def contains(self, points) -> np.ndarray:
        """Interior predicate for an ``(..., 2)`` array of points."""
        pts = np.asarray(points, dtype=float)
        col = np.floor(pts[..., 0]).astype(np.int64)
        row = np.floor(pts[..., 1]).astype(np.int64)
        rows, cols = self.interior.shape
        ok = (col >= 0) & (col < cols) & (row >= 0) & (row < rows)
        out = np.zeros(pts.shape[:-1], dtype=bool)
        out[ok] = self.interior[row[ok], col[ok]]
        return out


@dataclass(frozen=True, eq=False)
class WallField:
    """Distance to the nearest wall and inward unit normals on the interior raster.

    Exterior cells carry ``d = 0`` and a normal pointing back toward the
    nearest wall, so blending with it always steers inward.
    """

    d: np.ndarray  # (rows, cols)
    n: np.ndarray  # (rows, cols, 2)
    nearest_interior: np.ndarray  # (rows, cols, 2) int row/col of closest interior cell
    resolution: float = 1.0

    def sample(self, points):
        """Bilinear ``d`` and renormalised ``n`` at arbitrary points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        rows, cols = self.d.shape
        fx = np.clip(pts[:, 0] - 0.5, 0.0, cols - 1.0)
        fy = np.clip(pts[:, 1] - 0.5, 0.0, rows - 1.0)
        i0 = np.minimum(np.floor(fx).astype(np.int64), cols - 2)
        j0 = np.minimum(np.floor(fy).astype(np.int64), rows - 2)
        tx = (fx - i0)[:, None]
        ty = (fy - j0)[:, None]

        def lerp(g):
            g00, g10 = g[j0, i0], g[j0, i0 + 1]
            g01, g11 = g[j0 + 1, i0], g[j0 + 1, i0 + 1]
            if g.ndim == 2:
                g00, g10, g01, g11 = (a[:, None] for a in (g00, g10, g01, g11))
            return (1 - ty) * ((1 - tx) * g00 + tx * g10) + ty * ((1 - tx) * g01 + tx * g11)

        d = lerp(self.d)[:, 0]
        n = lerp(self.n)
        norm = np.linalg.norm(n, axis=1)
        fallback = self.n[np.floor(fy + 0.5).astype(np.int64), np.floor(fx + 0.5).astype(np.int64)]
        n = np.where(norm[:, None] > 1e-12, n / np.maximum(norm, 1e-300)[:, None], fallback)
        return d, n


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _length(value, name):
    if value is None:
        raise ParseError(f"missing attribute {name!r}")
    m = re.fullmatch(rf"\s*({_NUMBER})\s*(px|pt)?\s*", value)
    if not m:
        raise ParseError(f"bad numeric attribute {name}={value!r}")
    return float(m.group(1))


def _points(text: str) -> np.ndarray:
    nums = [float(v) for v in re.findall(_NUMBER, text or "")]
    if len(nums) < 6 or len(nums) % 2:
        raise ParseError(f"polygon needs >= 3 coordinate pairs, got {text!r}")
    return np.array(nums).reshape(-1, 2)


def _path_loops(d: str) -> list:
    tokens = _PATH_TOKEN.findall(d or "")
    loops, current, cmd = [], [], None
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if tok.isalpha():
            if tok in _CURVED:
                raise UnsupportedGeometry(f"curved path command {tok!r} is not supported")
            if tok not in "MLZz":
                raise UnsupportedGeometry(f"path command {tok!r} is not supported (M/L/Z only)")
            cmd = tok
            i += 1
            if cmd in "Zz":
                if len(current) >= 3:
                    loops.append(np.array(current))
                current = []
                cmd = None
            elif cmd == "M" and len(current) >= 3:
                loops.append(np.array(current))
                current = []
            elif cmd == "M":
                current = []
            continue
        if cmd is None:
            raise ParseError(f"path data starts without a command: {d!r}")
        try:
            x, y = float(tokens[i]), float(tokens[i + 1])
        except (IndexError, ValueError):
            raise ParseError(f"odd coordinate count in path {d!r}") from None
        current.append((x, y))
        i += 2
        if cmd == "M":
            cmd = "L"
    if len(current) >= 3:
        loops.append(np.array(current))
    return loops


def _entity_kind(el) -> str | None:
    classes = (el.get("class") or "").split()
    for kind in ENTITY_KINDS:
        if kind in classes:
            return kind
    for child in el:
        label = (child.text or "").strip().lower()
        if label in ENTITY_KINDS:
            return label
    label = (el.text or "").strip().lower()
    return label if label in ENTITY_KINDS else None


def rasterize_even_odd(loops, rows: int, cols: int) -> np.ndarray:
    """Even-odd fill of closed polygons, sampled at cell centers."""
    counts = np.zeros((rows, cols + 1), dtype=np.int64)
    yc = np.arange(rows) + 0.5
    for loop in loops:
        p = np.asarray(loop, dtype=float)
        q = np.roll(p, -1, axis=0)
        for (x1, y1), (x2, y2) in zip(p, q):
            if y1 == y2:
                continue
            lo, hi = min(y1, y2), max(y1, y2)
            jj = np.nonzero((yc >= lo) & (yc < hi))[0]
            if jj.size == 0:
                continue
            xi = x1 + (yc[jj] - y1) * (x2 - x1) / (y2 - y1)
            # first cell whose center lies strictly right of the crossing
            first = np.clip(np.floor(xi - 0.5).astype(np.int64) + 1, 0, cols)
            np.add.at(counts, (jj, first), 1)
    return (np.cumsum(counts, axis=1)[:, :cols] % 2).astype(bool)


def parse_environment(file_text: str | bytes) -> EnvironmentMap:
    """Parse an SVG-subset environment description."""
    raw = file_text.encode("utf-8") if isinstance(file_text, str) else bytes(file_text)
    try:
        root = ET.fromstring(raw)
    except ET.ParseError as exc:
        raise ParseError(f"malformed XML: {exc}") from exc
    if _local(root.tag) != "svg":
        raise ParseError("root element must be <svg>")

    width, height = root.get("width"), root.get("height")
    if width is None or height is None:
        vb = [float(v) for v in re.findall(_NUMBER, root.get("viewBox") or "")]
        if len(vb) != 4:
            raise ParseError("document needs width/height or a viewBox")
        width, height = vb[2], vb[3]
    else:
        width, height = _length(width, "width"), _length(height, "height")
    if width <= 0 or height <= 0:
        raise ParseError("document width/height must be positive")

    loops, entities = [], {k: [] for k in ENTITY_KINDS}
    for el in root.iter():
        tag = _local(el.tag)
        if tag == "rect":
            x, y = _length(el.get("x", "0"), "x"), _length(el.get("y", "0"), "y")
            w, h = _length(el.get("width"), "width"), _length(el.get("height"), "height")
            if w > 0 and h > 0:
                loops.append(np.array([(x, y), (x + w, y), (x + w, y + h), (x, y + h)]))
        elif tag == "polygon":
            loops.append(_points(el.get("points")))
        elif tag == "path":
            loops.extend(_path_loops(el.get("d")))
        elif tag == "circle":
            kind = _entity_kind(el)
            if kind is None:
                continue
            cx, cy = _length(el.get("cx", "0"), "cx"), _length(el.get("cy", "0"), "cy")
            r = _length(el.get("r", "0"), "r")
            idx = len(entities[kind])
            entities[kind].append(Marker(el.get("id") or f"{kind}{idx}", cx, cy, r))
        elif tag in _REJECTED_ELEMENTS:
            raise UnsupportedGeometry(f"<{tag}> elements are not supported")

    if not loops:
        raise InvalidEnvironment("environment defines no wall geometry")
    rows, cols = int(math.ceil(height)), int(math.ceil(width))
    interior = rasterize_even_odd(loops, rows, cols)
    env = EnvironmentMap(
        width=width,
        height=height,
        loops=tuple(np.asarray(lp, dtype=float) for lp in loops),
        interior=interior,
        cues=tuple(entities["cue"]),
        rewards=tuple(entities["reward"]),
        spawn_discs=tuple(entities["spawn"]),
        source_hash=hashlib.sha256(raw).hexdigest(),
    )
    if not interior.any():
        raise InvalidEnvironment("environment interior is empty")
    for kind in ENTITY_KINDS:
        for m in entities[kind]:
            if not env.contains(m.position):
                raise InvalidEnvironment(f"{kind} {m.id!r} at ({m.x}, {m.y}) lies outside the interior")
    return env


def load_environment(path) -> EnvironmentMap:
    return parse_environment(Path(path).read_bytes())


def serialize_environment(env: EnvironmentMap) -> str:
    """Write ``env`` back out in the same SVG subset; coordinates round-trip exactly."""
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.2" baseProfile="tiny" '
        f'width="{env.width!r}" height="{env.height!r}">',
    ]
    for loop in env.loops:
        pts = " ".join(f"{float(x)!r},{float(y)!r}" for x, y in loop)
        out.append(f'  <polygon points="{pts}"/>')
    for kind, markers in (("cue", env.cues), ("reward", env.rewards), ("spawn", env.spawn_discs)):
        for m in markers:
            out.append(f'  <circle class="{kind}" id="{m.id}" cx="{m.x!r}" cy="{m.y!r}" r="{m.radius!r}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def point_segment_distance(px, py, seg):
    """Distance from points to one segment plus the nearest point on it."""
    x1, y1, x2, y2 = seg
    dx, dy = x2 - x1, y2 - y1
    ll = dx * dx + dy * dy
    t = np.clip(((px - x1) * dx + (py - y1) * dy) / ll, 0.0, 1.0)
    nx, ny = x1 + t * dx, y1 + t * dy
    return np.hypot(px - nx, py - ny), nx, ny


def build_wall_field(env: EnvironmentMap) -> WallField:
    rows, cols = env.interior.shape
    py, px = np.mgrid[0:rows, 0:cols] + 0.5
    best = np.full((rows, cols), np.inf)
    bx = np.zeros((rows, cols))
    by = np.zeros((rows, cols))
    for seg in env.walls:
        if seg[0] == seg[2] and seg[1] == seg[3]:
            continue
        d, nx, ny = point_segment_distance(px, py, seg)
        closer = d < best  # strict: ties keep the lower segment index
        best = np.where(closer, d, best)
        bx = np.where(closer, nx, bx)
        by = np.where(closer, ny, by)

    vx, vy = px - bx, py - by
    norm = np.hypot(vx, vy)
    safe = np.where(norm > 0, norm, 1.0)
    n = np.stack([vx / safe, vy / safe], axis=-1)
    outside = ~env.interior
    n[outside] *= -1.0
    d = np.where(outside, 0.0, best)
    # cells whose center sits exactly on a wall: fall back to the direction of the nearest interior cell
    _, idx = ndimage.distance_transform_edt(outside, return_indices=True)
    near = np.stack([idx[0], idx[1]], axis=-1)
    degenerate = norm == 0
    if degenerate.any():
        dv = np.stack([near[..., 1] - px + 0.5, near[..., 0] - py + 0.5], axis=-1)[degenerate]
        dn = np.linalg.norm(dv, axis=1, keepdims=True)
        n[degenerate] = np.where(dn > 0, dv / np.where(dn > 0, dn, 1.0), [1.0, 0.0])
    for arr in (d, n, near):
        arr.setflags(write=False)
    return WallField(d=d, n=n, nearest_interior=near)


def segments_intersect(ax, ay, bx, by, walls) -> np.ndarray:
    """Which wall segments the open segment ``(a, b)`` touches or crosses."""
    walls = np.asarray(walls, dtype=float).reshape(-1, 4)
    cx, cy, dx, dy = walls.T
    rx, ry = bx - ax, by - ay
    sx, sy = dx - cx, dy - cy
    denom = rx * sy - ry * sx
    qpx, qpy = cx - ax, cy - ay
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (qpx * sy - qpy * sx) / denom
        u = (qpx * ry - qpy * rx) / denom
    eps = 1e-12
    crossing = (np.abs(denom) > eps) & (t > eps) & (t < 1 - eps) & (u >= -eps) & (u <= 1 + eps)
    # collinear overlap counts as blocked
    collinear = (np.abs(denom) <= eps) & (np.abs(qpx * ry - qpy * rx) <= eps)
    if collinear.any():
        rr = rx * rx + ry * ry
        if rr > 0:
            t0 = (qpx * rx + qpy * ry) / rr
            t1 = t0 + (sx * rx + sy * ry) / rr
            lo, hi = np.minimum(t0, t1), np.maximum(t0, t1)
            crossing |= collinear & (hi > eps) & (lo < 1 - eps)
    return crossing


def line_of_sight(env: EnvironmentMap, a, b) -> bool:
    """True iff the open segment from ``a`` to ``b`` meets no wall."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    for name, pt in (("a", a), ("b", b)):
        if not env.contains(pt):
            raise OutsideEnvironment(f"point {name}={tuple(pt)} is outside the interior")
    if a[0] == b[0] and a[1] == b[1]:
        return True
    return not segments_intersect(a[0], a[1], b[0], b[1], env.walls).any()


def notional_radius(env: EnvironmentMap) -> float:
    """Radius of the disc whose area equals the interior area."""
    area = env.interior_area
    if area <= 0:
        raise InvalidEnvironment("environment interior is empty")
    return math.sqrt(area / math.pi)

"""Raster frames of a record as binary PPM images.

Walls black, interior white, agents as discs colored by phase hue, field
locations as small grey dots, rewards as gold stars (hollow once captured),
cues as purple outlined squares.
"""
from __future__ import annotations

import colorsys
import math
from pathlib import Path

import numpy as np

from .engine import SimulationRecord
from .geometry import EnvironmentMap

GOLD = (230, 180, 20)
PURPLE = (120, 40, 160)
GREY = (110, 110, 110)
BLACK = (0, 0, 0)
WHITE = (255, 255, 255)


def phase_color(theta: float) -> tuple:
    r, g, b = colorsys.hsv_to_rgb((theta % (2 * math.pi)) / (2 * math.pi), 0.9, 0.9)
    return int(r * 255), int(g * 255), int(b * 255)


class Canvas:
    def __init__(self, env: EnvironmentMap, scale: int = 1):
        self.scale = int(scale)
        base = np.where(env.interior[..., None], np.uint8(255), np.uint8(0))
        base = np.repeat(base, 3, axis=2)
        self.img = np.repeat(np.repeat(base, self.scale, axis=0), self.scale, axis=1)
        h, w = self.img.shape[:2]
        self.yy, self.xx = np.mgrid[0:h, 0:w] + 0.5

    def _window(self, cx, cy, r):
        s = self.scale
        h, w = self.img.shape[:2]
        r0, r1 = max(int((cy - r) * s) - 1, 0), min(int((cy + r) * s) + 2, h)
        c0, c1 = max(int((cx - r) * s) - 1, 0), min(int((cx + r) * s) + 2, w)
        return slice(r0, r1), slice(c0, c1)

    def disc(self, cx, cy, r, color):
        rs, cs = self._window(cx, cy, r)
        s = self.scale
        mask = (self.xx[rs, cs] / s - cx) ** 2 + (self.yy[rs, cs] / s - cy) ** 2 <= r * r
        self.img[rs, cs][mask] = color

    def polygon(self, pts, color, width=None):
        """Fill ``pts`` (even-odd), or stroke its outline ``width`` points wide."""
        pts = np.asarray(pts, dtype=float)
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        pad = (width or 0) + 1
        rs, cs = self._window((lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, max(hi - lo) / 2 + pad)
        px, py = self.xx[rs, cs] / self.scale, self.yy[rs, cs] / self.scale
        a, b = pts, np.roll(pts, -1, axis=0)
        if width is None:
            inside = np.zeros(px.shape, dtype=bool)
            for (ax, ay), (bx, by) in zip(a, b):
                crosses = (ay > py) != (by > py)
                with np.errstate(divide="ignore", invalid="ignore"):
                    xint = ax + (py - ay) * (bx - ax) / (by - ay)
                inside ^= crosses & (px < xint)
            mask = inside
        else:
            mask = np.zeros(px.shape, dtype=bool)
            for (ax, ay), (bx, by) in zip(a, b):
                ex, ey = bx - ax, by - ay
                L2 = ex * ex + ey * ey or 1.0
                t = np.clip(((px - ax) * ex + (py - ay) * ey) / L2, 0.0, 1.0)
                mask |= (px - ax - t * ex) ** 2 + (py - ay - t * ey) ** 2 <= (width / 2) ** 2
        self.img[rs, cs][mask] = color


def star_points(cx, cy, r_out, r_in=None, n=5):
    r_in = r_out * 0.45 if r_in is None else r_in
    ang = -math.pi / 2 + np.arange(2 * n) * math.pi / n
    rad = np.where(np.arange(2 * n) % 2 == 0, r_out, r_in)
    return np.stack([cx + rad * np.cos(ang), cy + rad * np.sin(ang)], axis=1)


def render_frame(env: EnvironmentMap, record: SimulationRecord, t: float, scale: int = 1) -> np.ndarray:
    """RGB frame of the sample nearest ``t``; an empty record gives the bare arena."""
    canvas = Canvas(env, scale)
    for cue in env.cues:
        half = max(cue.radius, 5.0)
        sq = [(cue.x - half, cue.y - half), (cue.x + half, cue.y - half),
              (cue.x + half, cue.y + half), (cue.x - half, cue.y + half)]
        canvas.polygon(sq, PURPLE, width=1.5)
    captured = {rid for et, _a, rid in record.events if et <= t + 1e-9}
    for reward in env.rewards:
        star = star_points(reward.x, reward.y, max(reward.radius, 9.0))
        if reward.id in captured:
            canvas.polygon(star, GOLD, width=1.5)
        else:
            canvas.polygon(star, GOLD)
    if len(record.t):
        k = record.sample_index(t)
        for fx, fy in record.x_s[k]:
            canvas.disc(fx, fy, 1.0, GREY)
        agents = record.x[k]
        single = agents.shape[0] != record.theta.shape[1]
        for a, (ax, ay) in enumerate(agents):
            color = (40, 170, 60) if single else phase_color(record.theta[k, a])
            canvas.disc(ax, ay, 6.0 if single else 3.0, color)
        if single:
            # single-entity runs color the particles by phase instead
            for i, (fx, fy) in enumerate(record.x_s[k]):
                canvas.disc(fx, fy, 1.5, phase_color(record.theta[k, i]))
    return canvas.img


def write_ppm(image: np.ndarray, path) -> None:
    image = np.ascontiguousarray(image, dtype=np.uint8)
    h, w = image.shape[:2]
    with Path(path).open("wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P6":
        raise ValueError("not a binary PPM file")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError("only 8-bit PPM is supported")
    return np.frombuffer(parts[4][: w * h * 3], dtype=np.uint8).reshape(h, w, 3)

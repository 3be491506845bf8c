"""Oriented grasp rectangles in image coordinates.

Image coordinates are (x, y) = (column, row) with pixel centers at integers.
A rectangle has a length axis ``u = (cos a, sin a)`` running parallel to the
gripper plates and a width axis ``v = (-sin a, cos a)`` along which the plates
close.  The two plates are the edges at ``center -/+ (wid / 2) * v``; the one on
the negative side is called the left plate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def normalize_angle(angle: float) -> float:
    """Fold an angle into [0, pi)."""
    a = math.fmod(angle, math.pi)
    if a < 0:
        a += math.pi
    if a >= math.pi:
        a -= math.pi
    return a


def angle_distance(a: float, b: float) -> float:
    """Distance between two orientations modulo pi, in [0, pi/2]."""
    d = abs(normalize_angle(a) - normalize_angle(b))
    return min(d, math.pi - d)


@dataclass(frozen=True)
class GraspRect:
    cx: float
    cy: float
    angle: float
    len: float
    wid: float

    def __post_init__(self):
        if not (self.len > 0 and self.wid > 0):
            raise ValueError(f"rectangle sides must be positive, got len={self.len}, wid={self.wid}")
        object.__setattr__(self, "angle", normalize_angle(float(self.angle)))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy])

    @property
    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        c, s = math.cos(self.angle), math.sin(self.angle)
        return np.array([c, s]), np.array([-s, c])

    @property
    def area(self) -> float:
        return self.len * self.wid

    def corners(self) -> np.ndarray:
        """Vertices (4, 2) in counter-clockwise order (for y pointing down: clockwise on screen).

        The first edge runs along the length axis, matching the Cornell
        annotation convention.
        """
        u, v = self.axes
        hl, hw = 0.5 * self.len * u, 0.5 * self.wid * v
        c = self.center
        return np.array([c - hl - hw, c + hl - hw, c + hl + hw, c - hl + hw])

    def plate_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """(left, right) gripper plate midpoints."""
        _, v = self.axes
        off = 0.5 * self.wid * v
        return self.center - off, self.center + off

    def plate_segments(self) -> tuple[np.ndarray, np.ndarray]:
        """Endpoints (2, 2) of the left and right plate edges."""
        p = self.corners()
        return p[[0, 1]], p[[3, 2]]

    @classmethod
    def from_vertices(cls, pts) -> GraspRect:
        """Build from four vertices; the first edge gives angle and length.

        Opposite edges are averaged so slightly non-rectangular annotations
        still produce a sensible fit.
        """
        p = np.asarray(pts, dtype=float).reshape(4, 2)
        if not np.all(np.isfinite(p)):
            raise ValueError("non-finite vertex")
        center = p.mean(axis=0)
        e0 = p[1] - p[0]
        e2 = p[2] - p[3]
        length = 0.5 * (np.hypot(*e0) + np.hypot(*e2))
        wid = 0.5 * (np.hypot(*(p[2] - p[1])) + np.hypot(*(p[3] - p[0])))
        angle = math.atan2(e0[1], e0[0])
        return cls(float(center[0]), float(center[1]), angle, float(length), float(wid))

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.cx, self.cy, self.angle, self.len, self.wid)

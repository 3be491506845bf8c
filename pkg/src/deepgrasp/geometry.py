"""Convex polygon helpers used for rectangle overlap."""

import numpy as np


def polygon_area(poly):
    """Signed shoelace area of a polygon given as (n, 2) vertices."""
    p = np.asarray(poly, dtype=float)
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _ccw(poly):
    p = np.asarray(poly, dtype=float)
    return p if polygon_area(p) >= 0 else p[::-1]


def clip_convex(subject, clip):
    """Sutherland-Hodgman clipping of ``subject`` against convex ``clip``.

    Both polygons are (n, 2) vertex arrays in either orientation.  Returns the
    intersection polygon (possibly empty, shape (0, 2)).
    """
    output = [tuple(v) for v in _ccw(subject)]
    c = _ccw(clip)
    n = len(c)
    for k in range(n):
        if not output:
            break
        ax, ay = c[k]
        bx, by = c[(k + 1) % n]
        ex, ey = bx - ax, by - ay

        def side(pt):
            return ex * (pt[1] - ay) - ey * (pt[0] - ax)

        inp, output = output, []
        prev = inp[-1]
        s_prev = side(prev)
        for cur in inp:
            s_cur = side(cur)
            if s_cur >= 0:
                if s_prev < 0:
                    output.append(_cross_point(prev, cur, s_prev, s_cur))
                output.append(cur)
            elif s_prev >= 0:
                output.append(_cross_point(prev, cur, s_prev, s_cur))
            prev, s_prev = cur, s_cur
    return np.array(output, dtype=float).reshape(-1, 2)


def _cross_point(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def intersection_area(a, b):
    return abs(polygon_area(clip_convex(a, b)))


def point_in_convex(points, poly):
    """Boolean mask of which (m, 2) points fall inside convex ``poly``."""
    pts = np.asarray(points, dtype=float)
    c = _ccw(poly)
    inside = np.ones(len(pts), dtype=bool)
    for k in range(len(c)):
        a, b = c[k], c[(k + 1) % len(c)]
        cross = (b[0] - a[0]) * (pts[:, 1] - a[1]) - (b[1] - a[1]) * (pts[:, 0] - a[0])
        inside &= cross >= 0
    return inside

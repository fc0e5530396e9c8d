"""Independent reference implementations used as test oracles.

These deliberately avoid the library's vectorized code paths: plain Python
loops and textbook formulas, so a bug in the implementation cannot hide in
its own oracle.
"""

from __future__ import annotations

import math

import numpy as np


def rot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0, 0], [0, c, -s], [0, s, c]])


def rot_y(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1.0, 0], [-s, 0, c]])


def rot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


def random_rotation(rng) -> np.ndarray:
    return rot_z(rng.uniform(-math.pi, math.pi)) \
        @ rot_y(rng.uniform(-math.pi, math.pi)) \
        @ rot_x(rng.uniform(-math.pi, math.pi))


def brute_force_refine(lines, cand, radius_px, shape=None):
    """Per-pixel exhaustive argmin of the summed squared line distances.

    lines: list of (nx, ny, c) unit-normal coefficients; scans every lattice
    pixel of the open disk around cand, accumulating the objective in line
    order, with ties broken by distance to cand then (row, col).
    """
    cu, cv = float(cand[0]), float(cand[1])
    best = None
    for v in range(math.ceil(cv - radius_px), math.floor(cv + radius_px) + 1):
        for u in range(math.ceil(cu - radius_px), math.floor(cu + radius_px) + 1):
            du, dv = u - cu, v - cv
            if du * du + dv * dv >= radius_px * radius_px:
                continue
            if shape is not None and not (0 <= u < shape[1] and 0 <= v < shape[0]):
                continue
            obj = 0.0
            for nx, ny, c in lines:
                t = nx * u + ny * v - c
                obj += t * t
            key = (obj, du * du + dv * dv, v, u)
            if best is None or key < best:
                best = key
    if best is None:
        raise ValueError("empty disk")
    obj, _, v, u = best
    return np.array([float(u), float(v)]), obj


def closed_form_line_intersection(lines):
    """Least-squares point via the normal equations of the line system."""
    m = np.zeros((2, 2))
    b = np.zeros(2)
    for nx, ny, c in lines:
        n = np.array([nx, ny])
        m += np.outer(n, n)
        b += c * n
    return np.linalg.solve(m, b)


def ring_degree(img: np.ndarray, r: int, c: int) -> int:
    """Connected foreground runs around the 8-ring of a pixel (loop oracle)."""
    offs = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]
    vals = []
    h, w = img.shape
    for dr, dc in offs:
        rr, cc = r + dr, c + dc
        vals.append(bool(img[rr, cc]) if 0 <= rr < h and 0 <= cc < w else False)
    return sum(1 for a, b in zip(vals, vals[1:] + vals[:1]) if (not a) and b)


def junction_pixels(img: np.ndarray) -> list:
    return [(r, c) for r, c in zip(*np.nonzero(img))
            if ring_degree(img, int(r), int(c)) >= 3]


def nearest_node_brute(ids, positions, p):
    best = None
    for nid, pos in zip(ids, positions):
        d = math.hypot(pos[0] - p[0], pos[1] - p[1])
        key = (d, int(nid))
        if best is None or key < best:
            best = key
    return best  # (distance, node id)

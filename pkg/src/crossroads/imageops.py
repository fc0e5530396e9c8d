"""Binary raster primitives: morphology, thinning, corner response.

All images are numpy arrays indexed [row, col] with foreground = 1.  Pixels
outside the array are background; closing pads by the element radius so the
result matches the infinite-plane operation exactly (and stays idempotent).
"""

from __future__ import annotations

import cv2
import numpy as np

# Corner-response constants, calibrated on rasterized synthetic skeletons so
# that every junction type (worst: diagonal T, 1.8e-5) clears the floor while
# staircase artifacts of straight segments at any orientation (worst 1.3e-5
# before end masking, far less after) stay below it.
HARRIS_DERIV_SIGMA = 1.0
HARRIS_MIN_RESPONSE = 2.0e-5
LINE_END_MASK_RADIUS = 12


def disk_element(radius: int) -> np.ndarray:
    """Circular structuring element: all offsets with |d| <= radius."""
    if radius < 1:
        raise ValueError("structuring element radius must be >= 1")
    span = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(span, span, indexing="ij")
    return (dy * dy + dx * dx <= radius * radius).astype(np.uint8)


def binary_close(img: np.ndarray, radius: int) -> np.ndarray:
    """Morphological closing with a disk; fills gaps up to ~2*radius."""
    el = disk_element(radius)
    pad = radius + 1
    work = np.pad(img.astype(np.uint8), pad)
    work = cv2.dilate(work, el, borderType=cv2.BORDER_CONSTANT, borderValue=0)
    work = cv2.erode(work, el, borderType=cv2.BORDER_CONSTANT, borderValue=0)
    return work[pad:-pad, pad:-pad].astype(bool)


def binary_open(img: np.ndarray, radius: int) -> np.ndarray:
    """Morphological opening with a disk; removes blobs thinner than it."""
    el = disk_element(radius)
    work = img.astype(np.uint8)
    work = cv2.erode(work, el, borderType=cv2.BORDER_CONSTANT, borderValue=0)
    work = cv2.dilate(work, el, borderType=cv2.BORDER_CONSTANT, borderValue=0)
    return work.astype(bool)


# Neighbour bit weights for code images, clockwise from north:
# N=1, NE=2, E=4, SE=8, S=16, SW=32, W=64, NW=128.
_CODE_KERNEL = np.array(
    [[128, 1, 2],
     [64, 0, 4],
     [32, 16, 8]],
    dtype=np.float32,
)


def _neighbor_codes(img: np.ndarray) -> np.ndarray:
    return cv2.filter2D(img.astype(np.uint8), -1, _CODE_KERNEL,
                        borderType=cv2.BORDER_CONSTANT)


def _ring(code: int) -> list[int]:
    return [(code >> i) & 1 for i in range(8)]


def _runs(code: int) -> int:
    ring = _ring(code)
    return sum(1 for x, y in zip(ring, ring[1:] + ring[:1]) if (x, y) == (0, 1))


def _thinning_luts() -> tuple[np.ndarray, np.ndarray]:
    lut1 = np.zeros(256, dtype=bool)
    lut2 = np.zeros(256, dtype=bool)
    for code in range(256):
        n, ne, e, se, s, sw, w, nw = _ring(code)
        b = n + ne + e + se + s + sw + w + nw
        if not (2 <= b <= 6 and _runs(code) == 1):
            continue
        lut1[code] = n * e * s == 0 and e * s * w == 0
        lut2[code] = n * e * w == 0 and n * s * w == 0
    return lut1, lut2


_LUT_STEP1, _LUT_STEP2 = _thinning_luts()
_RUNS_LUT = np.array([_runs(c) for c in range(256)], dtype=np.uint8)


def ring_runs(img: np.ndarray) -> np.ndarray:
    """Per-pixel count of connected foreground runs around the 8-ring.

    On a one-pixel-wide skeleton this is the graph degree: 1 at line ends,
    2 along lines, >= 3 at junctions.
    """
    return _RUNS_LUT[_neighbor_codes(img)]


def thin(img: np.ndarray) -> np.ndarray:
    """Iterative two-subpass thinning down to a one-pixel-wide skeleton.

    Each subpass simultaneously deletes every foreground pixel whose
    8-neighbourhood matches the classic deletability conditions (2<=B<=6,
    one 0->1 transition around the ring, directional products per subpass).
    The parallel deletion can erase a small symmetric component entirely
    (a 2x2 remnant dies in one pass); such components are re-anchored at
    their innermost pixel so the skeleton keeps one component per input
    component.
    """
    src = img.astype(np.uint8)
    work = src.copy()
    while True:
        changed = False
        for lut in (_LUT_STEP1, _LUT_STEP2):
            kill = lut[_neighbor_codes(work)] & (work == 1)
            if kill.any():
                work[kill] = 0
                changed = True
        if not changed:
            break
    labels, n = label_components(src)
    if n:
        kept = np.unique(labels[work == 1])
        for comp in range(1, n + 1):
            if comp in kept:
                continue
            mask = (labels == comp).astype(np.uint8)
            dt = cv2.distanceTransform(mask, cv2.DIST_L2, 5)
            r, c = np.unravel_index(int(np.argmax(dt)), dt.shape)
            work[r, c] = 1
    return work.astype(bool)


def label_components(img: np.ndarray) -> tuple[np.ndarray, int]:
    """8-connected component labels (0 = background) and component count."""
    n, labels = cv2.connectedComponents(img.astype(np.uint8), connectivity=8)
    return labels, n - 1


def count_components(img: np.ndarray) -> int:
    return label_components(img)[1]


def harris_response(img: np.ndarray, k: float = 0.04, sigma: float = 2.0) -> np.ndarray:
    """Corner response det(M) - k*trace(M)^2 of the smoothed structure tensor.

    The raster is pre-smoothed at a fixed small scale before differencing so
    that rasterization staircases on oblique lines do not masquerade as
    corners.
    """
    f = cv2.GaussianBlur(img.astype(np.float64), (0, 0), HARRIS_DERIV_SIGMA)
    gy, gx = np.gradient(f)
    sxx = cv2.GaussianBlur(gx * gx, (0, 0), sigma)
    syy = cv2.GaussianBlur(gy * gy, (0, 0), sigma)
    sxy = cv2.GaussianBlur(gx * gy, (0, 0), sigma)
    return (sxx * syy - sxy * sxy) - k * (sxx + syy) ** 2


def suppress_line_ends(resp: np.ndarray, skeleton: np.ndarray,
                       radius: int = LINE_END_MASK_RADIUS) -> np.ndarray:
    """Zero the response around skeleton terminations.

    A free line end produces a genuine positive corner response but is never
    a road crossing; masking it keeps the relative threshold meaningful on
    images whose strongest feature would otherwise be an end cap.
    """
    ends = skeleton & (ring_runs(skeleton) <= 1)
    if not ends.any():
        return resp
    zone = cv2.dilate(ends.astype(np.uint8), disk_element(radius),
                      borderType=cv2.BORDER_CONSTANT, borderValue=0) > 0
    out = resp.copy()
    out[zone] = 0.0
    return out


def _subpixel_offset(resp: np.ndarray, row: int, col: int) -> tuple[float, float]:
    """Quadratic peak fit on the 3x3 patch around a response maximum."""
    if not (0 < row < resp.shape[0] - 1 and 0 < col < resp.shape[1] - 1):
        return 0.0, 0.0
    patch = resp[row - 1:row + 2, col - 1:col + 2]
    dx = (patch[1, 2] - patch[1, 0]) / 2.0
    dy = (patch[2, 1] - patch[0, 1]) / 2.0
    dxx = patch[1, 2] - 2.0 * patch[1, 1] + patch[1, 0]
    dyy = patch[2, 1] - 2.0 * patch[1, 1] + patch[0, 1]
    dxy = (patch[2, 2] - patch[2, 0] - patch[0, 2] + patch[0, 0]) / 4.0
    det = dxx * dyy - dxy * dxy
    if det <= 0 or dxx >= 0:  # not a proper maximum
        return 0.0, 0.0
    ox = -(dyy * dx - dxy * dy) / det
    oy = -(dxx * dy - dxy * dx) / det
    if abs(ox) > 0.5 or abs(oy) > 0.5:
        return 0.0, 0.0
    return ox, oy


def find_peaks(
    resp: np.ndarray,
    rel_threshold: float,
    nms_radius: int,
    min_response: float = HARRIS_MIN_RESPONSE,
    sub_pixel: bool = True,
) -> np.ndarray:
    """Thresholded response maxima with greedy radius-based suppression.

    Returns an (K, 2) array of (x, y) = (col, row) positions, strongest
    first; positions are sub-pixel refined unless disabled.  Accepted peaks
    are pairwise at least `nms_radius` apart.
    """
    gmax = float(resp.max(initial=0.0))
    thr = max(rel_threshold * gmax, min_response)
    if gmax < thr or gmax <= 0.0:
        return np.empty((0, 2), dtype=np.float64)
    local_max = cv2.dilate(resp, np.ones((3, 3), np.uint8),
                           borderType=cv2.BORDER_CONSTANT, borderValue=0.0)
    rows, cols = np.nonzero((resp >= thr) & (resp >= local_max))
    if rows.size == 0:
        return np.empty((0, 2), dtype=np.float64)
    order = np.lexsort((cols, rows, -resp[rows, cols]))
    pts: list[tuple[float, float]] = []
    for i in order:
        r, c = int(rows[i]), int(cols[i])
        x, y = float(c), float(r)
        if sub_pixel:
            ox, oy = _subpixel_offset(resp, r, c)
            x, y = x + ox, y + oy
        if all((x - px) ** 2 + (y - py) ** 2 >= nms_radius * nms_radius
               for px, py in pts):
            pts.append((x, y))
    if not pts:
        return np.empty((0, 2), dtype=np.float64)
    return np.asarray(pts, dtype=np.float64)


def write_pbm(path, img: np.ndarray) -> None:
    """Dump a binary raster as a plain-text portable bitmap (P1)."""
    h, w = img.shape
    rows = ["".join("1" if v else "0" for v in row) for row in img]
    with open(path, "w") as f:
        f.write(f"P1\n{w} {h}\n")
        f.write("\n".join(rows))
        f.write("\n")


def read_pbm(path) -> np.ndarray:
    with open(path) as f:
        tokens = f.read().split()
    if tokens[0] != "P1":
        raise ValueError("not a plain PBM file")
    w, h = int(tokens[1]), int(tokens[2])
    bits = "".join(tokens[3:])
    if len(bits) != w * h:
        raise ValueError("PBM pixel count mismatch")
    arr = np.frombuffer(bits.encode(), dtype=np.uint8) - ord("0")
    return arr.reshape(h, w).astype(bool)

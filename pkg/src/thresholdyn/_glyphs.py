"""Procedurally drawn digit glyphs.

Grayscale digit rasters used as initial shapes and as raster kernels.  Digits
0-9 are stroked polylines in a unit box (x right, y down), randomly jittered
by a small affine map and rendered with an anti-aliased stroke.
"""

from __future__ import annotations

import numpy as np


def _arc(cx, cy, rx, ry, a0, a1, n=16):
    t = np.linspace(a0, a1, n)
    return np.stack([cx + rx * np.cos(t), cy + ry * np.sin(t)], axis=1)


def _ring(cx, cy, rx, ry, n=24):
    return _arc(cx, cy, rx, ry, 0.0, 2.0 * np.pi, n)


def _strokes(digit: int) -> list[np.ndarray]:
    """Control polylines for one digit, coordinates in [0,1]^2, y down."""
    if digit == 0:
        return [_ring(0.5, 0.5, 0.24, 0.34)]
    if digit == 1:
        return [np.array([[0.36, 0.28], [0.53, 0.14], [0.53, 0.86]])]
    if digit == 2:
        top = _arc(0.5, 0.33, 0.22, 0.2, np.pi, 2 * np.pi + 0.5, 14)
        return [np.vstack([top, [[0.28, 0.84], [0.75, 0.84]]])]
    if digit == 3:
        top = _arc(0.47, 0.31, 0.21, 0.18, np.pi * 0.85, 2.45 * np.pi, 14)
        bot = _arc(0.47, 0.67, 0.23, 0.2, -np.pi / 2, np.pi * 1.15, 14)
        return [np.vstack([top, bot])]
    if digit == 4:
        return [
            np.array([[0.62, 0.14], [0.24, 0.6], [0.8, 0.6]]),
            np.array([[0.62, 0.14], [0.62, 0.86]]),
        ]
    if digit == 5:
        return [
            np.array([[0.72, 0.15], [0.3, 0.15], [0.29, 0.47]]),
            np.vstack(
                [
                    np.array([[0.29, 0.47], [0.5, 0.42]]),
                    _arc(0.47, 0.64, 0.23, 0.21, -np.pi / 2, np.pi * 1.1, 14),
                ]
            ),
        ]
    if digit == 6:
        return [
            np.array([[0.62, 0.13], [0.44, 0.32], [0.34, 0.55], [0.33, 0.68]]),
            _ring(0.5, 0.66, 0.18, 0.18),
        ]
    if digit == 7:
        return [np.array([[0.26, 0.16], [0.74, 0.16], [0.42, 0.85]])]
    if digit == 8:
        return [_ring(0.5, 0.31, 0.17, 0.16), _ring(0.5, 0.67, 0.2, 0.19)]
    if digit == 9:
        return [
            _ring(0.5, 0.34, 0.18, 0.18),
            np.array([[0.68, 0.36], [0.66, 0.6], [0.54, 0.85]]),
        ]
    raise ValueError(f"digit must be 0-9, got {digit}")


def _jitter_map(rng) -> np.ndarray:
    """Small random affine (2x3) about the glyph center."""
    angle = rng.uniform(-0.15, 0.15)
    scale = rng.uniform(0.85, 1.0)
    shear = rng.uniform(-0.12, 0.12)
    tx, ty = rng.uniform(-0.04, 0.04, size=2)
    c, s = np.cos(angle), np.sin(angle)
    lin = scale * np.array([[c, -s], [s, c]]) @ np.array([[1.0, shear], [0.0, 1.0]])
    shift = np.array([0.5 + tx, 0.5 + ty]) - lin @ np.array([0.5, 0.5])
    return np.hstack([lin, shift[:, None]])


def _segment_distance(px, py, seg_a, seg_b):
    """Distance from each pixel center to the segment a->b."""
    dx, dy = seg_b[0] - seg_a[0], seg_b[1] - seg_a[1]
    denom = dx * dx + dy * dy
    if denom < 1e-12:
        return np.hypot(px - seg_a[0], py - seg_a[1])
    t = np.clip(((px - seg_a[0]) * dx + (py - seg_a[1]) * dy) / denom, 0.0, 1.0)
    return np.hypot(px - (seg_a[0] + t * dx), py - (seg_a[1] + t * dy))


def digit_glyph(digit: int, size: int, rng=None, stroke: float = 0.1) -> np.ndarray:
    """Render one digit on a size x size grid with values in [0,1]."""
    polylines = _strokes(digit)
    if rng is not None:
        m = _jitter_map(rng)
        polylines = [pts @ m[:, :2].T + m[:, 2] for pts in polylines]
    col = (np.arange(size) + 0.5) / size
    px, py = np.meshgrid(col, col)
    dist = np.full((size, size), np.inf)
    for pts in polylines:
        for a, b in zip(pts[:-1], pts[1:]):
            dist = np.minimum(dist, _segment_distance(px, py, a, b))
    aa = 1.0 / size
    return np.clip(0.5 + (stroke / 2.0 - dist) / aa, 0.0, 1.0)


def random_glyph(size: int, rng, stroke: float = 0.1) -> np.ndarray:
    """A random jittered digit raster."""
    return digit_glyph(int(rng.integers(0, 10)), size, rng, stroke=stroke)

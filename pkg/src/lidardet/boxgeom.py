"""Oriented 3D boxes, BEV IoU computations, and non-maximum suppression.

Coordinate conventions used throughout the package: x forward, y lateral,
z up, all in meters in the sensor frame. A box's ``l`` runs along its
heading, ``w`` across it, ``h`` vertically; ``yaw`` is the heading angle
in the BEV plane, normalized to (-pi, pi].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


def wrap_angle(angle: float) -> float:
    """Normalize an angle to the half-open interval (-pi, pi]."""
    a = math.remainder(float(angle), math.tau)
    return math.pi if a == -math.pi else a


@dataclass
class Box3D:
    """Oriented box: center, dims (length, width, height), BEV yaw."""

    cx: float
    cy: float
    cz: float
    l: float
    w: float
    h: float
    yaw: float = 0.0

    def __post_init__(self) -> None:
        if not (self.l > 0.0 and self.w > 0.0 and self.h > 0.0):
            raise ValueError(f"box dimensions must be positive: {(self.l, self.w, self.h)}")
        self.yaw = wrap_angle(self.yaw)

    @property
    def volume(self) -> float:
        return self.l * self.w * self.h

    @property
    def z_bottom(self) -> float:
        return self.cz - 0.5 * self.h

    @property
    def z_top(self) -> float:
        return self.cz + 0.5 * self.h


@dataclass
class ScoredBox:
    box: Box3D
    score: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")


# Local corner order: counter-clockwise, starting at (+l/2, +w/2).
_CORNER_SIGNS = np.array([[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]])


def bev_corners(box: Box3D) -> np.ndarray:
    """Counter-clockwise BEV footprint corners, shape (4, 2).

    The first corner is the rotated image of the local (+l/2, +w/2)
    corner, which keeps corner indices comparable between boxes.
    """
    local = _CORNER_SIGNS * np.array([0.5 * box.l, 0.5 * box.w])
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([box.cx, box.cy])


def aa_envelope(box: Box3D) -> Box3D:
    """Axis-aligned, yaw-free box covering the rotated BEV footprint."""
    if box.yaw == 0.0:
        return Box3D(box.cx, box.cy, box.cz, box.l, box.w, box.h, 0.0)
    c, s = abs(math.cos(box.yaw)), abs(math.sin(box.yaw))
    return Box3D(box.cx, box.cy, box.cz,
                 box.l * c + box.w * s, box.l * s + box.w * c, box.h, 0.0)


def polygon_area(points: np.ndarray) -> float:
    """Shoelace area; positive for counter-clockwise vertex order."""
    pts = np.asarray(points, dtype=float)
    if len(pts) < 3:
        return 0.0
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _clip_convex(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of a convex polygon by a CCW convex polygon."""
    output = np.asarray(subject, dtype=float)
    m = len(clipper)
    for i in range(m):
        if len(output) == 0:
            break
        a = clipper[i]
        b = clipper[(i + 1) % m]
        ex, ey = b[0] - a[0], b[1] - a[1]
        # signed distance side: >= 0 is the interior for a CCW clipper
        d = ex * (output[:, 1] - a[1]) - ey * (output[:, 0] - a[0])
        kept = []
        n = len(output)
        for j in range(n):
            k = (j + 1) % n
            if d[j] >= 0.0:
                kept.append(output[j])
            if (d[j] < 0.0) != (d[k] < 0.0):
                t = d[j] / (d[j] - d[k])
                kept.append(output[j] + t * (output[k] - output[j]))
        output = np.array(kept) if kept else np.empty((0, 2))
    return output


def intersection_area_bev(a: Box3D, b: Box3D) -> float:
    """Area of the intersection of two rotated BEV footprints."""
    poly = _clip_convex(bev_corners(a), bev_corners(b))
    return max(0.0, polygon_area(poly))


def iou_bev_aa(a: Box3D, b: Box3D) -> float:
    """IoU of the axis-aligned l-by-w footprints; yaw is ignored.

    Intended for yaw-free boxes (anchors, region proposals, envelopes).
    """
    ix = min(a.cx + 0.5 * a.l, b.cx + 0.5 * b.l) - max(a.cx - 0.5 * a.l, b.cx - 0.5 * b.l)
    if ix <= 0.0:
        return 0.0
    iy = min(a.cy + 0.5 * a.w, b.cy + 0.5 * b.w) - max(a.cy - 0.5 * a.w, b.cy - 0.5 * b.w)
    if iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.l * a.w + b.l * b.w - inter
    return inter / union if union > 0.0 else 0.0


def iou_bev_rotated(a: Box3D, b: Box3D) -> float:
    """IoU of the rotated BEV footprints via convex polygon clipping."""
    inter = intersection_area_bev(a, b)
    if inter <= 0.0:
        return 0.0
    union = a.l * a.w + b.l * b.w - inter
    return inter / union if union > 0.0 else 0.0


def iou_3d(a: Box3D, b: Box3D) -> float:
    """3D IoU: rotated BEV intersection times vertical overlap over volume union."""
    dz = min(a.z_top, b.z_top) - max(a.z_bottom, b.z_bottom)
    if dz <= 0.0:
        return 0.0
    inter_bev = intersection_area_bev(a, b)
    if inter_bev <= 0.0:
        return 0.0
    inter = inter_bev * dz
    union = a.volume + b.volume - inter
    return inter / union if union > 0.0 else 0.0


def nms_indices(boxes: Sequence[ScoredBox], iou_threshold: float,
                keep_max: Optional[int] = None) -> list[int]:
    """Greedy NMS over axis-aligned BEV footprints; returns kept indices.

    Boxes are visited by descending score with ties broken by lower input
    index; a box is suppressed when its IoU with any already kept box
    exceeds the threshold. Kept indices come back in visiting order, so
    the result is a subsequence of the score-sorted input.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must lie in [0, 1], got {iou_threshold}")
    n = len(boxes)
    if n == 0:
        return []
    x1 = np.array([sb.box.cx - 0.5 * sb.box.l for sb in boxes])
    x2 = np.array([sb.box.cx + 0.5 * sb.box.l for sb in boxes])
    y1 = np.array([sb.box.cy - 0.5 * sb.box.w for sb in boxes])
    y2 = np.array([sb.box.cy + 0.5 * sb.box.w for sb in boxes])
    area = (x2 - x1) * (y2 - y1)
    scores = np.array([sb.score for sb in boxes])

    order = sorted(range(n), key=lambda i: (-scores[i], i))
    kept: list[int] = []
    for i in order:
        if keep_max is not None and len(kept) >= keep_max:
            break
        if kept:
            k = np.array(kept)
            ix = np.minimum(x2[i], x2[k]) - np.maximum(x1[i], x1[k])
            iy = np.minimum(y2[i], y2[k]) - np.maximum(y1[i], y1[k])
            inter = np.clip(ix, 0.0, None) * np.clip(iy, 0.0, None)
            union = area[i] + area[k] - inter
            iou = np.where(union > 0.0, inter / np.where(union > 0.0, union, 1.0), 0.0)
            if np.any(iou > iou_threshold):
                continue
        kept.append(i)
    return kept


def nms(boxes: Sequence[ScoredBox], iou_threshold: float,
        keep_max: Optional[int] = None) -> list[ScoredBox]:
    """Greedy NMS; returns the kept scored boxes (see ``nms_indices``)."""
    return [boxes[i] for i in nms_indices(boxes, iou_threshold, keep_max)]

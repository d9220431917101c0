"""Polyline utilities shared by the map, the reference builder, and the fields."""

from __future__ import annotations

import math

import numpy as np

__all__ = ["Polyline"]


class Polyline:
    """Arc-length parameterized 2D polyline."""

    def __init__(self, points) -> None:
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError("polyline needs an (M, 2) array with M >= 2")
        if not np.all(np.isfinite(pts)):
            raise ValueError("polyline points must be finite")
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len <= 0):
            raise ValueError("polyline has a zero-length segment")
        self.points = pts
        self._seg = seg
        self._seg_len = seg_len
        self._cum = np.concatenate([[0.0], np.cumsum(seg_len)])

    @property
    def length(self) -> float:
        return float(self._cum[-1])

    def point_at(self, s: float) -> np.ndarray:
        """Position at arc length ``s`` (clamped to the ends)."""
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self._cum, s, side="right") - 1)
        i = min(i, len(self._seg_len) - 1)
        t = (s - self._cum[i]) / self._seg_len[i]
        return self.points[i] + t * self._seg[i]

    def tangent_at(self, s: float) -> float:
        """Tangent angle (rad) at arc length ``s``."""
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self._cum, s, side="right") - 1)
        i = min(max(i, 0), len(self._seg_len) - 1)
        return math.atan2(self._seg[i, 1], self._seg[i, 0])

    def points_at(self, s_arr: np.ndarray) -> np.ndarray:
        """Positions for an array of arc lengths, shape (K, 2)."""
        s = np.clip(np.asarray(s_arr, dtype=float), 0.0, self.length)
        i = np.clip(np.searchsorted(self._cum, s, side="right") - 1, 0, len(self._seg_len) - 1)
        t = (s - self._cum[i]) / self._seg_len[i]
        return self.points[i] + t[:, None] * self._seg[i]

    def tangents_at(self, s_arr: np.ndarray) -> np.ndarray:
        """Tangent angles for an array of arc lengths, shape (K,)."""
        s = np.clip(np.asarray(s_arr, dtype=float), 0.0, self.length)
        i = np.clip(np.searchsorted(self._cum, s, side="right") - 1, 0, len(self._seg_len) - 1)
        return np.arctan2(self._seg[i, 1], self._seg[i, 0])

    def project(self, p) -> tuple[float, float]:
        """Project a point onto the polyline.

        Returns ``(s, dist)``: arc length of the closest point and the
        Euclidean distance to it.
        """
        s_arr, d_arr = self.project_many(np.asarray(p, dtype=float)[None, :])
        return float(s_arr[0]), float(d_arr[0])

    def project_many(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized projection of an (K, 2) array of points."""
        pts = np.asarray(pts, dtype=float)
        rel = pts[:, None, :] - self.points[None, :-1, :]  # (K, M-1, 2)
        t = np.einsum("kmi,mi->km", rel, self._seg) / (self._seg_len**2)[None, :]
        t = np.clip(t, 0.0, 1.0)
        closest = self.points[None, :-1, :] + t[:, :, None] * self._seg[None, :, :]
        d2 = np.sum((pts[:, None, :] - closest) ** 2, axis=2)
        idx = np.argmin(d2, axis=1)
        k = np.arange(len(pts))
        s = self._cum[idx] + t[k, idx] * self._seg_len[idx]
        return s, np.sqrt(d2[k, idx])

    def signed_lateral_offset(self, p) -> float:
        """Left-positive lateral offset of a point from the polyline."""
        s, _ = self.project(p)
        base = self.point_at(s)
        ang = self.tangent_at(s)
        dx, dy = p[0] - base[0], p[1] - base[1]
        return float(-math.sin(ang) * dx + math.cos(ang) * dy)

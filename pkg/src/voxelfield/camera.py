"""Pinhole cameras and per-pixel ray generation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CameraPose:
    eye: tuple[float, float, float]
    look_at: tuple[float, float, float]
    up: tuple[float, float, float] = (0.0, 1.0, 0.0)
    fov: float = np.deg2rad(60.0)   # vertical, radians
    width: int = 32
    height: int = 32

    def __post_init__(self):
        eye = np.asarray(self.eye, dtype=np.float64)
        at = np.asarray(self.look_at, dtype=np.float64)
        if np.allclose(eye, at):
            raise ValueError("camera eye and look_at coincide")
        if not 0.0 < self.fov < np.pi:
            raise ValueError("vertical fov must be in (0, pi)")
        if self.width < 1 or self.height < 1:
            raise ValueError("resolution must be positive")

    @property
    def resolution(self) -> tuple[int, int]:
        return self.width, self.height

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        eye = np.asarray(self.eye, dtype=np.float64)
        forward = np.asarray(self.look_at, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        up = np.asarray(self.up, dtype=np.float64)
        right = np.cross(forward, up)
        if np.linalg.norm(right) < 1e-9:
            # looking straight along up: any perpendicular will do
            right = np.cross(forward, [1.0, 0.0, 0.0] if abs(forward[0]) < 0.9 else [0.0, 0.0, 1.0])
        right /= np.linalg.norm(right)
        true_up = np.cross(right, forward)
        return forward, right, true_up

    def rays(self) -> tuple[np.ndarray, np.ndarray]:
        """Origins and unit directions through pixel centers, row-major from the top row."""
        forward, right, up = self.basis()
        half_h = np.tan(self.fov / 2.0)
        half_w = half_h * self.width / self.height
        xs = ((np.arange(self.width) + 0.5) / self.width * 2.0 - 1.0) * half_w
        ys = (1.0 - (np.arange(self.height) + 0.5) / self.height * 2.0) * half_h
        gx, gy = np.meshgrid(xs, ys)
        dirs = forward + gx[..., None] * right + gy[..., None] * up
        dirs = dirs.reshape(-1, 3)
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        origins = np.broadcast_to(np.asarray(self.eye, dtype=np.float64), dirs.shape).copy()
        return origins, dirs

"""Traversal benchmark and the dense fixed-step ray-march oracle it is checked against."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numba
import numpy as np

from .traversal import Segments, traverse_batch
from .world import VoxelWorld

# the bundled TBB is too old for numba and only produces a warning
numba.config.THREADING_LAYER = "workqueue"


@numba.njit(cache=True)
def _cell_label(vol, x, y, z):
    ix, iy, iz = int(np.floor(x)), int(np.floor(y)), int(np.floor(z))
    if ix < 0 or iy < 0 or iz < 0 or ix >= vol.shape[0] or iy >= vol.shape[1] or iz >= vol.shape[2]:
        return -2, ix, iy, iz
    return vol[ix, iy, iz], ix, iy, iz


@numba.njit(cache=True, parallel=True)
def _march(vol, origins, dirs, t_far, step, offsets, t_enter, t_exit, voxel, tie):
    """Count membership mismatches between the march and the segments, per ray."""
    n = origins.shape[0]
    mismatches = np.zeros(n, dtype=np.int64)
    for r in numba.prange(n):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        lo, hi = offsets[r], offsets[r + 1]
        ptr = lo
        k = 0
        while True:
            t = (k + 0.5) * step
            if t > t_far[r]:
                break
            k += 1
            lab, ix, iy, iz = _cell_label(vol, ox + t * dx, oy + t * dy, oz + t * dz)
            occupied = lab >= 0
            while ptr < hi and t_exit[ptr] <= t:
                ptr += 1
            inside = ptr < hi and t_enter[ptr] <= t
            near = False
            if ptr < hi and (abs(t - t_enter[ptr]) < tie or abs(t - t_exit[ptr]) < tie):
                near = True
            if ptr > lo and abs(t - t_exit[ptr - 1]) < tie:
                near = True
            if near:
                continue
            if occupied != inside:
                mismatches[r] += 1
            elif inside and (voxel[ptr, 0] != ix or voxel[ptr, 1] != iy or voxel[ptr, 2] != iz):
                mismatches[r] += 1
    return mismatches


@numba.njit(cache=True)
def _boundary_check(vol, origins, dirs, ray, t_enter, t_exit, voxel, delta):
    """Count segment ends where the marched cell does not actually change within +-delta."""
    bad = 0
    for i in range(len(ray)):
        if t_exit[i] - t_enter[i] <= 2 * delta:
            continue
        r = ray[i]
        for b, inner in ((t_enter[i], 1.0), (t_exit[i], -1.0)):
            if b - delta < 0:
                continue
            o0, o1, o2 = origins[r, 0], origins[r, 1], origins[r, 2]
            d0, d1, d2 = dirs[r, 0], dirs[r, 1], dirs[r, 2]
            ti = b + inner * delta
            to = b - inner * delta
            _, ax, ay, az = _cell_label(vol, o0 + ti * d0, o1 + ti * d1, o2 + ti * d2)
            _, bx, by, bz = _cell_label(vol, o0 + to * d0, o1 + to * d1, o2 + to * d2)
            same_inside = ax == voxel[i, 0] and ay == voxel[i, 1] and az == voxel[i, 2]
            changed = ax != bx or ay != by or az != bz
            if not (same_inside and changed):
                bad += 1
    return bad


@dataclass
class TraversalCheck:
    n_rays: int
    mismatched_samples: int
    mismatched_rays: int
    bad_boundaries: int
    n_segments: int

    @property
    def ok(self) -> bool:
        return self.mismatched_samples == 0 and self.bad_boundaries == 0


def march_extent(world: VoxelWorld, origins: np.ndarray) -> np.ndarray:
    """Distance from each origin to the farthest grid corner: nothing lies beyond it."""
    corners = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)]) * np.asarray(world.dims)
    return np.linalg.norm(origins[:, None, :] - corners[None], axis=2).max(axis=1)


def check_traversal(world: VoxelWorld, origins, dirs, segs: Segments | None = None,
                    step: float = 1e-3, boundary_tol: float = 1e-3,
                    tie: float = 1e-9) -> TraversalCheck:
    """Compare grid traversal against a dense march with fixed ``step``.

    Every march sample must agree with the segments on occupancy and voxel id
    (samples within ``tie`` of a segment end are skipped), and every segment end
    must sit on a real cell change within ``boundary_tol``.
    """
    origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    segs = segs if segs is not None else traverse_batch(world, origins, dirs)
    vol = np.ascontiguousarray(world.class_volume)
    mism = _march(vol, origins, dirs, march_extent(world, origins), step, segs.offsets,
                  segs.t_enter, segs.t_exit, segs.voxel, tie)
    bad = _boundary_check(vol, origins, dirs, segs.ray, segs.t_enter, segs.t_exit, segs.voxel,
                          boundary_tol * 0.75)
    return TraversalCheck(len(origins), int(mism.sum()), int((mism > 0).sum()), int(bad),
                          len(segs.ray))


def random_rays(world: VoxelWorld, n: int, rng: np.random.Generator, margin: float = 4.0,
                axis_aligned_fraction: float = 0.1):
    """Origins in the grid box grown by ``margin``; some directions have exact zeros."""
    dims = np.asarray(world.dims, dtype=np.float64)
    origins = rng.uniform(-margin, dims + margin, size=(n, 3))
    # aim at a random point inside the grid so most rays cross it
    targets = rng.uniform(0, dims, size=(n, 3))
    dirs = targets - origins
    m = int(n * axis_aligned_fraction)
    if m:
        zero_axes = rng.integers(0, 3, size=m)
        dirs[np.arange(m), zero_axes] = 0.0
        two = rng.random(m) < 0.3
        dirs[np.arange(m)[two], (zero_axes[two] + 1) % 3] = 0.0
    norms = np.linalg.norm(dirs, axis=1)
    dirs[norms == 0] = [1.0, 0.0, 0.0]
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return origins, dirs


@dataclass
class BenchResult:
    rays: int
    seconds: float
    rays_per_second: float
    check: TraversalCheck


def bench_traverse(world: VoxelWorld, n_rays: int = 10000, seed: int = 0,
                   verify: bool = True) -> BenchResult:
    rng = np.random.default_rng(seed)
    origins, dirs = random_rays(world, n_rays, rng)
    start = time.perf_counter()
    segs = traverse_batch(world, origins, dirs)
    elapsed = time.perf_counter() - start
    check = check_traversal(world, origins, dirs, segs) if verify else None
    return BenchResult(n_rays, elapsed, n_rays / max(elapsed, 1e-12), check)


@dataclass
class ConvergenceStudy:
    ns: list[int]
    errors: list[float]
    order: float


def quadrature_convergence(sigma_fn, optical_depth: float, length: float = 3.0,
                           ns=(8, 16, 32, 64, 128), jitter: float = 0.5) -> ConvergenceStudy:
    """T_end error of the sampled quadrature on one segment [0, length] against the exact value.

    ``sigma_fn`` maps ray parameters to densities and ``optical_depth`` is its
    exact integral over the segment. The order is the least-squares slope of
    -log(error) against log(n).
    """
    from .render import integrate_ray
    from .traversal import Ray, SegmentList, stratified_sample

    ray = Ray(np.zeros(3), np.array([1.0, 0.0, 0.0]))
    segs = SegmentList([(0.0, float(length), (0, 0, 0), 0)])
    exact = np.exp(-optical_depth)
    errors = []
    for n in ns:
        s = stratified_sample(segs, ray, n, jitter=np.full((1, n), jitter))
        _, T_end, _ = integrate_ray(sigma_fn(s.t), s.delta, s.t, np.zeros((n, 1)), np.zeros(1))
        errors.append(abs(T_end - exact))
    slope = np.polyfit(np.log(ns), np.log(errors), 1)[0]
    return ConvergenceStudy(list(ns), errors, float(-slope))

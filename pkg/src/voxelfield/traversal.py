"""Grid traversal, distance truncation and stratified sampling along rays.

Everything here works on batches of rays; the single-ray helpers wrap the
batched versions so there is exactly one code path.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .world import VoxelWorld

_EMPTY_I = np.zeros(0, dtype=np.int64)
_EMPTY_F = np.zeros(0, dtype=np.float64)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        v = np.asarray(self.direction, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(v) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", v)

    @classmethod
    def toward(cls, origin, target) -> "Ray":
        o = np.asarray(origin, dtype=np.float64)
        d = np.asarray(target, dtype=np.float64) - o
        return cls(o, d / np.linalg.norm(d))


@dataclass
class Segments:
    """In-voxel intervals for a batch of rays, stored flat in ray-major order.

    ``offsets[r]:offsets[r + 1]`` indexes the segments of ray ``r``; within a ray
    they are ordered by ``t_enter``. ``entry_axis`` is the axis whose face the ray
    crossed to enter the voxel (-1 when the ray starts inside it).
    """

    n_rays: int
    ray: np.ndarray
    t_enter: np.ndarray
    t_exit: np.ndarray
    voxel: np.ndarray
    label: np.ndarray
    entry_axis: np.ndarray
    truncated: np.ndarray   # (n_rays,) bool
    t_max: np.ndarray       # (n_rays,) ray parameter where truncation landed, nan otherwise

    @property
    def offsets(self) -> np.ndarray:
        return np.searchsorted(self.ray, np.arange(self.n_rays + 1))

    @property
    def length(self) -> np.ndarray:
        return self.t_exit - self.t_enter

    def in_voxel_length(self) -> np.ndarray:
        return np.bincount(self.ray, weights=self.length, minlength=self.n_rays)

    def for_ray(self, r: int) -> "SegmentList":
        lo, hi = self.offsets[r], self.offsets[r + 1]
        segs = [
            (float(self.t_enter[i]), float(self.t_exit[i]),
             tuple(int(c) for c in self.voxel[i]), int(self.label[i]))
            for i in range(lo, hi)
        ]
        return SegmentList(segs, bool(self.truncated[r]), float(self.t_max[r]))


@dataclass
class SegmentList:
    segments: list[tuple[float, float, tuple[int, int, int], int]]
    truncated: bool = False
    t_max: float = float("nan")

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def total_length(self) -> float:
        return float(sum(b - a for a, b, _, _ in self.segments))

    def to_batch(self) -> Segments:
        n = len(self.segments)
        return Segments(
            n_rays=1,
            ray=np.zeros(n, dtype=np.int64),
            t_enter=np.array([s[0] for s in self.segments], dtype=np.float64),
            t_exit=np.array([s[1] for s in self.segments], dtype=np.float64),
            voxel=np.array([s[2] for s in self.segments], dtype=np.int64).reshape(n, 3),
            label=np.array([s[3] for s in self.segments], dtype=np.int64),
            entry_axis=np.full(n, -1, dtype=np.int64),
            truncated=np.array([self.truncated]),
            t_max=np.array([self.t_max]),
        )


def _grid_entry(origins, dirs, dims):
    """Slab test against [0, dims]; returns (t_near, t_far, entry axis)."""
    lo = np.zeros(3)
    hi = np.asarray(dims, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (lo - origins) * inv
        t2 = (hi - origins) * inv
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    # axis-parallel rays: inside the slab -> unbounded, outside -> miss
    par = dirs == 0.0
    inside = (origins >= lo) & (origins <= hi)
    tmin = np.where(par, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(par, np.where(inside, np.inf, -np.inf), tmax)
    axis = np.argmax(tmin, axis=1)
    t_near = tmin.max(axis=1)
    t_far = tmax.min(axis=1)
    return t_near, t_far, axis


def traverse_batch(world: VoxelWorld, origins, dirs, min_length: float = 1e-12) -> Segments:
    """Walk every ray voxel by voxel through the grid, keeping occupied cells.

    At each step the ray advances across whichever face it exits through; when
    several faces are crossed at the same t the lowest axis (x, then y, then z)
    goes first, which produces a zero-length visit that is discarded.
    """
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = len(origins)
    dims = np.asarray(world.dims, dtype=np.int64)
    vol = world.class_volume

    t_near, t_far, axis0 = _grid_entry(origins, dirs, dims)
    start_inside = t_near <= 0.0
    t0 = np.maximum(t_near, 0.0)
    hit = t0 < t_far
    rays = np.nonzero(hit)[0]

    o = origins[rays]
    v = dirs[rays]
    t_cur = t0[rays]
    t_end = t_far[rays]
    p = o + t_cur[:, None] * v
    idx = np.where(v >= 0, np.floor(p), np.ceil(p) - 1).astype(np.int64)
    idx = np.clip(idx, 0, dims - 1)
    step = np.sign(v).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        boundary = np.where(step > 0, idx + 1, idx).astype(np.float64)
        t_next = np.where(step != 0, (boundary - o) / v, np.inf)
        t_delta = np.where(step != 0, 1.0 / np.abs(v), np.inf)
    entry = np.where(start_inside[rays], -1, axis0[rays])

    out_ray, out_a, out_b, out_vox, out_lab, out_axis = [], [], [], [], [], []
    active = np.arange(len(rays))
    while len(active):
        tn = t_next[active]
        ax = np.argmin(tn, axis=1)
        t_leave = np.minimum(tn[np.arange(len(active)), ax], t_end[active])
        cell = idx[active]
        lab = vol[cell[:, 0], cell[:, 1], cell[:, 2]]
        keep = (lab >= 0) & (t_leave - t_cur[active] > min_length)
        if keep.any():
            k = active[keep]
            out_ray.append(rays[k])
            out_a.append(t_cur[k])
            out_b.append(t_leave[keep])
            out_vox.append(cell[keep])
            out_lab.append(lab[keep].astype(np.int64))
            out_axis.append(entry[k])
        # advance
        t_cur[active] = t_leave
        idx[active, ax] += step[active, ax]
        t_next[active, ax] += t_delta[active, ax]
        entry[active] = ax
        cur = idx[active]
        alive = np.all((cur >= 0) & (cur < dims), axis=1) & (t_cur[active] < t_end[active])
        active = active[alive]

    if out_ray:
        ray = np.concatenate(out_ray)
        order = np.argsort(ray, kind="stable")
        cat = lambda xs: np.concatenate(xs)[order]  # noqa: E731
        segs = Segments(n, ray[order], cat(out_a), cat(out_b), cat(out_vox), cat(out_lab),
                        cat(out_axis), np.zeros(n, dtype=bool), np.full(n, np.nan))
    else:
        segs = Segments(n, _EMPTY_I, _EMPTY_F, _EMPTY_F, np.zeros((0, 3), np.int64), _EMPTY_I,
                        _EMPTY_I, np.zeros(n, dtype=bool), np.full(n, np.nan))
    return segs


def traverse(world: VoxelWorld, ray: Ray) -> SegmentList:
    return traverse_batch(world, ray.origin[None], ray.direction[None]).for_ray(0)


def truncate_batch(segs: Segments, d_max: float = 3.0) -> Segments:
    """Cap each ray's cumulative in-voxel length at ``d_max``."""
    if d_max <= 0:
        raise ValueError("d_max must be positive")
    length = segs.length
    offsets = segs.offsets
    cum = np.cumsum(length)
    start = np.concatenate([[0.0], cum])[offsets[segs.ray]] if len(length) else _EMPTY_F
    before = cum - length - start        # in-voxel length before this segment, per ray
    keep = before < d_max
    t_exit = np.where(before + length > d_max, segs.t_enter + (d_max - before), segs.t_exit)
    totals = segs.in_voxel_length()
    truncated = totals >= d_max
    cut = keep & (before + length >= d_max)
    t_max = np.full(segs.n_rays, np.nan)
    t_max[segs.ray[cut]] = t_exit[cut]
    keep &= t_exit > segs.t_enter
    return Segments(segs.n_rays, segs.ray[keep], segs.t_enter[keep], t_exit[keep],
                    segs.voxel[keep], segs.label[keep], segs.entry_axis[keep], truncated, t_max)


def truncate(segments: SegmentList, d_max: float = 3.0) -> SegmentList:
    return truncate_batch(segments.to_batch(), d_max).for_ray(0)


@dataclass
class SampleSet:
    """Stratified samples for a batch of rays, flat and ordered by (ray, t)."""

    n_rays: int
    ray: np.ndarray
    t: np.ndarray          # midpoint parameter of each sample
    delta: np.ndarray      # in-voxel interval width
    position: np.ndarray   # (S, 3)
    voxel: np.ndarray      # (S, 3)
    label: np.ndarray
    truncated: np.ndarray  # (n_rays,)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def offsets(self) -> np.ndarray:
        return np.searchsorted(self.ray, np.arange(self.n_rays + 1))

    @property
    def frac(self) -> np.ndarray:
        """Position inside the owning voxel, clamped to the closed unit cube."""
        return np.clip(self.position - self.voxel, 0.0, 1.0)


def stratified_sample_batch(segs: Segments, origins, dirs, n: int = 24,
                            jitter: np.ndarray | None = None,
                            rng: np.random.Generator | None = None) -> SampleSet:
    """Place ``n`` samples per ray in equal bins of in-voxel arclength.

    ``jitter`` is an (n_rays, n) array of offsets in [0, 1) inside each bin; when
    omitted it is drawn from ``rng`` in ray-major order.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    if jitter is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        jitter = rng.random((segs.n_rays, n))
    jitter = np.asarray(jitter, dtype=np.float64).reshape(segs.n_rays, n)

    total = segs.in_voxel_length()
    rays = np.nonzero(total > 0)[0]
    if len(rays) == 0:
        z3 = np.zeros((0, 3))
        return SampleSet(segs.n_rays, _EMPTY_I, _EMPTY_F, _EMPTY_F, z3, z3.astype(np.int64),
                         _EMPTY_I, segs.truncated.copy())

    width = total[rays] / n
    s = (np.arange(n)[None, :] + jitter[rays]) * width[:, None]   # arclength per sample
    ray_id = np.repeat(rays, n)
    s = s.ravel()

    length = segs.length
    cum = np.cumsum(length)
    offsets = segs.offsets
    base = np.concatenate([[0.0], cum])
    # global arclength coordinate: per-ray start + local s
    g = base[offsets[ray_id]] + s
    seg = np.searchsorted(cum, g, side="right")
    last = offsets[ray_id + 1] - 1
    seg = np.clip(seg, offsets[ray_id], last)
    local = np.clip(g - (cum[seg] - length[seg]), 0.0, length[seg])
    t = segs.t_enter[seg] + local
    pos = origins[ray_id] + t[:, None] * dirs[ray_id]
    return SampleSet(segs.n_rays, ray_id, t, np.repeat(width, n), pos, segs.voxel[seg],
                     segs.label[seg], segs.truncated.copy())


def stratified_sample(segments: SegmentList, ray: Ray, n: int = 24,
                      rng: np.random.Generator | None = None,
                      jitter: np.ndarray | None = None) -> SampleSet:
    return stratified_sample_batch(segments.to_batch(), ray.origin[None], ray.direction[None],
                                   n=n, jitter=jitter, rng=rng)


def first_hits(world: VoxelWorld, origins, dirs):
    """First occupied voxel along each ray: (t, class, voxel, entry_axis), class -1 on miss."""
    segs = traverse_batch(world, origins, dirs)
    n = segs.n_rays
    t = np.full(n, np.inf)
    cls = np.full(n, -1, dtype=np.int64)
    vox = np.zeros((n, 3), dtype=np.int64)
    axis = np.full(n, -1, dtype=np.int64)
    if len(segs.ray):
        first = np.unique(segs.ray, return_index=True)[1]
        r = segs.ray[first]
        t[r] = segs.t_enter[first]
        cls[r] = segs.label[first]
        vox[r] = segs.voxel[first]
        axis[r] = segs.entry_axis[first]
    return t, cls, vox, axis

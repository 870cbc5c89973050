"""Volumetric feature rendering over sparse voxels, plus label projection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import autodiff as ad
from .autodiff import Tape, Var
from .camera import CameraPose
from .config import Config
from .field import field_eval, positional_encode_partial, sky_eval, style_network
from .labels import SKY
from .model import ParameterStore
from .refiner import refine, refine_bypass
from .traversal import SampleSet, first_hits, stratified_sample_batch, traverse_batch, truncate_batch
from .world import VoxelWorld, trilinear_weights

DEPTH_EPS = 1e-6


@dataclass
class FrameBuffers:
    feature: np.ndarray     # (H, W, c_dim)
    rgb: np.ndarray | None  # (H, W, 3) after the refiner
    depth: np.ndarray       # (H, W), nan where the ray is (almost) fully transparent
    seg: np.ndarray         # (H, W) class ids, sky where nothing dominates
    T_out: np.ndarray       # (H, W) residual transmittance
    truncated: np.ndarray   # (H, W) bool
    opacity: np.ndarray     # (H, W) sum of quadrature weights

    @property
    def num_rays(self) -> int:
        return self.T_out.size


@dataclass
class Quadrature:
    """Graph outputs of the batched quadrature, one row per ray."""

    color: Var          # (R, c_dim)
    T_end: Var          # (R,)
    weights: Var        # (S,)
    depth: np.ndarray   # (R,)


def clip_features(c: Var, limit: float = 1.0) -> Var:
    return ad.clamp(c, -limit, limit)


def integrate(c: Var, sigma: Var, samples: SampleSet, c_sky: Var) -> Quadrature:
    """Discrete volume rendering with the sky as the final, fully opaque sample.

    ``c`` and ``c_sky`` must already be clipped. Truncated rays composite the sky
    with their leftover transmittance exactly like rays that leave the voxels.
    """
    R = samples.n_rays
    offsets = samples.offsets
    delta = c.tape.const(samples.delta)
    tau = sigma * delta
    T = ad.exp(-ad.segment_cumsum_exclusive(tau, offsets))
    alpha = 1.0 - ad.exp(-tau)
    weights = T * alpha
    col = ad.segment_sum(ad.reshape(weights, (-1, 1)) * c, samples.ray, R)
    optical = ad.segment_sum(ad.reshape(tau, (-1, 1)), samples.ray, R)
    T_end = ad.exp(-ad.reshape(optical, (-1,)))
    color = col + ad.reshape(T_end, (-1, 1)) * c_sky

    opacity = 1.0 - T_end.value
    wt = np.bincount(samples.ray, weights=weights.value * samples.t, minlength=R)
    with np.errstate(invalid="ignore", divide="ignore"):
        depth = np.where(opacity >= DEPTH_EPS, wt / opacity, np.nan)
    return Quadrature(color, T_end, weights, depth)


def integrate_ray(sigma, delta, t_hat, c, c_sky, truncated: bool = False):
    """Single-ray quadrature on plain arrays: returns (C, T_end, depth)."""
    tape = Tape()
    sigma = np.atleast_1d(np.asarray(sigma, dtype=np.float64))
    n = len(sigma)
    c_sky = np.asarray(c_sky, dtype=np.float64).reshape(1, -1)
    c = np.asarray(c, dtype=np.float64).reshape(n, c_sky.shape[1])
    samples = SampleSet(
        n_rays=1, ray=np.zeros(n, dtype=np.int64), t=np.asarray(t_hat, dtype=np.float64).reshape(n),
        delta=np.asarray(delta, dtype=np.float64).reshape(n), position=np.zeros((n, 3)),
        voxel=np.zeros((n, 3), dtype=np.int64), label=np.zeros(n, dtype=np.int64),
        truncated=np.array([truncated]),
    )
    q = integrate(tape.const(c), tape.const(sigma), samples, tape.const(c_sky))
    return q.color.value[0], float(q.T_end.value[0]), float(q.depth[0])


def opacity_regularizer(frames: FrameBuffers) -> float:
    """Sum of residual transmittance over truncated rays."""
    return float(frames.T_out[frames.truncated].sum())


def opacity_term(T_end: Var, truncated: np.ndarray) -> Var:
    return ad.sum(T_end * truncated.astype(np.float64))


def location_codes(table_var: Var, table, samples: SampleSet) -> Var:
    """Trilinear gather of corner features for every sample as one sparse product."""
    S = len(samples)
    rows = table.corner_rows(samples.voxel)
    w = trilinear_weights(samples.frac)
    m = sparse.csr_matrix((w.ravel(), (np.repeat(np.arange(S), 8), rows.ravel())),
                          shape=(S, len(table)))
    return ad.sparse_matmul(m, table_var)


def sample_rays(world: VoxelWorld, origins, dirs, n_samples: int, d_max: float,
                rng: np.random.Generator) -> SampleSet:
    segs = truncate_batch(traverse_batch(world, origins, dirs), d_max)
    jitter = rng.random((segs.n_rays, n_samples))
    return stratified_sample_batch(segs, origins, dirs, n_samples, jitter=jitter)


def dominant_labels(samples: SampleSet, weights: np.ndarray, opacity: np.ndarray) -> np.ndarray:
    seg = np.full(samples.n_rays, SKY, dtype=np.int64)
    if len(samples):
        order = np.lexsort((-weights, samples.ray))
        ray_sorted = samples.ray[order]
        first = order[np.r_[True, ray_sorted[1:] != ray_sorted[:-1]]]
        seg[samples.ray[first]] = samples.label[first]
    seg[opacity < 0.5] = SKY
    return seg


@dataclass
class RenderResult:
    frames: FrameBuffers
    feature: Var          # (H, W, c_dim)
    rgb: Var | None
    T_end: Var            # (R,)
    sigma: Var            # (S,)
    w: Var
    samples: SampleSet


def render_frame(world: VoxelWorld, store: ParameterStore, camera: CameraPose, z, cfg: Config,
                 n_samples: int | None = None, seed: int = 0, tape: Tape | None = None,
                 pvars: dict | None = None, z_var: Var | None = None,
                 with_rgb: bool = True) -> RenderResult:
    """Render one frame through the full hybrid pipeline.

    Passing ``tape`` (and optionally ``pvars`` already registered on it) keeps the
    graph for differentiation; otherwise a throwaway tape is used.
    """
    tape = tape or Tape()
    pvars = pvars or store.vars(tape)
    n_samples = n_samples or cfg.samples_eval
    H, W = camera.height, camera.width
    origins, dirs = camera.rays()
    rng = np.random.default_rng(seed)
    samples = sample_rays(world, origins, dirs, n_samples, cfg.d_max, rng)

    z_var = z_var if z_var is not None else tape.const(np.asarray(z, dtype=np.float64))
    w = style_network(z_var, pvars["style"], cfg.leaky_slope)

    code = location_codes(pvars["features"]["table"], store.table, samples)
    enc = positional_encode_partial(code, cfg.n_encoded, cfg.n_freq)
    c, sigma = field_eval(enc, samples.label, w, pvars["field"], cfg)
    c = clip_features(c, cfg.feature_clip)
    c_sky = clip_features(sky_eval(tape.const(dirs), w, pvars["sky"], cfg), cfg.feature_clip)
    q = integrate(c, sigma, samples, c_sky)

    feature = ad.reshape(q.color, (H, W, cfg.c_dim))
    rgb = None
    if with_rgb:
        rgb = refine(feature, w, pvars["refiner"], cfg) if cfg.use_refiner else refine_bypass(feature)

    opacity = np.bincount(samples.ray, weights=q.weights.value, minlength=len(dirs))
    frames = FrameBuffers(
        feature=feature.value,
        rgb=None if rgb is None else rgb.value,
        depth=q.depth.reshape(H, W),
        seg=dominant_labels(samples, q.weights.value, 1.0 - q.T_end.value).reshape(H, W),
        T_out=q.T_end.value.reshape(H, W),
        truncated=samples.truncated.reshape(H, W),
        opacity=opacity.reshape(H, W),
    )
    return RenderResult(frames, feature, rgb, q.T_end, sigma, w, samples)


def project_labels(world: VoxelWorld, camera: CameraPose) -> tuple[np.ndarray, np.ndarray]:
    """First-hit class per pixel (sky on a miss) and the hit distance (inf on a miss)."""
    origins, dirs = camera.rays()
    t, cls, _, _ = first_hits(world, origins, dirs)
    seg = np.where(cls >= 0, cls, SKY)
    return seg.reshape(camera.height, camera.width), t.reshape(camera.height, camera.width)

import numpy as np
import pytest

from voxelfield import autodiff as ad
from voxelfield.autodiff import Tape
from voxelfield.bench import quadrature_convergence
from voxelfield.camera import CameraPose
from voxelfield.config import Config
from voxelfield.fixtures import random_world
from voxelfield.labels import CLASS_ID, SKY
from voxelfield.model import init_model, style_code
from voxelfield.render import (FrameBuffers, clip_features, integrate_ray, opacity_regularizer,
                               project_labels, render_frame)
from voxelfield.traversal import Ray, SegmentList, stratified_sample, traverse_batch
from voxelfield.world import LabelId, VoxelWorld


def frames_with(T_out, truncated):
    T_out = np.asarray(T_out, dtype=float).reshape(1, -1)
    z = np.zeros_like(T_out)
    return FrameBuffers(z[..., None], None, z, z.astype(int), T_out,
                        np.asarray(truncated).reshape(1, -1), 1 - T_out)


def opaque_store(world, cfg, sigma=1e6):
    store = init_model(world, cfg, 0)
    store.groups["field"]["density.W"][:] = 0.0
    store.groups["field"]["density.b"][:] = sigma
    return store


class TestCamera:
    def test_rays_unit_and_centered(self):
        cam = CameraPose((0, 0, 0), (0, 0, -5), width=5, height=3)
        o, d = cam.rays()
        assert o.shape == d.shape == (15, 3)
        assert np.allclose(np.linalg.norm(d, axis=1), 1.0)
        assert np.allclose(d[7], [0, 0, -1])     # center pixel
        assert d[0, 1] > 0 and d[0, 0] < 0       # top-left looks up and left

    def test_vertical_fov(self):
        cam = CameraPose((0, 0, 0), (1, 0, 0), fov=np.deg2rad(90), width=1, height=2)
        _, d = cam.rays()
        # pixel centers sit at half the half-height: tan = 0.5
        assert np.degrees(np.arctan2(d[0, 1], d[0, 0])) == pytest.approx(np.degrees(np.arctan(0.5)))

    @pytest.mark.parametrize("kwargs", [dict(look_at=(0, 0, 0)), dict(fov=0.0), dict(fov=np.pi),
                                        dict(width=0)])
    def test_invalid(self, kwargs):
        base = dict(eye=(0, 0, 0), look_at=(1, 0, 0))
        with pytest.raises(ValueError):
            CameraPose(**{**base, **kwargs})

    def test_looking_straight_up(self):
        _, d = CameraPose((0, 0, 0), (0, 5, 0), width=2, height=2).rays()
        assert np.isfinite(d).all()


class TestIntegrateRay:
    def test_no_samples(self):
        C, T, depth = integrate_ray([], [], [], np.zeros((0, 2)), [0.3, -0.2])
        assert np.array_equal(C, [0.3, -0.2]) and T == 1.0 and np.isnan(depth)

    def test_transparent(self):
        C, T, _ = integrate_ray(np.zeros(5), np.full(5, 0.2), np.arange(5.0), np.ones((5, 2)), [0.1, 0.2])
        assert np.array_equal(C, [0.1, 0.2]) and T == 1.0

    @pytest.mark.parametrize("sigma", [0.1, 1.0, 10.0])
    def test_homogeneous_medium(self, sigma):
        L, n = 2.5, 256
        ray = Ray([0, 0, 0], [1, 0, 0])
        s = stratified_sample(SegmentList([(1.0, 1.0 + L, (1, 0, 0), 0)]), ray, n,
                              rng=np.random.default_rng(0))
        c, c_sky = np.array([0.7, -0.4]), np.array([-0.2, 0.9])
        C, T, _ = integrate_ray(np.full(n, sigma), s.delta, s.t, np.tile(c, (n, 1)), c_sky)
        exact_T = np.exp(-sigma * L)
        assert T == pytest.approx(exact_T, rel=0.01)
        assert C == pytest.approx(c * (1 - exact_T) + c_sky * exact_T, rel=0.01)

    def test_weights_and_transmittance(self):
        r = np.random.default_rng(0)
        sigma, delta = r.random(20) * 3, r.random(20) * 0.2
        C, T_end, _ = integrate_ray(sigma, delta, np.cumsum(delta), np.ones((20, 1)), np.zeros(1))
        T = np.exp(-np.concatenate([[0.0], np.cumsum(sigma * delta)]))
        assert np.all(np.diff(T) <= 0) and np.all(T > 0)
        weights = T[:-1] * (1 - np.exp(-sigma * delta))
        assert C[0] == pytest.approx(weights.sum(), abs=1e-12)
        assert abs(weights.sum() + T_end - 1) < 1e-12

    def test_depth_is_expected_t(self):
        _, _, depth = integrate_ray([1e3], [0.5], [4.0], np.zeros((1, 1)), np.zeros(1))
        assert depth == pytest.approx(4.0)

    def test_sky_fades_monotonically(self):
        sigma = np.random.default_rng(1).random(10)
        previous = 1.0
        for extra in [0.0, 0.5, 2.0, 10.0, 100.0]:
            _, T, _ = integrate_ray(sigma + extra, np.full(10, 0.1), np.arange(10.0),
                                    np.zeros((10, 1)), np.ones(1))
            assert T <= previous
            previous = T
        assert previous < 1e-30

    def test_convergence_order(self):
        study = quadrature_convergence(lambda t: 1 + 0.8 * np.sin(2 * t), 3 + 0.4 * (1 - np.cos(6.0)))
        assert study.order >= 0.9
        assert all(a > b for a, b in zip(study.errors, study.errors[1:]))


class TestClip:
    def test_values_and_gradient(self):
        tape = Tape()
        c = tape.leaf(np.array([0.5, -0.5, 2.0, -3.0]))
        out = clip_features(c)
        assert np.array_equal(out.value, [0.5, -0.5, 1.0, -1.0])
        tape.backward(ad.sum(out))
        assert np.array_equal(c.grad, [1, 1, 0, 0])


class TestOpacityRegularizer:
    def test_examples(self):
        assert opacity_regularizer(frames_with([0.5, 0.7], [False, False])) == 0.0
        assert opacity_regularizer(frames_with([0.3, 0.9, 0.8], [True, False, False])) == pytest.approx(0.3)
        assert opacity_regularizer(frames_with([1e-9, 1e-8], [True, True])) < 1e-6


class TestRenderFrame:
    def test_empty_world(self):
        w = VoxelWorld((4, 4, 4))
        cfg = Config(train_res=6)
        res = render_frame(w, init_model(w, cfg), CameraPose((0, 2, 0), (4, 1, 4), width=6, height=6),
                           style_code(cfg), cfg)
        assert (res.frames.seg == SKY).all() and (res.frames.T_out == 1).all()
        assert np.isnan(res.frames.depth).all()

    def test_buffers(self, train8, small_cfg):
        cam = CameraPose((0.5, 5, 0.5), (6, 1, 6), width=8, height=6)
        f = render_frame(train8, init_model(train8, small_cfg), cam, style_code(small_cfg),
                         small_cfg).frames
        assert f.feature.shape == (6, 8, small_cfg.c_dim) and f.rgb.shape == (6, 8, 3)
        assert np.abs(f.feature).max() <= 1.0
        assert f.rgb.min() >= 0 and f.rgb.max() <= 1
        assert ((f.T_out >= 0) & (f.T_out <= 1)).all()
        assert np.all(np.abs(f.opacity + f.T_out - 1) < 1e-9)

    def test_deterministic(self, train8, small_cfg):
        cam = CameraPose((0.5, 5, 0.5), (6, 1, 6), width=8, height=8)
        store = init_model(train8, small_cfg)
        a = render_frame(train8, store, cam, style_code(small_cfg), small_cfg, seed=3).frames
        b = render_frame(train8, store, cam, style_code(small_cfg), small_cfg, seed=3).frames
        for name in ("feature", "rgb", "depth", "seg", "T_out", "truncated"):
            assert np.array_equal(getattr(a, name), getattr(b, name), equal_nan=True), name
        c = render_frame(train8, store, cam, style_code(small_cfg), small_cfg, seed=4).frames
        assert not np.array_equal(a.feature, c.feature)

    def test_single_voxel_depth(self):
        w = VoxelWorld((3, 3, 3), {(1, 1, 1): LabelId("stone", CLASS_ID["stone"])})
        cfg = Config(train_res=9)
        cam = CameraPose((1.5, 1.5, -4.0), (1.5, 1.5, 1.5), fov=np.deg2rad(10), width=3, height=3)
        f = render_frame(w, opaque_store(w, cfg), cam, style_code(cfg), cfg, n_samples=32).frames
        bin_width = 1.0 / 32
        assert f.depth[1, 1] == pytest.approx(5.0, abs=bin_width)
        assert f.seg[1, 1] == CLASS_ID["stone"]

    def test_opaque_limit_matches_projection(self):
        w = random_world((10, 10, 10), 0.15, seed=3)
        cfg = Config(train_res=16)
        cam = CameraPose((-3.0, 12.0, -2.0), (5, 4, 5), width=16, height=16)
        f = render_frame(w, opaque_store(w, cfg), cam, style_code(cfg), cfg).frames
        seg, depth = project_labels(w, cam)
        o, d = cam.rays()
        segs = traverse_batch(w, o, d)
        bins = np.minimum(segs.in_voxel_length(), cfg.d_max) / cfg.samples_eval
        first = np.zeros(len(o))
        starts = segs.offsets[:-1][segs.offsets[:-1] < segs.offsets[1:]]
        first[segs.ray[starts]] = segs.length[starts]
        # a chord spanning two bins always holds a sample
        solid = (first >= 2 * bins).reshape(16, 16) & (bins > 0).reshape(16, 16)
        assert solid.sum() > 50
        assert np.array_equal(f.seg[solid], seg[solid])
        assert np.allclose(f.depth[solid], depth[solid], atol=3.0 / cfg.samples_eval)

    def test_bypass(self, train8, small_cfg):
        cfg = small_cfg.replace(use_refiner=False)
        cam = CameraPose((0.5, 5, 0.5), (6, 1, 6), width=8, height=8)
        f = render_frame(train8, init_model(train8, cfg), cam, style_code(cfg), cfg).frames
        assert np.allclose(f.rgb, (f.feature[..., :3] + 1) / 2)


class TestProjectLabels:
    def test_empty(self):
        seg, depth = project_labels(VoxelWorld((2, 2, 2)), CameraPose((0, 0, 0), (1, 1, 1), width=3, height=3))
        assert (seg == SKY).all() and np.isinf(depth).all()

    def test_single_grass_voxel(self):
        w = VoxelWorld((3, 3, 3), {(1, 1, 1): LabelId("grass_block", CLASS_ID["grass"])})
        cam = CameraPose((1.5, 1.5, -2.0), (1.5, 1.5, 1.5), fov=np.deg2rad(5), width=1, height=1)
        seg, depth = project_labels(w, cam)
        assert seg[0, 0] == CLASS_ID["grass"] and depth[0, 0] == pytest.approx(3.0)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxelfield.bench import check_traversal, random_rays
from voxelfield.fixtures import random_world
from voxelfield.labels import CLASS_ID
from voxelfield.traversal import (Ray, SegmentList, first_hits, stratified_sample,
                                  stratified_sample_batch, traverse, traverse_batch, truncate,
                                  truncate_batch)
from voxelfield.world import LabelId, VoxelWorld

STONE = LabelId("stone", CLASS_ID["stone"])


def row_world(n=6):
    """A straight row of voxels along +x at y = z = 1."""
    return VoxelWorld((n + 2, 3, 3), {(x, 1, 1): STONE for x in range(1, n + 1)})


def unit_segments(lengths, gap=0.5):
    segs, t = [], 0.0
    for i, L in enumerate(lengths):
        segs.append((t, t + L, (i, 0, 0), 9))
        t += L + gap
    return SegmentList(segs)


class TestRay:
    def test_requires_unit_direction(self):
        with pytest.raises(ValueError):
            Ray([0, 0, 0], [1, 1, 0])
        Ray([0, 0, 0], [1, 0, 0])


class TestTraverse:
    def test_unit_chord(self):
        w = VoxelWorld((3, 3, 3), {(1, 1, 1): STONE})
        segs = traverse(w, Ray([-2.0, 1.5, 1.5], [1, 0, 0]))
        assert len(segs) == 1
        t0, t1, vox, label = segs.segments[0]
        assert (t0, t1) == pytest.approx((3.0, 4.0), abs=1e-12)
        assert vox == (1, 1, 1) and label == CLASS_ID["stone"]

    def test_miss(self):
        w = VoxelWorld((3, 3, 3), {(1, 1, 1): STONE})
        assert len(traverse(w, Ray([-2.0, 5.5, 1.5], [1, 0, 0]))) == 0
        assert len(traverse(w, Ray([-2.0, 1.5, 1.5], [-1, 0, 0]))) == 0

    def test_origin_inside_voxel(self):
        w = VoxelWorld((3, 3, 3), {(1, 1, 1): STONE})
        segs = traverse(w, Ray([1.25, 1.5, 1.5], [1, 0, 0]))
        assert segs.segments[0][:2] == pytest.approx((0.0, 0.75))

    def test_row_is_split_per_voxel(self):
        segs = traverse(row_world(4), Ray([0.0, 1.5, 1.5], [1, 0, 0]))
        assert [s[2] for s in segs.segments] == [(x, 1, 1) for x in range(1, 5)]
        assert segs.total_length == pytest.approx(4.0)

    def test_entry_axis(self):
        w = VoxelWorld((3, 3, 3), {(1, 1, 1): STONE})
        for axis in range(3):
            o = np.full(3, 1.5)
            o[axis] = -1.0
            d = np.zeros(3)
            d[axis] = 1.0
            segs = traverse_batch(w, o[None], d[None])
            assert segs.entry_axis[0] == axis

    def test_zero_components_match_oracle(self):
        w = random_world((16, 16, 16), 0.3, seed=5)
        rng = np.random.default_rng(0)
        o = rng.uniform(-2, 18, size=(300, 3))
        d = rng.normal(size=(300, 3))
        d[:100, 0] = 0
        d[100:200, 1:] = 0
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        check = check_traversal(w, o, d)
        assert check.ok, check

    def test_corner_crossing_matches_oracle(self):
        w = random_world((8, 8, 8), 0.5, seed=2)
        d = np.ones(3) / np.sqrt(3)
        o = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 1.0]]) - 0.5 * d
        check = check_traversal(w, o, np.tile(d, (3, 1)))
        assert check.ok, check

    def test_random_world_oracle(self):
        w = random_world((32, 32, 32), 0.2, seed=11)
        o, d = random_rays(w, 1000, np.random.default_rng(11))
        check = check_traversal(w, o, d)
        assert check.ok, check

    def test_segments_ordered_and_inside(self):
        w = random_world((16, 16, 16), 0.25, seed=3)
        o, d = random_rays(w, 200, np.random.default_rng(3))
        segs = traverse_batch(w, o, d)
        assert np.all(segs.t_exit > segs.t_enter) and np.all(segs.t_enter >= 0)
        same = segs.ray[1:] == segs.ray[:-1]
        assert np.all(segs.t_enter[1:][same] >= segs.t_exit[:-1][same])
        mid = 0.5 * (segs.t_enter + segs.t_exit)
        p = o[segs.ray] + mid[:, None] * d[segs.ray]
        assert np.array_equal(np.floor(p).astype(int), segs.voxel)
        assert all(w.label_at(v) is not None for v in segs.voxel)

    def test_first_hits(self):
        w = row_world(3)
        t, cls, vox, axis = first_hits(w, np.array([[0.0, 1.5, 1.5], [0.0, 2.5, 1.5]]),
                                       np.array([[1.0, 0, 0], [1.0, 0, 0]]))
        assert t[0] == pytest.approx(1.0) and cls[0] == CLASS_ID["stone"]
        assert tuple(vox[0]) == (1, 1, 1) and axis[0] == 0
        assert np.isinf(t[1]) and cls[1] == -1


class TestTruncate:
    def test_under_cap_unchanged(self):
        s = unit_segments([2.0])
        out = truncate(s, 3.0)
        assert out.segments == s.segments and not out.truncated

    def test_exact_boundary(self):
        out = truncate(unit_segments([1.0] * 4), 3.0)
        assert len(out) == 3 and out.truncated
        assert out.total_length == pytest.approx(3.0, abs=1e-12)

    def test_cap_lands_inside_segment(self):
        out = truncate(unit_segments([0.5, 1.2, 2.0]), 3.0)
        assert out.truncated and len(out) == 3
        t0, t1, _, _ = out.segments[2]
        assert t1 - t0 == pytest.approx(1.3, abs=1e-12)
        assert out.t_max == pytest.approx(t1)

    def test_distance_outside_voxels_not_counted(self):
        out = truncate(unit_segments([1.0, 1.0], gap=50.0), 3.0)
        assert not out.truncated and out.total_length == pytest.approx(2.0)

    def test_bad_dmax(self):
        with pytest.raises(ValueError):
            truncate(unit_segments([1.0]), 0.0)

    @settings(max_examples=80, deadline=None)
    @given(st.lists(st.floats(0.01, 3.0), min_size=0, max_size=8), st.floats(0.1, 6.0))
    def test_length_is_capped(self, lengths, d_max):
        s = unit_segments(lengths)
        out = truncate(s, d_max)
        assert out.total_length == pytest.approx(min(sum(lengths), d_max), abs=1e-9)
        assert out.truncated == (sum(lengths) >= d_max)


class TestSampling:
    def test_midpoints_with_half_jitter(self):
        ray = Ray([0, 0, 0], [1, 0, 0])
        s = stratified_sample(unit_segments([1.0]), ray, 4, jitter=np.full((1, 4), 0.5))
        assert s.t == pytest.approx([0.125, 0.375, 0.625, 0.875], abs=1e-15)
        assert s.delta == pytest.approx([0.25] * 4)

    def test_two_segments_split_evenly(self):
        w = VoxelWorld((6, 3, 3), {(1, 1, 1): STONE, (4, 1, 1): STONE})
        ray = Ray([0.0, 1.5, 1.5], [1, 0, 0])
        s = stratified_sample(traverse(w, ray), ray, 4, rng=np.random.default_rng(0))
        assert [tuple(v) for v in s.voxel] == [(1, 1, 1)] * 2 + [(4, 1, 1)] * 2
        assert np.array_equal(np.floor(s.position).astype(int), s.voxel)

    def test_empty(self):
        s = stratified_sample(SegmentList([]), Ray([0, 0, 0], [1, 0, 0]), 8)
        assert len(s) == 0

    def test_n_must_be_positive(self):
        with pytest.raises(ValueError):
            stratified_sample(unit_segments([1.0]), Ray([0, 0, 0], [1, 0, 0]), 0)

    def test_delta_sum_equals_capped_length(self):
        w = random_world((16, 16, 16), 0.3, seed=4)
        o, d = random_rays(w, 100, np.random.default_rng(4))
        full = traverse_batch(w, o, d)
        segs = truncate_batch(full, 3.0)
        s = stratified_sample_batch(segs, o, d, 24, rng=np.random.default_rng(0))
        sums = np.bincount(s.ray, weights=s.delta, minlength=100)
        assert np.allclose(sums, np.minimum(full.in_voxel_length(), 3.0), atol=1e-9, rtol=0)

    def test_samples_ordered_inside_and_deterministic(self):
        w = random_world((16, 16, 16), 0.3, seed=6)
        o, d = random_rays(w, 100, np.random.default_rng(6))
        segs = truncate_batch(traverse_batch(w, o, d), 3.0)
        a = stratified_sample_batch(segs, o, d, 24, rng=np.random.default_rng(9))
        b = stratified_sample_batch(segs, o, d, 24, rng=np.random.default_rng(9))
        assert np.array_equal(a.t, b.t) and np.array_equal(a.voxel, b.voxel)
        same = a.ray[1:] == a.ray[:-1]
        assert np.all(np.diff(a.t)[same] > 0)
        assert np.all(a.delta > 0)
        inside = (a.position >= a.voxel - 1e-9) & (a.position <= a.voxel + 1 + 1e-9)
        assert inside.all()

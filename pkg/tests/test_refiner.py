import numpy as np
import pytest

from voxelfield.autodiff import Tape
from voxelfield.config import Config
from voxelfield.field import as_vars
from voxelfield.refiner import init_refiner, refine, refine_bypass


def run(feature, cfg=None, params=None, w=None, squash=True):
    cfg = cfg or Config()
    params = params or init_refiner(cfg, np.random.default_rng(0))
    tape = Tape()
    w = np.random.default_rng(1).normal(size=cfg.w_dim) if w is None else w
    return refine(tape.const(feature), tape.const(w), as_vars(tape, "refiner", params), cfg, squash).value


def influence(cfg, size=21, seed=0):
    """Boolean map of output pixels that change when the center input pixel changes."""
    r = np.random.default_rng(seed)
    params = init_refiner(cfg, np.random.default_rng(seed))
    base = r.normal(size=(size, size, cfg.c_dim))
    bumped = base.copy()
    bumped[size // 2, size // 2] += r.normal(size=cfg.c_dim)
    diff = np.abs(run(bumped, cfg, params, squash=False) - run(base, cfg, params, squash=False))
    return diff.max(axis=-1) > 0


def test_receptive_field_is_nine():
    cfg = Config()
    assert cfg.receptive_field == 9
    changed = influence(cfg)
    rows, cols = np.nonzero(changed)
    assert rows.min() == 6 and rows.max() == 14 and cols.min() == 6 and cols.max() == 14
    assert changed[6:15, 6:15].all()


def test_receptive_field_tracks_kernels():
    cfg = Config(refiner_kernels=(3, 3, 1))
    rows, _ = np.nonzero(influence(cfg))
    assert rows.max() - rows.min() + 1 == cfg.receptive_field == 5


def test_constant_map_gives_constant_interior():
    out = run(np.full((16, 16, 8), 0.3))
    interior = out[4:-4, 4:-4]
    assert np.allclose(interior, interior[0, 0], atol=1e-14)


def test_translation_equivariance_interior():
    f = np.random.default_rng(2).normal(size=(20, 20, 8))
    a = run(f)
    b = run(np.roll(f, (2, 3), axis=(0, 1)))
    assert np.allclose(b[10:15, 10:15], a[8:13, 7:12], atol=1e-13)


def test_output_range_and_shape():
    out = run(10 * np.random.default_rng(3).normal(size=(9, 11, 8)))
    assert out.shape == (9, 11, 3)
    assert out.min() >= 0 and out.max() <= 1


def test_identity_configuration():
    cfg = Config(refiner_channels=8, leaky_slope=1.0)
    p = init_refiner(cfg, np.random.default_rng(0))
    for i, k in enumerate(cfg.refiner_kernels):
        p[f"conv{i}.K"][:] = 0.0
        p[f"conv{i}.K"][k // 2, k // 2] = np.eye(8)
        p[f"conv{i}.G"][:] = 0.0
        p[f"conv{i}.B"][:] = 0.0
    p["head.W"] = np.eye(3, 8)
    f = np.random.default_rng(4).normal(size=(10, 10, 8))
    assert np.allclose(run(f, cfg, p, squash=False), f[..., :3], atol=1e-14)


def test_style_changes_output():
    f = np.random.default_rng(5).normal(size=(10, 10, 8))
    assert not np.allclose(run(f, w=np.zeros(32)), run(f, w=np.ones(32)))


def test_bypass():
    tape = Tape()
    zero = refine_bypass(tape.const(np.zeros((2, 2, 8)))).value
    assert np.array_equal(zero, np.full((2, 2, 3), 0.5))
    f = np.zeros((1, 1, 8))
    f[..., 0] = 1.0
    assert refine_bypass(tape.const(f)).value[0, 0, 0] == 1.0
    with pytest.raises(ValueError):
        refine_bypass(tape.const(np.zeros((2, 2, 2))))

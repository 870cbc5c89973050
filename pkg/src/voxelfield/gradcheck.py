"""Finite-difference verification of the full training gradient."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .camera import CameraPose
from .config import Config
from .fixtures import tiny_world
from .model import ParameterStore, init_model, style_code
from .render import render_frame
from .trainer import LossWeights, OracleTarget, compute_loss, oracle_render
from .world import VoxelWorld

TOLERANCE = 1e-4


def gradcheck_config() -> Config:
    # short truncation so rays through both voxels exercise the opacity term
    return Config(d_max=1.5, samples_train=8, samples_eval=8, train_res=4)


def default_camera(world: VoxelWorld, res: int = 4) -> CameraPose:
    # looks down the row of voxels: some rays truncate, some partly hit, some see only sky
    center = world.coords.mean(axis=0) + 0.5
    return CameraPose(tuple(center + np.array([-3.5, 0.3, 0.2])), tuple(center + np.array([1.0, 0.0, 0.0])),
                      fov=np.deg2rad(30.0), width=res, height=res)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero entries from dominating."""
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


@dataclass
class GroupReport:
    group: str
    checked: int
    max_rel_error: float
    max_abs_grad: float


def loss_and_grads(world, store, camera, cfg, z, target, seed=0):
    tape = Tape()
    pvars = store.vars(tape)
    res = render_frame(world, store, camera, z, cfg, n_samples=cfg.samples_train, seed=seed,
                       tape=tape, pvars=pvars)
    total, _ = compute_loss(res.rgb, target, res.T_end, res.frames.truncated,
                            LossWeights.from_config(cfg))
    return float(total.value), tape.backward(total), res


def full_gradcheck(world: VoxelWorld | None = None, cfg: Config | None = None,
                   per_tensor: int = 12, h: float = 1e-5, seed: int = 0,
                   store: ParameterStore | None = None,
                   camera: CameraPose | None = None) -> list[GroupReport]:
    """Central differences on sampled coordinates of every parameter tensor.

    For each tensor the coordinates with the largest analytic gradient are
    checked, plus a few random ones.
    """
    world = world or tiny_world()
    cfg = cfg or gradcheck_config()
    store = store or init_model(world, cfg, seed)
    camera = camera or default_camera(world, cfg.train_res)
    z = style_code(cfg, seed)
    target = oracle_render(world, camera, OracleTarget.from_config(cfg))
    _, grads, _ = loss_and_grads(world, store, camera, cfg, z, target)
    rng = np.random.default_rng(seed)

    def loss_at():
        return loss_and_grads(world, store, camera, cfg, z, target)[0]

    errors: dict[str, list[float]] = {}
    biggest: dict[str, float] = {}
    for group, name, arr in list(store.items()):
        g = grads[group][name]
        flat = g.ravel()
        k = min(per_tensor, flat.size)
        top = np.argsort(-np.abs(flat))[: k // 2 + 1]
        rand = rng.choice(flat.size, size=k - len(top) if flat.size > k else 0, replace=False)
        idx = np.unique(np.concatenate([top, rand]).astype(np.int64))
        for i in idx:
            coord = np.unravel_index(i, arr.shape)
            old = arr[coord]
            arr[coord] = old + h
            up = loss_at()
            arr[coord] = old - h
            down = loss_at()
            arr[coord] = old
            numeric = (up - down) / (2 * h)
            errors.setdefault(group, []).append(float(relative_error(flat[i], numeric)))
        biggest[group] = max(biggest.get(group, 0.0), float(np.abs(flat).max()) if flat.size else 0.0)
    return [GroupReport(gr, len(errs), max(errs), biggest[gr]) for gr, errs in sorted(errors.items())]



def op_gradcheck(fn, inputs, h: float = 1e-5, seed: int = 0, floor: float = 1e-3) -> float:
    """Max relative error of the adjoints of ``fn`` against central differences.

    The probed scalar is ``sum(fn(*xs) * R)`` for a fixed random ``R``, so every
    output coordinate contributes. Every input coordinate is perturbed.
    """
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    out_shape = fn(*[Tape().const(a) for a in inputs]).shape
    probe = np.random.default_rng(seed).normal(size=out_shape)

    def scalar(tape):
        xs = [tape.leaf(a) for a in inputs]
        return xs, ad.sum(fn(*xs) * probe)

    tape = Tape()
    xs, loss = scalar(tape)
    tape.backward(loss)
    worst = 0.0
    for x, arr in zip(xs, inputs):
        g = x.grad if x.grad is not None else np.zeros_like(arr)
        for i in range(arr.size):
            idx = np.unravel_index(i, arr.shape)
            old = arr[idx]
            arr[idx] = old + h
            up = float(scalar(Tape())[1].value)
            arr[idx] = old - h
            down = float(scalar(Tape())[1].value)
            arr[idx] = old
            worst = max(worst, float(relative_error(g[idx], (up - down) / (2 * h), floor)))
    return worst


def _away_from(x: np.ndarray, points, gap: float = 0.05) -> np.ndarray:
    """Nudge entries off kinks so finite differences never straddle one."""
    x = x.copy()
    for p in points:
        near = np.abs(x - p) < gap
        x[near] = p + np.where(x[near] >= p, gap, -gap) * 2
    return x


def op_cases(seed: int = 0) -> dict[str, tuple]:
    """Named (fn, inputs) pairs covering every differentiable op the pipeline uses."""
    from scipy import sparse

    from .field import mod_linear
    from .traversal import SampleSet

    r = np.random.default_rng(seed)
    n = lambda *shape: r.normal(size=shape)  # noqa: E731
    offsets = np.array([0, 3, 3, 7, 10])
    seg_ids = np.repeat(np.arange(4), np.diff(offsets))
    rows = np.array([0, 2, 2, 1, 0])
    sp = sparse.random(6, 5, density=0.5, random_state=seed)
    mod_params = ["W", "b", "A", "a0"]

    def modlin(x, w, W, b, A, a0):
        return mod_linear(x, w, dict(zip(mod_params, (W, b, A, a0))))

    def quadrature(c, sigma, c_sky):
        from .render import integrate
        samples = SampleSet(4, seg_ids, np.arange(10.0), np.full(10, 0.3), np.zeros((10, 3)),
                            np.zeros((10, 3), dtype=np.int64), np.zeros(10, dtype=np.int64),
                            np.zeros(4, dtype=bool))
        q = integrate(c, ad.softplus(sigma), samples, c_sky)
        return ad.concat([q.color, ad.reshape(q.T_end, (-1, 1))], axis=-1)

    def trilinear(table):
        from .world import trilinear_weights
        w = trilinear_weights(r_frac)
        m = sparse.csr_matrix((w.ravel(), (np.repeat(np.arange(5), 8), corner_rows.ravel())),
                              shape=(5, 8))
        return ad.sparse_matmul(m, table)

    r_frac = r.random((5, 3))
    corner_rows = np.tile(np.arange(8), (5, 1))
    return {
        "add": (lambda a, b: a + b, [n(3, 4), n(4)]),
        "sub": (lambda a, b: a - b, [n(3, 1), n(3, 4)]),
        "mul": (lambda a, b: a * b, [n(3, 4), n(3, 4)]),
        "div": (lambda a, b: a / b, [n(3, 4), 1.5 + r.random((1, 4))]),
        "matmul": (lambda a, b: a @ b, [n(3, 4), n(4, 2)]),
        "matmul_batched": (lambda a, b: a @ b, [n(2, 3, 4), n(4, 2)]),
        "matvec": (lambda a, b: a @ b, [n(3, 4), n(4)]),
        "vecmat": (lambda a, b: a @ b, [n(4), n(4, 2)]),
        "transpose": (lambda a: a.T, [n(3, 4)]),
        "reshape": (lambda a: ad.reshape(a, (2, 6)), [n(3, 4)]),
        "getitem_basic": (lambda a: a[1:, ::2], [n(3, 4)]),
        "getitem_fancy": (lambda a: a[np.array([0, 2, 0])], [n(3, 4)]),
        "take_rows": (lambda a: ad.take_rows(a, rows), [n(3, 4)]),
        "sum_axis": (lambda a: ad.sum(a, axis=1, keepdims=True), [n(3, 4)]),
        "mean": (lambda a: ad.mean(a, axis=0), [n(3, 4)]),
        "exp": (ad.exp, [n(5)]),
        "sqrt": (ad.sqrt, [0.5 + r.random(5)]),
        "sin": (ad.sin, [n(5)]),
        "cos": (ad.cos, [n(5)]),
        "tanh": (ad.tanh, [n(5)]),
        "softplus": (ad.softplus, [3 * n(5)]),
        "leaky_relu": (ad.leaky_relu, [_away_from(n(8), [0.0])]),
        "clamp": (lambda a: ad.clamp(a, -1.0, 1.0), [_away_from(2 * n(8), [-1.0, 1.0])]),
        "abs": (ad.abs, [_away_from(n(8), [0.0])]),
        "square": (ad.square, [n(5)]),
        "concat": (lambda a, b: ad.concat([a, b], axis=-1), [n(3, 2), n(3, 4)]),
        "broadcast_rows": (lambda a: ad.broadcast_rows(a, 3), [n(4)]),
        "sparse_matmul": (lambda a: ad.sparse_matmul(sp, a), [n(5, 3)]),
        "segment_sum": (lambda a: ad.segment_sum(a, seg_ids, 4), [n(10, 2)]),
        "segment_cumsum_exclusive": (lambda a: ad.segment_cumsum_exclusive(a, offsets), [n(10)]),
        "conv2d": (ad.conv2d, [n(5, 6, 2), n(3, 3, 2, 3)]),
        "mod_linear": (modlin, [n(4, 5), n(3), n(2, 5), n(2), n(5, 3), 1.0 + 0.1 * n(5)]),
        "trilinear_gather": (trilinear, [n(8, 3)]),
        "quadrature": (quadrature, [n(10, 2), n(10), n(4, 2)]),
    }


def per_op_errors(seed: int = 0) -> dict[str, float]:
    return {name: op_gradcheck(fn, inputs, seed=seed) for name, (fn, inputs) in op_cases(seed).items()}

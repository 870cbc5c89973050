"""End-to-end training against a deterministic flat-shaded target renderer."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .camera import CameraPose
from .config import Config
from .labels import LabelScheme, default_scheme, label_entropy
from .model import GROUPS, ParameterStore, init_model, style_code
from .render import opacity_term, project_labels, render_frame
from .traversal import first_hits
from .world import VoxelWorld

class CameraSamplingError(RuntimeError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class LossWeights:
    l2: float = 10.0
    l1: float = 1.0
    opacity: float = 0.5
    # present for completeness; the adversarial, perceptual and KL terms are not implemented
    gan: float = 0.0
    perceptual: float = 0.0
    kl: float = 0.0

    def __post_init__(self):
        for k in ("l2", "l1", "opacity", "gan", "perceptual", "kl"):
            if getattr(self, k) < 0:
                raise ValueError(f"loss weight {k} must be >= 0")

    @classmethod
    def from_config(cls, cfg: Config) -> "LossWeights":
        return cls(cfg.w_l2, cfg.w_l1, cfg.w_opacity, cfg.w_gan, cfg.w_perceptual, cfg.w_kl)


@dataclass(frozen=True)
class OracleTarget:
    palette: np.ndarray
    light: np.ndarray = field(default_factory=lambda: np.array([0.3, 1.0, 0.5]))
    ambient: float = 0.45
    diffuse: float = 0.55
    horizon: tuple[float, float, float] = (0.85, 0.90, 0.98)
    zenith: tuple[float, float, float] = (0.30, 0.50, 0.85)

    @classmethod
    def from_config(cls, cfg: Config, scheme: LabelScheme | None = None) -> "OracleTarget":
        scheme = scheme or default_scheme()
        return cls(scheme.palette, np.asarray(cfg.oracle_light, dtype=np.float64),
                   cfg.oracle_ambient, cfg.oracle_diffuse)


def sky_gradient(dirs: np.ndarray, oracle: OracleTarget) -> np.ndarray:
    t = np.clip(dirs[:, 1], 0.0, 1.0)[:, None]
    return (1.0 - t) * np.asarray(oracle.horizon) + t * np.asarray(oracle.zenith)


def oracle_render(world: VoxelWorld, camera: CameraPose, oracle: OracleTarget) -> np.ndarray:
    """Flat-shaded first-hit image: albedo * (ambient + diffuse * max(0, n.l))."""
    origins, dirs = camera.rays()
    t, cls, _, axis = first_hits(world, origins, dirs)
    light = np.asarray(oracle.light, dtype=np.float64)
    light = light / np.linalg.norm(light)
    normal = -dirs.copy()           # ray starting inside a voxel faces the viewer
    faced = axis >= 0
    normal[faced] = 0.0
    rows = np.nonzero(faced)[0]
    normal[rows, axis[faced]] = -np.sign(dirs[rows, axis[faced]])
    shade = oracle.ambient + oracle.diffuse * np.maximum(0.0, normal @ light)
    hit = cls >= 0
    img = sky_gradient(dirs, oracle)
    img[hit] = oracle.palette[cls[hit]] * shade[hit, None]
    return np.clip(img, 0.0, 1.0).reshape(camera.height, camera.width, 3)


def camera_score(world: VoxelWorld, camera: CameraPose) -> tuple[float, float]:
    """(mean depth over hit pixels, label entropy) of the projected labels."""
    seg, depth = project_labels(world, camera)
    hit = np.isfinite(depth)
    mean_depth = float(depth[hit].mean()) if hit.any() else 0.0
    return mean_depth, label_entropy(seg)


def sample_camera(world: VoxelWorld, rng: np.random.Generator, cfg: Config | None = None,
                  width: int | None = None, height: int | None = None) -> tuple[CameraPose, int]:
    """Rejection-sample an eye/look-at pair placed slightly above the terrain.

    Returns the pose and the number of attempts it took.
    """
    cfg = cfg or Config()
    if world.K == 0:
        raise ValueError("cannot sample cameras in an empty world")
    width = width or cfg.train_res
    height = height or cfg.train_res
    tops = world.column_tops()
    dx, _, dz = world.dims

    def point():
        x, z = rng.uniform(0, dx), rng.uniform(0, dz)
        h = tops[min(int(x), dx - 1), min(int(z), dz - 1)]
        return np.array([x, h + rng.uniform(cfg.camera_height_min, cfg.camera_height_max), z])

    for attempt in range(1, cfg.camera_retries + 1):
        eye, at = point(), point()
        if np.linalg.norm(eye - at) < 1e-6:
            continue
        cam = CameraPose(tuple(eye), tuple(at), fov=np.deg2rad(cfg.fov_deg),
                         width=width, height=height)
        mean_depth, entropy = camera_score(world, cam)
        if mean_depth >= cfg.min_mean_depth and entropy >= cfg.min_entropy:
            return cam, attempt
    raise CameraSamplingError(
        f"no camera passed depth >= {cfg.min_mean_depth} and entropy >= {cfg.min_entropy} "
        f"in {cfg.camera_retries} attempts; the world is probably degenerate")


def compute_loss(pred, target, T_out, truncated, weights: LossWeights):
    """Weighted L2 + L1 reconstruction plus the truncated-ray opacity penalty.

    Accepts tape ``Var``s (for training) or plain arrays. Returns ``(total, parts)``
    where ``parts`` holds the unweighted terms as floats.
    """
    tape = next((x.tape for x in (pred, T_out) if isinstance(x, Var)), None) or Tape()
    wrap = lambda x: x if isinstance(x, Var) else tape.const(x)  # noqa: E731
    pred, T_out = wrap(pred), wrap(T_out)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    truncated = np.asarray(truncated, dtype=bool).reshape(T_out.shape)
    diff = pred - target
    l2 = ad.mean(ad.square(diff))
    l1 = ad.mean(ad.abs(diff))
    opacity = opacity_term(T_out, truncated) * (1.0 / truncated.size)
    total = l2 * weights.l2 + l1 * weights.l1 + opacity * weights.opacity
    parts = {"l2": float(l2.value), "l1": float(l1.value), "opacity": float(opacity.value)}
    return total, parts


@dataclass
class OptimizerState:
    lr: dict[str, float]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    v: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    @classmethod
    def for_store(cls, store: ParameterStore, cfg: Config) -> "OptimizerState":
        lr = {g: cfg.lr_generator for g in GROUPS}
        lr["features"] = cfg.lr_features
        state = cls(lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        for g, n, a in store.items():
            state.m.setdefault(g, {})[n] = np.zeros_like(a)
            state.v.setdefault(g, {})[n] = np.zeros_like(a)
        return state


def adam_step(store: ParameterStore, grads: dict[str, dict[str, np.ndarray]],
              state: OptimizerState) -> None:
    """In-place Adam update with per-group learning rates."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for g, n, p in list(store.items()):
        grad = grads.get(g, {}).get(n)
        if grad is None:
            grad = np.zeros_like(p)
        m = state.m[g][n]
        v = state.v[g][n]
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        p -= state.lr[g] * (m / c1) / (np.sqrt(v / c2) + state.eps)


def iteration_seed(seed: int, iteration: int) -> int:
    return int(np.random.SeedSequence([seed, iteration]).generate_state(1)[0])


def train_step(world, store, cfg, z, camera, target, weights, seed):
    tape = Tape()
    pvars = store.vars(tape)
    res = render_frame(world, store, camera, z, cfg, n_samples=cfg.samples_train, seed=seed,
                       tape=tape, pvars=pvars)
    total, parts = compute_loss(res.rgb, target, res.T_end, res.frames.truncated, weights)
    grads = tape.backward(total)
    tape.clear()
    return float(total.value), parts, grads, res


def _non_finite_groups(grads) -> list[str]:
    return [g for g, arrays in grads.items() if any(not np.all(np.isfinite(a)) for a in arrays.values())]


@dataclass
class TrainResult:
    store: ParameterStore
    metrics: list[dict]


def format_metrics(record: dict) -> str:
    def fmt(v):
        return f"{v:.9g}" if isinstance(v, float) else str(v)
    return " ".join(f"{k}={fmt(v)}" for k, v in record.items())


def train(world: VoxelWorld, cfg: Config, out_dir: str | Path | None = None,
          store: ParameterStore | None = None,
          callback: Callable[[dict], None] | None = None) -> TrainResult:
    """Sample camera, render, refine, compare with the target, backprop, Adam; repeat."""
    from .io import save_checkpoint

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(cfg.to_text())
        metrics_file = open(out / "metrics.log", "w")
    store = store or init_model(world, cfg, cfg.seed)
    state = OptimizerState.for_store(store, cfg)
    weights = LossWeights.from_config(cfg)
    oracle = OracleTarget.from_config(cfg)
    z = style_code(cfg)
    cam_rng = np.random.default_rng([cfg.seed, 1])
    metrics = []
    try:
        for it in range(1, cfg.iterations + 1):
            start = time.perf_counter()
            camera, tries = sample_camera(world, cam_rng, cfg)
            target = oracle_render(world, camera, oracle)
            total, parts, grads, res = train_step(world, store, cfg, z, camera, target,
                                                  weights, iteration_seed(cfg.seed, it))
            bad = _non_finite_groups(grads)
            if not math.isfinite(total) or bad:
                raise TrainingError(f"non-finite loss/gradient at iteration {it}: "
                                    f"loss={total}, groups={bad or 'none'}")
            adam_step(store, grads, state)
            trunc = res.frames.truncated
            record = {
                "iteration": it,
                "total": total,
                **parts,
                "mean_t_end": float(res.frames.T_out[trunc].mean()) if trunc.any() else float("nan"),
                "n_truncated": int(trunc.sum()),
                "camera_tries": tries,
                "seconds": time.perf_counter() - start,
            }
            metrics.append(record)
            if out is not None:
                metrics_file.write(format_metrics(record) + "\n")
                metrics_file.flush()
                if it % cfg.checkpoint_every == 0 or it == cfg.iterations:
                    save_checkpoint(out / "checkpoint.vfc", store, cfg, it)
            if callback is not None:
                callback(record)
    finally:
        if out is not None:
            metrics_file.close()
    return TrainResult(store, metrics)


def moving_average(values, end: int, window: int = 10) -> float:
    """Mean of ``values[end - window:end]`` ignoring NaNs (``end`` is 1-based, inclusive)."""
    seg = np.asarray(values[max(0, end - window):end], dtype=np.float64)
    return float(np.nanmean(seg))

"""Image-space renderer: a shallow style-modulated CNN from feature map to RGB."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .config import Config


def init_refiner(cfg: Config, rng: np.random.Generator) -> dict[str, np.ndarray]:
    params = {}
    c_in = cfg.c_dim
    for i, k in enumerate(cfg.refiner_kernels):
        c_out = cfg.refiner_channels
        fan_in = k * k * c_in
        params[f"conv{i}.K"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(k, k, c_in, c_out))
        params[f"conv{i}.b"] = np.zeros(c_out)
        params[f"conv{i}.G"] = rng.normal(0.0, 0.1 / np.sqrt(cfg.w_dim), size=(c_out, cfg.w_dim))
        params[f"conv{i}.g0"] = np.ones(c_out)
        params[f"conv{i}.B"] = rng.normal(0.0, 0.1 / np.sqrt(cfg.w_dim), size=(c_out, cfg.w_dim))
        params[f"conv{i}.b0"] = np.zeros(c_out)
        c_in = c_out
    params["head.W"] = rng.normal(0.0, 1.0 / np.sqrt(c_in), size=(3, c_in))
    params["head.b"] = np.zeros(3)
    return params


def refine(feature: Var, w: Var, p: dict[str, Var], cfg: Config, squash: bool = True) -> Var:
    """Stride-1 modulated convolutions, then a 1x1 head to RGB in [0, 1].

    Each layer's output is scaled and shifted per channel by affine maps of the
    style feature. With ``squash=False`` the head output is returned raw.
    """
    h = feature
    for i in range(len(cfg.refiner_kernels)):
        h = ad.conv2d(h, p[f"conv{i}.K"]) + p[f"conv{i}.b"]
        gamma = p[f"conv{i}.G"] @ w + p[f"conv{i}.g0"]
        beta = p[f"conv{i}.B"] @ w + p[f"conv{i}.b0"]
        h = ad.leaky_relu(h * gamma + beta, cfg.leaky_slope)
    out = h @ p["head.W"].T + p["head.b"]
    if not squash:
        return out
    return (ad.tanh(out) + 1.0) * 0.5


def refine_bypass(feature: Var) -> Var:
    """No CNN: the first three feature channels mapped from [-1, 1] to [0, 1]."""
    if feature.shape[-1] < 3:
        raise ValueError("bypass needs at least 3 feature channels")
    return (feature[..., :3] + 1.0) * 0.5

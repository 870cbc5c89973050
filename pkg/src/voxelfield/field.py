"""Style-conditioned neural field: per-sample MLP, sky dome MLP and style network.

Parameters live in plain ``dict[str, np.ndarray]`` groups. The forward functions
take the same dicts with every array wrapped as a tape ``Var``.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .config import Config
from .labels import NUM_CLASSES


def _linear_init(rng, n_in, n_out, gain=1.0):
    return rng.normal(0.0, gain / np.sqrt(n_in), size=(n_out, n_in)), np.zeros(n_out)


def encoded_width(cfg: Config) -> int:
    n_pass = cfg.feature_dim - cfg.n_encoded
    return cfg.n_encoded * 2 * cfg.n_freq + n_pass


def sky_input_width(cfg: Config) -> int:
    return 3 + 3 * 2 * cfg.sky_freq


def init_style(cfg: Config, rng: np.random.Generator) -> dict[str, np.ndarray]:
    W1, b1 = _linear_init(rng, cfg.z_dim, cfg.w_dim, gain=np.sqrt(2.0))
    W2, b2 = _linear_init(rng, cfg.w_dim, cfg.w_dim)
    return {"W1": W1, "b1": b1, "W2": W2, "b2": b2}


def init_mod_linear(rng, n_in, n_out, w_dim, prefix, gain=1.0) -> dict[str, np.ndarray]:
    W, b = _linear_init(rng, n_in, n_out, gain)
    return {
        f"{prefix}.W": W,
        f"{prefix}.b": b,
        f"{prefix}.A": rng.normal(0.0, 0.1 / np.sqrt(w_dim), size=(n_in, w_dim)),
        f"{prefix}.a0": np.ones(n_in),
    }


def init_field(cfg: Config, rng: np.random.Generator) -> dict[str, np.ndarray]:
    params: dict[str, np.ndarray] = {}
    n_in = encoded_width(cfg) + cfg.label_dim
    params["label_embed"] = rng.normal(0.0, 0.5, size=(NUM_CLASSES, cfg.label_dim))
    width = n_in
    for i in range(cfg.field_trunk_layers):
        params[f"trunk{i}.W"], params[f"trunk{i}.b"] = _linear_init(rng, width, cfg.hidden, np.sqrt(2.0))
        width = cfg.hidden
    params["density.W"], params["density.b"] = _linear_init(rng, width, 1)
    for i in range(cfg.field_mod_layers):
        last = i == cfg.field_mod_layers - 1
        n_out = cfg.c_dim if last else cfg.hidden
        params.update(init_mod_linear(rng, width, n_out, cfg.w_dim, f"mod{i}",
                                      gain=1.0 if last else np.sqrt(2.0)))
        width = n_out
    return params


def init_sky(cfg: Config, rng: np.random.Generator) -> dict[str, np.ndarray]:
    n_in = sky_input_width(cfg) + cfg.w_dim
    W1, b1 = _linear_init(rng, n_in, cfg.hidden, np.sqrt(2.0))
    W2, b2 = _linear_init(rng, cfg.hidden, cfg.c_dim)
    return {"W1": W1, "b1": b1, "W2": W2, "b2": b2}


def linear(x: Var, W: Var, b: Var) -> Var:
    return x @ W.T + b


def style_network(z: Var, p: dict[str, Var], slope: float = 0.2) -> Var:
    """Map a style code z to the shared style feature w (2 layers, no final activation)."""
    h = ad.leaky_relu(z @ p["W1"].T + p["b1"], slope)
    return h @ p["W2"].T + p["b2"]


def fourier(u: Var, n_freq: int) -> Var:
    """[sin(2^k pi u) for k] + [cos(2^k pi u) for k], grouped by frequency."""
    if n_freq == 0:
        return None
    parts = []
    for k in range(n_freq):
        scaled = u * (np.pi * 2.0 ** k)
        parts.append(ad.sin(scaled))
        parts.append(ad.cos(scaled))
    return ad.concat(parts, axis=-1)


def positional_encode_partial(code: Var, n_encoded: int = 24, n_freq: int = 4) -> Var:
    """Fourier-encode the first ``n_encoded`` channels and pass the rest through."""
    if code.shape[-1] < n_encoded:
        raise ValueError(f"location code has {code.shape[-1]} channels, need >= {n_encoded}")
    enc = fourier(code[..., :n_encoded], n_freq) if n_encoded else None
    passthrough = code[..., n_encoded:]
    if enc is None:
        return passthrough
    return ad.concat([enc, passthrough], axis=-1)


def _key(prefix: str, name: str) -> str:
    return f"{prefix}.{name}" if prefix else name


def modulated_weight(w: Var, p: dict[str, Var], prefix: str = "", eps: float = 1e-8) -> Var:
    """Per-input scale s = A w + a0 applied to W's columns, then each row renormalized."""
    s = p[_key(prefix, "A")] @ w + p[_key(prefix, "a0")]
    Wm = p[_key(prefix, "W")] * s
    norm = ad.sqrt(ad.sum(ad.square(Wm), axis=1, keepdims=True) + eps)
    return Wm / norm


def mod_linear(x: Var, w: Var, p: dict[str, Var], prefix: str = "", eps: float = 1e-8) -> Var:
    return x @ modulated_weight(w, p, prefix, eps).T + p[_key(prefix, "b")]


def field_trunk(x: Var, p: dict[str, Var], cfg: Config) -> Var:
    h = x
    for i in range(cfg.field_trunk_layers):
        h = ad.leaky_relu(linear(h, p[f"trunk{i}.W"], p[f"trunk{i}.b"]), cfg.leaky_slope)
    return h


def field_density(h: Var, p: dict[str, Var]) -> Var:
    return ad.softplus(linear(h, p["density.W"], p["density.b"]))[:, 0]


def field_feature(h: Var, w: Var, p: dict[str, Var], cfg: Config) -> Var:
    for i in range(cfg.field_mod_layers):
        h = mod_linear(h, w, p, f"mod{i}", cfg.demod_eps)
        if i < cfg.field_mod_layers - 1:
            h = ad.leaky_relu(h, cfg.leaky_slope)
    return h


def field_eval(code_encoded: Var, label: np.ndarray, w: Var, p: dict[str, Var],
               cfg: Config) -> tuple[Var, Var]:
    """Per-sample (feature c, density sigma); sigma never touches the style feature."""
    label = np.asarray(label, dtype=np.int64).reshape(-1)
    emb = ad.take_rows(p["label_embed"], label)
    x = ad.concat([code_encoded, emb], axis=-1)
    h = field_trunk(x, p, cfg)
    return field_feature(h, w, p, cfg), field_density(h, p)


def encode_direction(v: Var, n_freq: int) -> Var:
    enc = fourier(v, n_freq)
    return v if enc is None else ad.concat([v, enc], axis=-1)


def sky_eval(v: Var, w: Var, p: dict[str, Var], cfg: Config) -> Var:
    """Sky feature from view direction and style only; ray origins never enter."""
    d = encode_direction(v, cfg.sky_freq)
    x = ad.concat([d, ad.broadcast_rows(w, d.shape[0])], axis=-1)
    h = ad.leaky_relu(linear(x, p["W1"], p["b1"]), cfg.leaky_slope)
    return linear(h, p["W2"], p["b2"])


def as_vars(tape: Tape, group: str, arrays: dict[str, np.ndarray]) -> dict[str, Var]:
    return {name: tape.param(group, name, arr) for name, arr in arrays.items()}

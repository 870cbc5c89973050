"""Parameter store: every trainable array, grouped for per-group learning rates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Var
from .config import Config
from .field import init_field, init_sky, init_style
from .refiner import init_refiner
from .world import FeatureTable, VoxelWorld, init_features

GROUPS = ("features", "field", "sky", "style", "refiner")


@dataclass
class ParameterStore:
    groups: dict[str, dict[str, np.ndarray]]
    table: FeatureTable

    def __post_init__(self):
        # the table's values and the "features" group are one array
        self.groups.setdefault("features", {})["table"] = self.table.values

    def vars(self, tape: Tape) -> dict[str, dict[str, Var]]:
        return {g: {n: tape.param(g, n, a) for n, a in arrays.items()}
                for g, arrays in self.groups.items()}

    def items(self):
        for g in sorted(self.groups):
            for n in sorted(self.groups[g]):
                yield g, n, self.groups[g][n]

    def count(self, group: str | None = None) -> int:
        return sum(a.size for g, _, a in self.items() if group in (None, g))

    def set(self, group: str, name: str, value: np.ndarray) -> None:
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.groups[group][name].shape:
            raise ValueError(f"shape mismatch for {group}/{name}")
        self.groups[group][name] = value
        if group == "features" and name == "table":
            self.table.values = value

    def copy(self) -> "ParameterStore":
        groups = {g: {n: a.copy() for n, a in arrays.items()} for g, arrays in self.groups.items()}
        table = FeatureTable(self.table.dims, self.table.keys.copy(), groups["features"]["table"])
        return ParameterStore(groups, table)


def init_model(world: VoxelWorld, cfg: Config, seed: int = 0) -> ParameterStore:
    """Deterministic initialization; each group draws from its own seeded stream."""
    streams = np.random.SeedSequence(seed).spawn(len(GROUPS))
    rngs = {g: np.random.default_rng(s) for g, s in zip(GROUPS, streams)}
    table = init_features(world, cfg.feature_dim, seed=int(rngs["features"].integers(2**31)),
                          scale=cfg.feature_init_scale)
    groups = {
        "field": init_field(cfg, rngs["field"]),
        "sky": init_sky(cfg, rngs["sky"]),
        "style": init_style(cfg, rngs["style"]),
        "refiner": init_refiner(cfg, rngs["refiner"]),
    }
    return ParameterStore(groups, table)


def style_code(cfg: Config, seed: int | None = None) -> np.ndarray:
    rng = np.random.default_rng(cfg.style_seed if seed is None else seed)
    return rng.normal(size=cfg.z_dim)

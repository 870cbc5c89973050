"""Procedural fixture worlds used by tests, benchmarks and the CLI examples.

Run ``python -m voxelfield.fixtures <dir>`` to write them as GVOX files.
"""
from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

from .labels import default_scheme
from .world import LabelId, VoxelWorld, save_world


def _world(dims, voxels: dict) -> VoxelWorld:
    table = default_scheme().table
    return VoxelWorld(dims, {c: LabelId(name, table[name]) for c, name in voxels.items()})


def tiny_world() -> VoxelWorld:
    """Two face-adjacent voxels: grass next to stone."""
    return _world((4, 4, 4), {(1, 1, 1): "grass_block", (2, 1, 1): "stone"})


def random_world(dims=(32, 32, 32), occupancy: float = 0.2, seed: int = 0) -> VoxelWorld:
    rng = np.random.default_rng(seed)
    mask = rng.random(dims) < occupancy
    names = ["grass_block", "dirt", "stone", "sand", "water", "oak_log", "gravel", "snow"]
    labels = rng.integers(len(names), size=dims)
    return _world(dims, {tuple(int(i) for i in c): names[labels[tuple(c)]]
                         for c in np.argwhere(mask)})


def terrain_world(size: int = 32, height: int = 16, seed: int = 0) -> tuple[VoxelWorld, int]:
    """Rolling terrain with a stone core, soil, a lake, sand, snow and a few trees.

    Returns the world and the voxel count tallied while building it.
    """
    rng = np.random.default_rng(seed)
    xs, zs = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    phase = rng.uniform(0, 2 * np.pi, size=4)
    h = (height * 0.45
         + 2.5 * np.sin(xs / 5.0 + phase[0]) * np.cos(zs / 6.0 + phase[1])
         + 1.5 * np.sin((xs + zs) / 4.0 + phase[2])
         + 1.0 * np.cos(xs / 3.0 - zs / 7.0 + phase[3]))
    h = np.clip(np.round(h).astype(int), 2, height - 5)
    sea = int(np.percentile(h, 20))
    peak = int(np.percentile(h, 92))
    voxels = {}
    count = 0
    for x in range(size):
        for z in range(size):
            top = h[x, z]
            for y in range(top):
                if y < top - 3:
                    name = "stone"
                elif y < top - 1:
                    name = "dirt"
                elif top <= sea:
                    name = "sand"
                elif top >= peak:
                    name = "snow_block"
                else:
                    name = "grass_block"
                voxels[(x, y, z)] = name
                count += 1
            for y in range(top, sea):
                voxels[(x, y, z)] = "water"
                count += 1
    spots = rng.integers(2, size - 2, size=(6, 2))
    for x, z in spots:
        top = h[x, z]
        if top <= sea:
            continue
        for y in range(top, top + 3):
            if (x, y, z) not in voxels:
                voxels[(x, y, z)] = "oak_log"
                count += 1
        for dx in (-1, 0, 1):
            for dz in (-1, 0, 1):
                c = (x + dx, top + 3, z + dz)
                if c not in voxels and c[1] < height:
                    voxels[c] = "oak_leaves"
                    count += 1
    flower_spots = rng.integers(0, size, size=(10, 2))
    for x, z in flower_spots:
        c = (int(x), int(h[x, z]), int(z))
        if h[x, z] > sea and c not in voxels:
            voxels[c] = "poppy"
            count += 1
    return _world((size, height, size), voxels), count


def training_world() -> VoxelWorld:
    """8x8x8 scene: grass and dirt ground, a pond, a stone block and a small tree."""
    voxels = {}
    for x in range(8):
        for z in range(8):
            ground = 2 if (x + z) % 5 else 1
            for y in range(ground):
                voxels[(x, y, z)] = "dirt" if y < ground - 1 else "grass_block"
    for x, z in [(5, 5), (5, 6), (6, 5), (6, 6)]:
        voxels[(x, 1, z)] = "water"
        voxels[(x, 0, z)] = "sand"
    for y in range(2, 4):
        for x in (1, 2):
            voxels[(x, y, 1)] = "stone"
    for y in range(2, 5):
        voxels[(3, y, 5)] = "oak_log"
    for dx in (-1, 0, 1):
        for dz in (-1, 0, 1):
            voxels[(3 + dx, 5, 5 + dz)] = "oak_leaves"
    voxels[(6, 2, 2)] = "poppy"
    return _world((8, 8, 8), voxels)


def write_all(out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    terrain, _ = terrain_world()
    for name, world in [("tiny.gvox", tiny_world()), ("train8.gvox", training_world()),
                        ("terrain32.gvox", terrain)]:
        save_world(world, out / name)
        written.append(out / name)
    return written


if __name__ == "__main__":
    for p in write_all(sys.argv[1] if len(sys.argv) > 1 else "fixtures"):
        print(p)

"""Sparse labeled voxel worlds, shell preprocessing and shared vertex features."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .labels import CLASS_ID, CLASSES, LabelScheme, default_scheme

DEFAULT_MAX_DIM = 1024

# corner k of a voxel sits at offset (k & 1, (k >> 1) & 1, (k >> 2) & 1)
CORNER_OFFSETS = np.array([[k & 1, (k >> 1) & 1, (k >> 2) & 1] for k in range(8)], dtype=np.int64)


class GvoxError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class LabelId(NamedTuple):
    raw: str
    cls: int

    @property
    def class_name(self) -> str:
        return CLASSES[self.cls]


@dataclass
class VoxelWorld:
    """Occupied voxels keyed by integer (x, y, z); y is up, one block per unit."""

    dims: tuple[int, int, int]
    voxels: dict[tuple[int, int, int], LabelId] = field(default_factory=dict)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) != 3 or min(self.dims) <= 0:
            raise ValueError(f"dims must be three positive integers, got {self.dims}")
        for (x, y, z), label in self.voxels.items():
            if not (0 <= x < self.dims[0] and 0 <= y < self.dims[1] and 0 <= z < self.dims[2]):
                raise ValueError(f"voxel {(x, y, z)} outside dims {self.dims}")
            if not 0 <= label.cls < len(CLASSES):
                raise ValueError(f"voxel {(x, y, z)} has invalid class {label.cls}")

    @property
    def K(self) -> int:
        return len(self.voxels)

    @property
    def occupancy(self) -> float:
        return self.K / float(np.prod(self.dims))

    def label_at(self, coord) -> LabelId | None:
        return self.voxels.get(tuple(int(c) for c in coord))

    @cached_property
    def class_volume(self) -> np.ndarray:
        """Dense (X, Y, Z) int16 lookup of class ids, -1 where empty."""
        vol = np.full(self.dims, -1, dtype=np.int16)
        if self.voxels:
            coords = self.coords
            vol[coords[:, 0], coords[:, 1], coords[:, 2]] = self.classes
        return vol

    @cached_property
    def coords(self) -> np.ndarray:
        keys = sorted(self.voxels)
        return np.array(keys, dtype=np.int64).reshape(-1, 3)

    @cached_property
    def classes(self) -> np.ndarray:
        return np.array([self.voxels[tuple(c)].cls for c in self.coords.tolist()], dtype=np.int16)

    def occupied_mask(self) -> np.ndarray:
        return self.class_volume >= 0

    def column_tops(self) -> np.ndarray:
        """(X, Z) height of the top face of the highest voxel per column, 0 if empty."""
        occ = self.occupied_mask()
        ys = np.arange(1, self.dims[1] + 1)[None, :, None]
        return (occ * ys).max(axis=1)


def load_world(path: str | Path, scheme: LabelScheme | None = None,
               max_dim: int = DEFAULT_MAX_DIM, strict: bool = True) -> VoxelWorld:
    """Parse a GVOX text file.

    Header ``gvox 1 <dim_x> <dim_y> <dim_z>`` followed by ``x y z label_name`` lines;
    ``#`` starts a comment. With ``strict`` set, label names missing from the scheme
    are a parse error instead of falling back to ``ignore``.
    """
    data = Path(path).read_bytes()
    return parse_gvox(data, scheme=scheme, max_dim=max_dim, strict=strict)


def parse_gvox(data: bytes | str, scheme: LabelScheme | None = None,
               max_dim: int = DEFAULT_MAX_DIM, strict: bool = True) -> VoxelWorld:
    if isinstance(data, str):
        data = data.encode()
    scheme = scheme or default_scheme()
    dims = None
    voxels: dict[tuple[int, int, int], LabelId] = {}
    offset = 0
    for raw_line in data.splitlines(keepends=True):
        line_offset = offset
        offset += len(raw_line)
        try:
            text = raw_line.decode("utf-8")
        except UnicodeDecodeError:
            raise GvoxError("line is not valid UTF-8", line_offset) from None
        parts = text.split("#", 1)[0].split()
        if not parts:
            continue
        if dims is None:
            if len(parts) != 5 or parts[0] != "gvox":
                raise GvoxError("malformed header, expected 'gvox 1 <dx> <dy> <dz>'", line_offset)
            if parts[1] != "1":
                raise GvoxError(f"unsupported gvox version {parts[1]!r}", line_offset)
            try:
                dims = tuple(int(p) for p in parts[2:])
            except ValueError:
                raise GvoxError("malformed header dims", line_offset) from None
            if min(dims) <= 0:
                raise GvoxError("header dims must be positive", line_offset)
            if max(dims) > max_dim:
                raise GvoxError(f"dims {dims} exceed maximum {max_dim}", line_offset)
            continue
        if len(parts) != 4:
            raise GvoxError("malformed voxel line, expected 'x y z label_name'", line_offset)
        try:
            coord = tuple(int(p) for p in parts[:3])
        except ValueError:
            raise GvoxError("non-integer voxel coordinate", line_offset) from None
        if not all(0 <= c < d for c, d in zip(coord, dims)):
            raise GvoxError(f"voxel {coord} outside dims {dims}", line_offset)
        if coord in voxels:
            raise GvoxError(f"duplicate voxel {coord}", line_offset)
        name = parts[3]
        if name in scheme.table:
            cls = scheme.table[name]
        elif strict:
            raise GvoxError(f"unknown label {name!r}", line_offset)
        else:
            cls = CLASS_ID["ignore"]
        voxels[coord] = LabelId(name, cls)
    if dims is None:
        raise GvoxError("missing header", 0)
    return VoxelWorld(dims, voxels)


def format_gvox(world: VoxelWorld) -> str:
    lines = [f"gvox 1 {world.dims[0]} {world.dims[1]} {world.dims[2]}"]
    for coord in sorted(world.voxels):
        lines.append(f"{coord[0]} {coord[1]} {coord[2]} {world.voxels[coord].raw}")
    return "\n".join(lines) + "\n"


def save_world(world: VoxelWorld, path: str | Path) -> None:
    Path(path).write_text(format_gvox(world))


def distance_to_air(world: VoxelWorld) -> np.ndarray:
    """6-connected distance from each occupied voxel to the nearest exposed face.

    Empty cells and everything above the grid count as air; the sides and bottom
    of the grid are treated as continuing solid.
    """
    occ = world.occupied_mask()
    # pad one layer: sides/bottom solid, top air
    padded = np.pad(occ, 1, constant_values=True)
    padded[:, -1, :] = False
    dist = ndimage.distance_transform_cdt(padded, metric="taxicab")
    return dist[1:-1, 1:-1, 1:-1] * occ


def shell_extract(world: VoxelWorld, thickness: int = 4) -> VoxelWorld:
    if thickness < 1:
        raise ValueError("thickness must be >= 1")
    if world.K == 0:
        return VoxelWorld(world.dims, {})
    dist = distance_to_air(world)
    keep = {c: lab for c, lab in world.voxels.items() if dist[c] <= thickness}
    return VoxelWorld(world.dims, keep)


def surface_voxels(world: VoxelWorld) -> set[tuple[int, int, int]]:
    """Voxels with at least one face exposed to air (same air rule as the shell)."""
    if world.K == 0:
        return set()
    dist = distance_to_air(world)
    return {c for c in world.voxels if dist[c] == 1}


def pack_keys(keys: np.ndarray, dims) -> np.ndarray:
    X, Y, Z = (int(d) + 1 for d in dims)
    keys = np.asarray(keys, dtype=np.int64)
    return (keys[..., 0] * Y + keys[..., 1]) * Z + keys[..., 2]


@dataclass
class FeatureTable:
    """Learnable vectors on voxel corners, one row per distinct lattice vertex."""

    dims: tuple[int, int, int]
    keys: np.ndarray      # (V, 3) int64 vertex coordinates, sorted by packed key
    values: np.ndarray    # (V, dim)

    def __post_init__(self):
        self._packed = pack_keys(self.keys, self.dims)
        if len(self._packed) > 1 and np.any(np.diff(self._packed) <= 0):
            raise ValueError("feature table keys must be unique and sorted")

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return len(self.keys)

    def rows(self, vertex_keys: np.ndarray) -> np.ndarray:
        """Row indices of the given vertex keys; KeyError if any is missing."""
        packed = pack_keys(vertex_keys, self.dims)
        if packed.size == 0:
            return np.zeros(packed.shape, dtype=np.int64)
        idx = np.searchsorted(self._packed, packed)
        idx = np.clip(idx, 0, len(self._packed) - 1)
        if len(self._packed) == 0 or np.any(self._packed[idx] != packed):
            raise KeyError("vertex not present in feature table")
        return idx

    def corner_rows(self, voxels: np.ndarray) -> np.ndarray:
        """(S, 8) row indices of the corners of each voxel in ``voxels`` (S, 3)."""
        voxels = np.asarray(voxels, dtype=np.int64).reshape(-1, 3)
        return self.rows(voxels[:, None, :] + CORNER_OFFSETS[None, :, :])


def vertex_keys(world: VoxelWorld) -> np.ndarray:
    if world.K == 0:
        return np.zeros((0, 3), dtype=np.int64)
    corners = (world.coords[:, None, :] + CORNER_OFFSETS[None]).reshape(-1, 3)
    packed = pack_keys(corners, world.dims)
    _, first = np.unique(packed, return_index=True)
    return corners[first]


def init_features(world: VoxelWorld, dim: int = 64, seed: int = 0,
                  scale: float = 0.1) -> FeatureTable:
    """One uniform(-scale, scale) vector per distinct voxel corner."""
    if dim < 2:
        raise ValueError("feature dim must be >= 2")
    keys = vertex_keys(world)
    rng = np.random.default_rng(seed)
    values = rng.uniform(-scale, scale, size=(len(keys), dim))
    return FeatureTable(world.dims, keys, values)


def trilinear_weights(frac: np.ndarray) -> np.ndarray:
    """(S, 3) fractional positions -> (S, 8) corner weights."""
    frac = np.asarray(frac, dtype=np.float64).reshape(-1, 3)
    bits = CORNER_OFFSETS[None, :, :]
    f = frac[:, None, :]
    return np.where(bits == 1, f, 1.0 - f).prod(axis=2)


def location_code(world: VoxelWorld, table: FeatureTable, p, voxel=None):
    """Trilinear location code at ``p`` and its label, or ``None`` outside occupied voxels.

    ``voxel`` forces interpolation inside a specific voxel, which lets callers
    evaluate on a shared face from either side.
    """
    p = np.asarray(p, dtype=np.float64)
    if voxel is None:
        voxel = np.floor(p).astype(np.int64)
    voxel = tuple(int(v) for v in voxel)
    label = world.voxels.get(voxel)
    if label is None:
        return None
    frac = p - np.array(voxel, dtype=np.float64)
    if np.any(frac < -1e-12) or np.any(frac > 1 + 1e-12):
        return None
    w = trilinear_weights(np.clip(frac, 0.0, 1.0))[0]
    rows = table.corner_rows(np.array(voxel))[0]
    return w @ table.values[rows], label

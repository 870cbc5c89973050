"""Checkpoint and image I/O."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .config import Config
from .labels import LabelScheme, default_scheme
from .model import ParameterStore
from .world import FeatureTable

MAGIC = b"VOXELFIELD-CKPT 1\n"


class CheckpointError(ValueError):
    pass


def _tensor_block(group: str, name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = f"tensor {group} {name} {arr.ndim} {' '.join(str(d) for d in arr.shape)}".rstrip()
    return head.encode() + b"\n" + arr.tobytes()


def save_checkpoint(path: str | Path, store: ParameterStore, cfg: Config,
                    iteration: int = 0) -> None:
    """Versioned header, config text, then named float64 tensors in little-endian order."""
    text = cfg.to_text().encode()
    parts = [MAGIC, f"iteration {iteration}\n".encode(), f"config {len(text)}\n".encode(), text]
    table = store.table
    parts.append(_tensor_block("meta", "dims", np.array(table.dims, dtype=np.float64)))
    parts.append(_tensor_block("meta", "vertex_keys", table.keys.astype(np.float64)))
    for group, name, arr in store.items():
        parts.append(_tensor_block(group, name, arr))
    parts.append(b"end\n")
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[ParameterStore, Config, int]:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a voxelfield checkpoint (or unsupported version)")
    pos = len(MAGIC)

    def line():
        nonlocal pos
        end = data.index(b"\n", pos)
        out = data[pos:end].decode()
        pos = end + 1
        return out.split()

    try:
        iteration = int(line()[1])
        n = int(line()[1])
        cfg = Config.from_text(data[pos:pos + n].decode())
        pos += n
        tensors: dict[str, dict[str, np.ndarray]] = {}
        while True:
            head = line()
            if head == ["end"]:
                break
            if head[0] != "tensor":
                raise CheckpointError(f"{path}: unexpected record {head[0]!r}")
            group, name, ndim = head[1], head[2], int(head[3])
            shape = tuple(int(d) for d in head[4:4 + ndim])
            nbytes = 8 * int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(data[pos:pos + nbytes], dtype="<f8").reshape(shape).astype(np.float64)
            pos += nbytes
            tensors.setdefault(group, {})[name] = arr
    except (ValueError, IndexError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from None

    meta = tensors.pop("meta")
    dims = tuple(int(d) for d in meta["dims"])
    keys = meta["vertex_keys"].astype(np.int64).reshape(-1, 3)
    table = FeatureTable(dims, keys, tensors["features"]["table"])
    return ParameterStore(tensors, table), cfg, iteration


def to_uint8(rgb: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(rgb) * 255.0), 0, 255).astype(np.uint8)


def write_rgb(path: str | Path, rgb: np.ndarray) -> None:
    Image.fromarray(to_uint8(rgb), mode="RGB").save(path)


def read_rgb(path: str | Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0


def write_depth(path: str | Path, depth: np.ndarray, d_max: float) -> None:
    """16-bit grayscale normalized by 4 * d_max; misses and undefined depth are 0."""
    scale = 4.0 * d_max
    d = np.nan_to_num(np.asarray(depth, dtype=np.float64), nan=0.0, posinf=0.0)
    q = np.clip(np.round(d / scale * 65535.0), 0, 65535).astype(np.uint16)
    Image.fromarray(q).save(path)


def write_seg(path: str | Path, seg: np.ndarray, scheme: LabelScheme | None = None) -> None:
    scheme = scheme or default_scheme()
    img = Image.fromarray(np.asarray(seg, dtype=np.uint8), mode="P")
    palette = to_uint8(scheme.palette).ravel().tolist()
    img.putpalette(palette + [0] * (768 - len(palette)))
    img.save(path)

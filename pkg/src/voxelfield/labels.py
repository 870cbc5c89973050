"""Label abstraction: raw block names to the 12 abstract classes."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

CLASSES = (
    "ignore", "sky", "tree", "dirt", "flower", "grass",
    "gravel", "water", "rock", "stone", "sand", "snow",
)
CLASS_ID = {name: i for i, name in enumerate(CLASSES)}
IGNORE = CLASS_ID["ignore"]
SKY = CLASS_ID["sky"]
NUM_CLASSES = len(CLASSES)


def _parse_lines(text: str):
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def parse_mapping(text: str) -> dict[str, int]:
    """Parse ``raw_name class_name`` lines."""
    table = {}
    for lineno, parts in _parse_lines(text):
        if len(parts) != 2:
            raise ValueError(f"mapping line {lineno}: expected 'raw_name class_name'")
        raw, cls = parts
        if cls not in CLASS_ID:
            raise ValueError(f"mapping line {lineno}: unknown class {cls!r}")
        table[raw] = CLASS_ID[cls]
    return table


def parse_palette(text: str) -> np.ndarray:
    """Parse ``class_name r g b`` lines into a (12, 3) float array in [0, 1]."""
    palette = np.zeros((NUM_CLASSES, 3))
    seen = set()
    for lineno, parts in _parse_lines(text):
        if len(parts) != 4 or parts[0] not in CLASS_ID:
            raise ValueError(f"palette line {lineno}: expected 'class_name r g b'")
        rgb = [int(v) for v in parts[1:]]
        if any(not 0 <= v <= 255 for v in rgb):
            raise ValueError(f"palette line {lineno}: channel out of range 0-255")
        palette[CLASS_ID[parts[0]]] = np.array(rgb) / 255.0
        seen.add(parts[0])
    missing = set(CLASSES) - seen
    if missing:
        raise ValueError(f"palette is missing classes: {sorted(missing)}")
    return palette


def _data(name: str) -> str:
    return resources.files("voxelfield").joinpath("data", name).read_text()


@dataclass(frozen=True)
class LabelScheme:
    table: dict[str, int] = field(default_factory=dict)
    palette: np.ndarray = field(default_factory=lambda: np.zeros((NUM_CLASSES, 3)))

    @classmethod
    def default(cls) -> "LabelScheme":
        return cls(parse_mapping(_data("labels.txt")), parse_palette(_data("palette.txt")))

    @classmethod
    def from_files(cls, mapping: str | Path | None = None,
                   palette: str | Path | None = None) -> "LabelScheme":
        base = cls.default()
        table = dict(base.table)
        if mapping is not None:
            table.update(parse_mapping(Path(mapping).read_text()))
        pal = base.palette if palette is None else parse_palette(Path(palette).read_text())
        return cls(table, pal)

    def __contains__(self, raw_name: str) -> bool:
        return raw_name in self.table


_DEFAULT: LabelScheme | None = None


def default_scheme() -> LabelScheme:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = LabelScheme.default()
    return _DEFAULT


def translate_label(raw_name: str, scheme: LabelScheme | None = None) -> int:
    """Map a raw block name to its abstract class id; unknown names become ``ignore``."""
    scheme = scheme or default_scheme()
    try:
        return scheme.table[raw_name]
    except KeyError:
        log.warning("unknown raw label %r mapped to 'ignore'", raw_name)
        return IGNORE


def label_entropy(seg: np.ndarray, scheme: LabelScheme | None = None) -> float:
    """Shannon entropy (nats) of the class histogram, ignoring ``ignore`` pixels."""
    counts = np.bincount(np.asarray(seg, dtype=np.int64).ravel(), minlength=NUM_CLASSES)
    counts[IGNORE] = 0
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log(p)).sum()) + 0.0


MAX_ENTROPY = math.log(NUM_CLASSES)

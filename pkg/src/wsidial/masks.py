"""Segmentation class set, per-pixel masks, and their persisted format.

Masks are stored as indexed-color PNG tiles (one palette entry per class)
plus a JSON sidecar, mirroring the slide tile grid at base magnification.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from wsidial.errors import FormatError

SCHEMA_VERSION = 1

# Fixed 6-class set; carcinoma is index 0 by convention.
CLASS_NAMES = (
    "carcinoma",
    "benign_epithelium",
    "stroma",
    "necrosis",
    "adipose",
    "background",
)
CARCINOMA = 0
BACKGROUND = 5
NUM_CLASSES = len(CLASS_NAMES)

# Review palette: carcinoma red, stroma green, adipose orange.
CLASS_PALETTE = (
    (255, 0, 0),      # carcinoma
    (0, 112, 255),    # benign epithelium
    (0, 200, 0),      # stroma
    (128, 0, 160),    # necrosis
    (255, 165, 0),    # adipose
    (255, 255, 255),  # background
)

UNLABELED = 255


@dataclass
class SegmentationMask:
    """Per-pixel class bitmap at base (20x) magnification."""

    slide_id: str
    labels: np.ndarray  # uint8 HxW, values 0..5
    model_tag: Optional[str] = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.labels.ndim != 2:
            raise FormatError("labels must be a 2-D array")

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def save(self, out_dir: str | Path, tile_size: int = 512) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        h, w = self.labels.shape
        rows, cols = math.ceil(h / tile_size), math.ceil(w / tile_size)
        for row in range(rows):
            for col in range(cols):
                tile = self.labels[
                    row * tile_size : (row + 1) * tile_size,
                    col * tile_size : (col + 1) * tile_size,
                ]
                _save_indexed(tile, out_dir / f"tile_{row}_{col}.png")
        (out_dir / "mask.json").write_text(
            json.dumps(
                {
                    "schema_version": SCHEMA_VERSION,
                    "slide_id": self.slide_id,
                    "model_tag": self.model_tag,
                    "width": w,
                    "height": h,
                    "tile_size": tile_size,
                    "classes": list(CLASS_NAMES),
                    "palette": [list(c) for c in CLASS_PALETTE],
                },
                indent=2,
            )
        )
        return out_dir

    @classmethod
    def load(cls, in_dir: str | Path) -> "SegmentationMask":
        in_dir = Path(in_dir)
        meta_path = in_dir / "mask.json"
        if not meta_path.exists():
            raise FormatError(f"{in_dir} has no mask.json")
        meta = json.loads(meta_path.read_text())
        h, w, ts = meta["height"], meta["width"], meta["tile_size"]
        labels = np.empty((h, w), dtype=np.uint8)
        for row in range(math.ceil(h / ts)):
            for col in range(math.ceil(w / ts)):
                with Image.open(in_dir / f"tile_{row}_{col}.png") as im:
                    tile = np.asarray(im, dtype=np.uint8)
                labels[row * ts : row * ts + tile.shape[0],
                       col * ts : col * ts + tile.shape[1]] = tile
        return cls(slide_id=meta["slide_id"], labels=labels,
                   model_tag=meta.get("model_tag"))


def _save_indexed(labels: np.ndarray, path: Path) -> None:
    im = Image.fromarray(labels, mode="P")
    palette = []
    for color in CLASS_PALETTE:
        palette.extend(color)
    im.putpalette(palette)
    im.save(path)


def to_binary(mask: SegmentationMask | np.ndarray) -> np.ndarray:
    """Collapse the 6-class mask to cancer (1) vs everything else (0)."""
    labels = mask.labels if isinstance(mask, SegmentationMask) else np.asarray(mask)
    return (labels == CARCINOMA).astype(np.uint8)


def overlay_tile_png(labels: np.ndarray, transparent_class: int = BACKGROUND) -> bytes:
    """Render a label tile as an indexed PNG with one class transparent."""
    import io

    im = Image.fromarray(labels.astype(np.uint8), mode="P")
    palette = []
    for color in CLASS_PALETTE:
        palette.extend(color)
    im.putpalette(palette)
    alpha = [255] * 256
    alpha[transparent_class] = 0
    alpha[UNLABELED] = 0
    im.info["transparency"] = bytes(alpha)
    buf = io.BytesIO()
    im.save(buf, format="PNG", transparency=bytes(alpha))
    return buf.getvalue()

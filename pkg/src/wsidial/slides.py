"""Pyramidal slide abstraction: lazy tiled reads, region extraction at
arbitrary magnification, and Otsu-based tissue masking.

Slides are stored in the Pyramid Directory Format::

    slide_dir/
      slide.json                 # slide_id, base_magnification, mpp,
                                 # tile_size, level table
      level_0/tile_{row}_{col}.png   # lossless RGB, row-major
      level_1/...

Level ``k+1`` has ``ceil(dims_k / 2)`` dimensions and half the
magnification of level ``k``. Levels are computed from the base image by a
single area-average (partial edge blocks average in-bounds pixels only)
followed by round-half-to-even, so a region read at a stored level's
magnification is bit-identical to downsampling the base read directly.
Edge tiles are stored cropped, not padded.

Plain RGB images (PNG/JPEG/...) can also be opened as single-level
pyramids at a declared magnification.
"""

from __future__ import annotations

import json
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from PIL import Image

from wsidial.errors import (
    DegenerateInputError,
    FormatError,
    InvariantError,
    UnsupportedMagnificationError,
)

SCHEMA_VERSION = 1
DEFAULT_TILE_SIZE = 512
WHITE = 255

# Rec. 601 luma weights used for grayscale conversion before thresholding.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class Level:
    magnification: float
    width: int
    height: int
    tile_size: int

    @property
    def rows(self) -> int:
        return math.ceil(self.height / self.tile_size)

    @property
    def cols(self) -> int:
        return math.ceil(self.width / self.tile_size)


class _TileStore:
    """Tile source backing a pyramid. Thread-safe via an LRU decode cache."""

    def __init__(self, cache_tiles: int = 256):
        self._cache: OrderedDict[tuple, np.ndarray] = OrderedDict()
        self._cache_tiles = cache_tiles
        self._lock = threading.Lock()

    def get_tile(self, level: int, row: int, col: int) -> np.ndarray:
        key = (level, row, col)
        with self._lock:
            if key in self._cache:
                self._cache.move_to_end(key)
                return self._cache[key]
            tile = self._load_tile(level, row, col)
            self._cache[key] = tile
            if len(self._cache) > self._cache_tiles:
                self._cache.popitem(last=False)
            return tile

    def _load_tile(self, level: int, row: int, col: int) -> np.ndarray:
        raise NotImplementedError


class _DirectoryTileStore(_TileStore):
    def __init__(self, root: Path):
        super().__init__()
        self.root = root

    def _load_tile(self, level: int, row: int, col: int) -> np.ndarray:
        path = self.root / f"level_{level}" / f"tile_{row}_{col}.png"
        if not path.exists():
            raise FormatError(f"missing tile {path}")
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)

    def tile_bytes(self, level: int, row: int, col: int) -> bytes:
        path = self.root / f"level_{level}" / f"tile_{row}_{col}.png"
        if not path.exists():
            raise FormatError(f"missing tile {path}")
        return path.read_bytes()


class _ArrayTileStore(_TileStore):
    """Single full-resolution array; coarser levels computed on demand."""

    def __init__(self, base: np.ndarray, levels: list[Level]):
        super().__init__()
        self._level_imgs: dict[int, np.ndarray] = {0: base}
        self._levels = levels

    def _load_tile(self, level: int, row: int, col: int) -> np.ndarray:
        if level not in self._level_imgs:
            self._level_imgs[level] = downsample_area(self._level_imgs[0], 2**level)
        img = self._level_imgs[level]
        ts = self._levels[level].tile_size
        return img[row * ts : (row + 1) * ts, col * ts : (col + 1) * ts]


@dataclass
class SlidePyramid:
    """Multi-resolution tiled image with magnification metadata.

    Handles are immutable after open; concurrent region reads are safe.
    """

    slide_id: str
    base_magnification: float
    levels: list[Level]
    tile_size: int = DEFAULT_TILE_SIZE
    mpp: Optional[float] = None
    path: Optional[Path] = None
    _store: _TileStore = field(default=None, repr=False)

    def __post_init__(self):
        _check_level_invariants(self.levels)

    @property
    def width(self) -> int:
        return self.levels[0].width

    @property
    def height(self) -> int:
        return self.levels[0].height

    def level_for(self, magnification: float) -> int:
        """Index of the coarsest level at or above ``magnification``."""
        if magnification > self.base_magnification + 1e-9:
            raise UnsupportedMagnificationError(
                f"requested {magnification}x exceeds base "
                f"{self.base_magnification}x of slide {self.slide_id}"
            )
        idx = 0
        for i, lv in enumerate(self.levels):
            if lv.magnification >= magnification - 1e-9:
                idx = i
            else:
                break
        return idx

    def tile(self, level: int, row: int, col: int) -> np.ndarray:
        lv = self.levels[level]
        if not (0 <= row < lv.rows and 0 <= col < lv.cols):
            raise FormatError(
                f"tile ({row},{col}) outside level-{level} grid "
                f"{lv.rows}x{lv.cols} of slide {self.slide_id}"
            )
        return self._store.get_tile(level, row, col)


def _check_level_invariants(levels: list[Level]) -> None:
    if not levels:
        raise InvariantError("pyramid has no levels")
    for k in range(1, len(levels)):
        prev, cur = levels[k - 1], levels[k]
        if not cur.magnification < prev.magnification:
            raise InvariantError("level magnifications must strictly decrease")
        if cur.width != math.ceil(prev.width / 2) or cur.height != math.ceil(
            prev.height / 2
        ):
            raise InvariantError(
                f"level {k} dims ({cur.width},{cur.height}) != ceil(half) of "
                f"level {k-1} ({prev.width},{prev.height})"
            )


def plan_levels(
    width: int, height: int, base_magnification: float, tile_size: int
) -> list[Level]:
    """Halve dimensions (ceil) until a level fits within one tile."""
    levels = [Level(base_magnification, width, height, tile_size)]
    while max(levels[-1].width, levels[-1].height) > tile_size:
        prev = levels[-1]
        levels.append(
            Level(
                prev.magnification / 2,
                math.ceil(prev.width / 2),
                math.ceil(prev.height / 2),
                tile_size,
            )
        )
    return levels


# ---------------------------------------------------------------------------
# Resampling


def downsample_area(img: np.ndarray, factor: int) -> np.ndarray:
    """Area-average downsample by an integer factor.

    Partial edge blocks average only in-bounds pixels. Output is uint8 with
    round-half-to-even, the same rule used when pyramid levels are written.
    """
    if factor == 1:
        return img
    h, w = img.shape[:2]
    acc = img.astype(np.float64)
    ys = np.arange(0, h, factor)
    xs = np.arange(0, w, factor)
    acc = np.add.reduceat(acc, ys, axis=0)
    acc = np.add.reduceat(acc, xs, axis=1)
    ny = np.minimum(ys + factor, h) - ys
    nx = np.minimum(xs + factor, w) - xs
    counts = ny[:, None] * nx[None, :]
    if img.ndim == 3:
        counts = counts[..., None]
    out = acc / counts
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def _resize_area(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Area-average resize for non-integer factors (best effort, PIL BOX)."""
    pil = Image.fromarray(img)
    return np.asarray(pil.resize((out_w, out_h), Image.BOX), dtype=np.uint8)


# ---------------------------------------------------------------------------
# Opening slides


def open_slide(
    path: str | Path, declared_magnification: float = 20.0
) -> SlidePyramid:
    """Open a Pyramid Directory or a plain RGB image.

    Plain images become single-level pyramids at ``declared_magnification``.
    Additional formats can be plugged in via :func:`register_reader`.
    """
    path = Path(path)
    for probe, opener in _READERS:
        if probe(path):
            return opener(path, declared_magnification)
    raise FormatError(f"no reader recognizes {path}")


def _open_directory(path: Path, _declared: float) -> SlidePyramid:
    meta_path = path / "slide.json"
    if not meta_path.exists():
        raise FormatError(f"{path} has no slide.json")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"corrupt slide.json in {path}: {e}") from e
    for req in ("slide_id", "base_magnification", "tile_size", "levels"):
        if req not in meta:
            raise FormatError(f"slide.json missing '{req}' in {path}")
    if not meta["levels"]:
        raise FormatError(f"slide.json has empty level table in {path}")
    tile_size = int(meta["tile_size"])
    levels = [
        Level(float(lv["magnification"]), int(lv["width"]), int(lv["height"]), tile_size)
        for lv in meta["levels"]
    ]
    if not (path / "level_0").is_dir():
        raise FormatError(f"{path} missing level_0 tiles")
    pyramid = SlidePyramid(
        slide_id=meta["slide_id"],
        base_magnification=float(meta["base_magnification"]),
        levels=levels,
        tile_size=tile_size,
        mpp=meta.get("mpp"),
        path=path,
        _store=_DirectoryTileStore(path),
    )
    return pyramid


def _open_plain_image(path: Path, declared: float) -> SlidePyramid:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return pyramid_from_array(
        arr, slide_id=path.stem, base_magnification=declared, single_level=True
    )


def _is_pyramid_dir(path: Path) -> bool:
    return path.is_dir()


def _is_plain_image(path: Path) -> bool:
    return path.is_file() and path.suffix.lower() in {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


_READERS: list[tuple[Callable[[Path], bool], Callable[[Path, float], SlidePyramid]]] = [
    (_is_pyramid_dir, _open_directory),
    (_is_plain_image, _open_plain_image),
]


def register_reader(
    probe: Callable[[Path], bool],
    opener: Callable[[Path, float], SlidePyramid],
) -> None:
    """Register a reader for an additional slide format (checked first)."""
    _READERS.insert(0, (probe, opener))


def pyramid_from_array(
    arr: np.ndarray,
    slide_id: str,
    base_magnification: float = 20.0,
    tile_size: int = DEFAULT_TILE_SIZE,
    mpp: Optional[float] = None,
    single_level: bool = False,
) -> SlidePyramid:
    """In-memory pyramid over a full-resolution RGB array."""
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise FormatError("expected an HxWx3 RGB array")
    h, w = arr.shape[:2]
    if single_level:
        levels = [Level(base_magnification, w, h, tile_size)]
    else:
        levels = plan_levels(w, h, base_magnification, tile_size)
    return SlidePyramid(
        slide_id=slide_id,
        base_magnification=base_magnification,
        levels=levels,
        tile_size=tile_size,
        mpp=mpp,
        _store=_ArrayTileStore(np.ascontiguousarray(arr), levels),
    )


# ---------------------------------------------------------------------------
# Region reads


def read_region(
    slide: SlidePyramid, magnification: float, x: int, y: int, w: int, h: int
) -> np.ndarray:
    """Read a ``w``x``h`` RGB region at ``magnification``.

    ``(x, y)`` is the top-left corner in the coordinate frame of the
    requested magnification. Out-of-bounds area is padded white. Downscale
    resampling is area-average; identical calls return identical pixels.
    """
    if w <= 0 or h <= 0:
        raise ValueError("region width/height must be positive")
    level_idx = slide.level_for(magnification)
    level = slide.levels[level_idx]
    factor = level.magnification / magnification
    int_factor = round(factor)
    if abs(factor - int_factor) < 1e-9:
        region = _read_level_rect(
            slide,
            level_idx,
            x * int_factor,
            y * int_factor,
            w * int_factor,
            h * int_factor,
        )
        return downsample_area(region, int_factor)
    # Non-dyadic magnification: read the covering box, then box-filter resize.
    lx, ly = math.floor(x * factor), math.floor(y * factor)
    lw, lh = math.ceil(w * factor), math.ceil(h * factor)
    region = _read_level_rect(slide, level_idx, lx, ly, lw, lh)
    return _resize_area(region, w, h)


def _read_level_rect(
    slide: SlidePyramid, level_idx: int, x: int, y: int, w: int, h: int
) -> np.ndarray:
    """Assemble a level-frame rect from tiles, padding out-of-bounds white."""
    level = slide.levels[level_idx]
    out = np.full((h, w, 3), WHITE, dtype=np.uint8)
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + w, level.width), min(y + h, level.height)
    if x0 >= x1 or y0 >= y1:
        return out
    ts = level.tile_size
    for row in range(y0 // ts, (y1 - 1) // ts + 1):
        for col in range(x0 // ts, (x1 - 1) // ts + 1):
            tile = slide.tile(level_idx, row, col)
            ty0, tx0 = row * ts, col * ts
            sy0, sy1 = max(y0, ty0), min(y1, ty0 + tile.shape[0])
            sx0, sx1 = max(x0, tx0), min(x1, tx0 + tile.shape[1])
            if sy0 >= sy1 or sx0 >= sx1:
                continue
            out[sy0 - y : sy1 - y, sx0 - x : sx1 - x] = tile[
                sy0 - ty0 : sy1 - ty0, sx0 - tx0 : sx1 - tx0
            ]
    return out


# ---------------------------------------------------------------------------
# Writing pyramids


def write_pyramid(
    arr: np.ndarray,
    slide_id: str,
    out_dir: str | Path,
    base_magnification: float = 20.0,
    tile_size: int = DEFAULT_TILE_SIZE,
    mpp: Optional[float] = None,
) -> Path:
    """Write a full-resolution array as a Pyramid Directory.

    Refuses to overwrite an existing directory (single writer per output).
    """
    out_dir = Path(out_dir)
    if out_dir.exists():
        raise FileExistsError(f"{out_dir} already exists")
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise FormatError("expected an HxWx3 uint8 RGB array")
    h, w = arr.shape[:2]
    levels = plan_levels(w, h, base_magnification, tile_size)
    out_dir.mkdir(parents=True)
    for k, level in enumerate(levels):
        img = arr if k == 0 else downsample_area(arr, 2**k)
        level_dir = out_dir / f"level_{k}"
        level_dir.mkdir()
        for row in range(level.rows):
            for col in range(level.cols):
                tile = img[
                    row * tile_size : (row + 1) * tile_size,
                    col * tile_size : (col + 1) * tile_size,
                ]
                Image.fromarray(tile).save(level_dir / f"tile_{row}_{col}.png")
    meta = {
        "schema_version": SCHEMA_VERSION,
        "slide_id": slide_id,
        "base_magnification": base_magnification,
        "mpp": mpp,
        "tile_size": tile_size,
        "levels": [
            {"magnification": lv.magnification, "width": lv.width, "height": lv.height}
            for lv in levels
        ],
    }
    (out_dir / "slide.json").write_text(json.dumps(meta, indent=2))
    return out_dir


# ---------------------------------------------------------------------------
# Otsu thresholding and tissue masks


def otsu_threshold(histogram: np.ndarray) -> int:
    """Threshold maximizing between-class variance over a 256-bin histogram.

    Classes are bins [0..t] and [t+1..255]; only thresholds where both
    classes are populated are considered; ties break toward the lower
    threshold. A single populated bin returns that bin.
    """
    hist = np.asarray(histogram, dtype=np.float64)
    if hist.shape != (256,):
        raise ValueError("histogram must have 256 bins")
    if hist.min() < 0:
        raise ValueError("histogram counts must be non-negative")
    total = hist.sum()
    if total == 0:
        raise DegenerateInputError("all-zero histogram")
    nonzero = np.nonzero(hist)[0]
    lo, hi = int(nonzero[0]), int(nonzero[-1])
    if lo == hi:
        return lo
    bins = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(hist)
    m0 = np.cumsum(hist * bins)
    mu_total = m0[-1]
    # variance(t) for t in [lo, hi-1]: both classes populated
    ts = np.arange(lo, hi)
    w_lo = w0[ts]
    w_hi = total - w_lo
    mu_lo = m0[ts] / w_lo
    mu_hi = (mu_total - m0[ts]) / w_hi
    var_between = w_lo * w_hi * (mu_lo - mu_hi) ** 2
    return int(ts[np.argmax(var_between)])


def rgb_to_gray(img: np.ndarray) -> np.ndarray:
    """Luma grayscale (Rec. 601 weights), rounded to uint8."""
    r, g, b = LUMA_WEIGHTS
    gray = r * img[..., 0] + g * img[..., 1] + b * img[..., 2]
    return np.clip(np.rint(gray), 0, 255).astype(np.uint8)


@dataclass
class TissueMask:
    slide_id: str
    working_magnification: float
    mask: np.ndarray  # bool, 1 = tissue
    threshold_used: int

    @property
    def tissue_fraction(self) -> float:
        return float(self.mask.mean()) if self.mask.size else 0.0

    def save(self, out_dir: str | Path) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        Image.fromarray(self.mask.astype(np.uint8) * 255).convert("1").save(
            out_dir / "mask.png"
        )
        (out_dir / "mask.json").write_text(
            json.dumps(
                {
                    "schema_version": SCHEMA_VERSION,
                    "slide_id": self.slide_id,
                    "working_magnification": self.working_magnification,
                    "threshold_used": self.threshold_used,
                },
                indent=2,
            )
        )
        return out_dir

    @classmethod
    def load(cls, in_dir: str | Path) -> "TissueMask":
        in_dir = Path(in_dir)
        meta = json.loads((in_dir / "mask.json").read_text())
        with Image.open(in_dir / "mask.png") as im:
            mask = np.asarray(im.convert("1"), dtype=bool)
        return cls(
            slide_id=meta["slide_id"],
            working_magnification=meta["working_magnification"],
            mask=mask,
            threshold_used=meta["threshold_used"],
        )


def tissue_mask(
    slide: SlidePyramid, working_magnification: Optional[float] = None
) -> TissueMask:
    """Otsu tissue mask at a coarse working magnification.

    H&E tissue is darker than the white scanner background, so pixels at or
    below the threshold count as tissue. A contrast-free slide (single
    populated gray bin, e.g. all white) yields an empty mask rather than an
    error so blank slides are skipped, not fatal.
    """
    if working_magnification is None:
        working_magnification = slide.base_magnification / 16
    scale = slide.base_magnification / working_magnification
    w = math.ceil(slide.width / scale)
    h = math.ceil(slide.height / scale)
    img = read_region(slide, working_magnification, 0, 0, w, h)
    gray = rgb_to_gray(img)
    hist = np.bincount(gray.ravel(), minlength=256)
    nonzero = np.nonzero(hist)[0]
    if len(nonzero) == 1:
        return TissueMask(
            slide_id=slide.slide_id,
            working_magnification=working_magnification,
            mask=np.zeros_like(gray, dtype=bool),
            threshold_used=int(nonzero[0]),
        )
    t = otsu_threshold(hist)
    return TissueMask(
        slide_id=slide.slide_id,
        working_magnification=working_magnification,
        mask=gray <= t,
        threshold_used=t,
    )

"""Synthetic textured slides with exact ground truth.

Stand-in for scanner data at desk scale: each slide is a white canvas with
textured elliptical blobs, one texture family per tissue class. Class
textures differ in base color (so a small convolutional model can separate
them), and an optional mutation flag modulates the spatial frequency of
the cancer texture without changing its color. Two domains are provided
whose cancer textures differ, which is what makes a correction loop
bootstrapped from the other domain's model meaningful.

Generation is deterministic for a fixed (spec, seed).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from wsidial import masks, slides
from wsidial.errors import SpecError
from wsidial.masks import SegmentationMask

MIN_CANVAS = 3072  # must fit the low-magnification context patch

# Base colors per class, by domain for carcinoma. All tissue colors sit
# well below white so Otsu masking picks them up.
CANCER_COLOR = {"A": (148, 96, 170), "B": (186, 78, 102)}
CLASS_COLORS = {
    "benign_epithelium": (96, 168, 160),
    "stroma": (232, 176, 196),
    "necrosis": (168, 140, 108),
    "adipose": (214, 206, 222),
}

# Cancer texture wavelength in base px; the mutation flag selects the
# high-frequency variant.
CANCER_WAVELENGTH = {False: 64, True: 16}
DEFAULT_WAVELENGTH = 48
TEXTURE_AMPLITUDE = 26

# Paint order: carcinoma last so cancer blobs are never occluded.
PAINT_ORDER = ("stroma", "necrosis", "adipose", "benign_epithelium", "carcinoma")


@dataclass(frozen=True)
class SyntheticSpec:
    """Declarative description of one synthetic slide."""

    width: int = 3072
    height: int = 3072
    base_magnification: float = 20.0
    domain: str = "A"
    blob_counts: dict = field(
        default_factory=lambda: {
            "carcinoma": 2,
            "benign_epithelium": 1,
            "stroma": 3,
            "necrosis": 1,
            "adipose": 1,
        }
    )
    mutation_texture: bool = False
    tile_size: int = 512

    def validate(self) -> None:
        if self.width < MIN_CANVAS or self.height < MIN_CANVAS:
            raise SpecError(
                f"canvas {self.width}x{self.height} below minimum "
                f"{MIN_CANVAS}x{MIN_CANVAS}"
            )
        if self.domain not in CANCER_COLOR:
            raise SpecError(f"unknown domain {self.domain!r}")
        unknown = set(self.blob_counts) - set(PAINT_ORDER)
        if unknown:
            raise SpecError(f"unknown blob classes {sorted(unknown)}")


def _value_noise(rng: np.random.Generator, h: int, w: int, wavelength: int) -> np.ndarray:
    """Smooth value noise in [0,1] with the given wavelength in px."""
    gh = max(2, math.ceil(h / wavelength) + 1)
    gw = max(2, math.ceil(w / wavelength) + 1)
    grid = rng.random((gh, gw), dtype=np.float64).astype(np.float32)
    im = Image.fromarray(grid, mode="F")
    up = im.resize((gw * wavelength, gh * wavelength), Image.BILINEAR)
    return np.asarray(up, dtype=np.float32)[:h, :w]


def _ellipse_mask(
    h: int, w: int, cx: float, cy: float, a: float, b: float, theta: float
) -> np.ndarray:
    ys, xs = np.mgrid[0:h, 0:w]
    dx, dy = xs - cx, ys - cy
    c, s = math.cos(theta), math.sin(theta)
    u = dx * c + dy * s
    v = -dx * s + dy * c
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def render_synthetic(
    spec: SyntheticSpec, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Render the RGB canvas and its exact ground-truth label map."""
    spec.validate()
    rng = np.random.default_rng(seed)
    h, w = spec.height, spec.width
    canvas = np.full((h, w, 3), 255, dtype=np.uint8)
    labels = np.full((h, w), masks.BACKGROUND, dtype=np.uint8)
    rmin = 0.06 * min(h, w)
    rmax = 0.16 * min(h, w)
    for class_name in PAINT_ORDER:
        count = spec.blob_counts.get(class_name, 0)
        class_idx = masks.CLASS_NAMES.index(class_name)
        if class_name == "carcinoma":
            color = CANCER_COLOR[spec.domain]
            wavelength = CANCER_WAVELENGTH[spec.mutation_texture]
        else:
            color = CLASS_COLORS[class_name]
            wavelength = DEFAULT_WAVELENGTH
        for _ in range(count):
            cx = rng.uniform(rmax, w - rmax)
            cy = rng.uniform(rmax, h - rmax)
            a = rng.uniform(rmin, rmax)
            b = rng.uniform(rmin, rmax)
            theta = rng.uniform(0, math.pi)
            x0, x1 = int(max(0, cx - rmax - 2)), int(min(w, cx + rmax + 2))
            y0, y1 = int(max(0, cy - rmax - 2)), int(min(h, cy + rmax + 2))
            bh, bw = y1 - y0, x1 - x0
            blob = _ellipse_mask(bh, bw, cx - x0, cy - y0, a, b, theta)
            noise = _value_noise(rng, bh, bw, wavelength)
            texture = np.asarray(color, dtype=np.float32) + (
                (noise - 0.5) * 2 * TEXTURE_AMPLITUDE
            )[..., None]
            texture = np.clip(np.rint(texture), 0, 255).astype(np.uint8)
            patch = canvas[y0:y1, x0:x1]
            patch[blob] = texture[blob]
            labels[y0:y1, x0:x1][blob] = class_idx
    return canvas, labels


def generate_synthetic_slide(
    spec: SyntheticSpec, seed: int, out_dir: str | Path
) -> tuple[slides.SlidePyramid, SegmentationMask]:
    """Write a synthetic slide as a Pyramid Directory plus ground truth.

    ``out_dir`` receives ``pyramid/`` and ``truth/``; it must not already
    contain a pyramid (single writer per output directory).
    """
    out_dir = Path(out_dir)
    slide_id = out_dir.name
    canvas, labels = render_synthetic(spec, seed)
    slides.write_pyramid(
        canvas,
        slide_id=slide_id,
        out_dir=out_dir / "pyramid",
        base_magnification=spec.base_magnification,
        tile_size=spec.tile_size,
    )
    truth = SegmentationMask(slide_id=slide_id, labels=labels, model_tag="truth")
    truth.save(out_dir / "truth", tile_size=spec.tile_size)
    meta = {
        "schema_version": 1,
        "slide_id": slide_id,
        "seed": seed,
        "domain": spec.domain,
        "mutation_texture": spec.mutation_texture,
        "blob_counts": spec.blob_counts,
        "width": spec.width,
        "height": spec.height,
    }
    (out_dir / "synthetic.json").write_text(json.dumps(meta, indent=2))
    return slides.open_slide(out_dir / "pyramid"), truth


@dataclass(frozen=True)
class CohortSlide:
    slide_id: str
    path: Path
    mutated: bool
    seed: int


def generate_cohort(
    out_root: str | Path,
    n_slides: int,
    seed: int,
    spec: Optional[SyntheticSpec] = None,
    mutation_fraction: float = 0.2,
) -> list[CohortSlide]:
    """Generate a labeled cohort of synthetic slides.

    The first ``round(mutation_fraction * n)`` slides (after a seeded
    shuffle) carry the mutation texture; labels land in ``labels.json``.
    """
    if n_slides <= 0:
        raise SpecError("cohort size must be positive")
    out_root = Path(out_root)
    if (out_root / "labels.json").exists():
        raise FileExistsError(f"{out_root} already holds a cohort")
    spec = spec or SyntheticSpec()
    rng = np.random.default_rng(seed)
    n_mut = int(round(mutation_fraction * n_slides))
    flags = np.zeros(n_slides, dtype=bool)
    flags[:n_mut] = True
    rng.shuffle(flags)
    entries = []
    for i, mutated in enumerate(flags):
        slide_id = f"synth_{i:04d}"
        slide_seed = seed * 100003 + i
        slide_spec = replace(spec, mutation_texture=bool(mutated))
        generate_synthetic_slide(slide_spec, slide_seed, out_root / slide_id)
        entries.append(
            CohortSlide(
                slide_id=slide_id,
                path=out_root / slide_id,
                mutated=bool(mutated),
                seed=slide_seed,
            )
        )
    (out_root / "labels.json").write_text(
        json.dumps(
            {
                "schema_version": 1,
                "seed": seed,
                "slides": {
                    e.slide_id: {"mutated": e.mutated, "seed": e.seed}
                    for e in entries
                },
            },
            indent=2,
        )
    )
    return entries


def load_cohort(root: str | Path) -> list[CohortSlide]:
    root = Path(root)
    meta = json.loads((root / "labels.json").read_text())
    return [
        CohortSlide(
            slide_id=sid,
            path=root / sid,
            mutated=info["mutated"],
            seed=info["seed"],
        )
        for sid, info in sorted(meta["slides"].items())
    ]

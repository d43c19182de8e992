"""
Image Corpora

Loading, resizing, subsampling and batching of training images, plus the
two synthetic corpora used at desk scale: a diverse multi-shape "source"
domain and a narrow flower-like "target" domain.

Key Components:
- load_corpus: PNG/PGM directory -> (N, C, R, R) float32 in [-1, 1]
- bilinear_resize: half-pixel-centre bilinear interpolation
- subsample: seeded fixed-size subset
- batch_iterator: endless epoch-permuted minibatches
- synth_generate: deterministic synthetic corpora

Version: 1.0.0
License: MIT License
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import partial
from pathlib import Path
from typing import Iterator, List, Optional

import numpy as np
import structlog
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel, Field

from .errors import DataError

logger = structlog.get_logger(__name__)

IMAGE_SUFFIXES = {".png", ".pgm"}
LUMINANCE = np.array([0.299, 0.587, 0.114])
GRAY_MODES = {"L", "I", "F"}
SYNTH_PREFIX = "synth:"


@dataclass
class ImageCorpus:
    """
    Images of one domain.

    Attributes:
        images: (N, C, R, R) float32 in [-1, 1]
        provenance: Where the images came from and how they were filtered
        indices: Positions in the parent corpus after subsampling
    """
    images: np.ndarray
    provenance: str
    indices: Optional[np.ndarray] = field(default=None, repr=False)

    def __len__(self) -> int:
        return int(self.images.shape[0])

    @property
    def channels(self) -> int:
        return int(self.images.shape[1])

    @property
    def resolution(self) -> int:
        return int(self.images.shape[-1])


class SyntheticDomain(str, Enum):
    SOURCE_SHAPES = "source_shapes"
    TARGET_SHAPES = "target_shapes"


class SyntheticSpec(BaseModel):
    """Recipe of a synthetic corpus"""
    domain: SyntheticDomain
    count: int = Field(..., ge=1)
    seed: int = 0
    size: int = Field(default=32, ge=4)
    grayscale: bool = False


def bilinear_resize(image: np.ndarray, size: int) -> np.ndarray:
    """
    Resize an (H, W, C) array to (size, size, C) with half-pixel centres.

    Output pixel o samples source coordinate (o + 0.5) * in / out - 0.5,
    clamped to the valid range, so resizing to the same size is exact.
    """
    def axis_weights(extent: int):
        coords = (np.arange(size) + 0.5) * (extent / size) - 0.5
        coords = np.clip(coords, 0.0, extent - 1)
        lo = np.floor(coords).astype(int)
        hi = np.minimum(lo + 1, extent - 1)
        return lo, hi, coords - lo

    h, w = image.shape[:2]
    y0, y1, fy = axis_weights(h)
    x0, x1, fx = axis_weights(w)
    rows = image[y0] * (1.0 - fy)[:, None, None] + image[y1] * fy[:, None, None]
    return rows[:, x0] * (1.0 - fx)[None, :, None] + rows[:, x1] * fx[None, :, None]


def to_luminance(rgb: np.ndarray) -> np.ndarray:
    """(H, W, 3) -> (H, W, 1) with Rec. 601 weights"""
    return (rgb[..., :3] @ LUMINANCE)[..., None]


def _gray_pixels(img: Image.Image) -> np.ndarray:
    """(H, W, 1) gray levels in [0, 255]; 16-bit modes are rescaled, not clamped"""
    if img.mode == "I" or img.mode.startswith("I;16"):
        return np.asarray(img, dtype=np.float64)[..., None] * (255.0 / 65535.0)
    return np.asarray(img.convert("L"), dtype=np.float64)[..., None]


def _decode(path: Path, size: int, grayscale: bool) -> np.ndarray:
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode in GRAY_MODES or img.mode.startswith("I;16"):
                pixels = _gray_pixels(img)
                if not grayscale:
                    pixels = np.repeat(pixels, 3, axis=-1)
            else:
                pixels = np.asarray(img.convert("RGB"), dtype=np.float64)
                if grayscale:
                    pixels = to_luminance(pixels)
    except (OSError, UnidentifiedImageError, SyntaxError) as e:
        raise DataError(f"cannot decode image {path}: {e}") from e
    resized = bilinear_resize(pixels, size)
    return (resized / 127.5 - 1.0).transpose(2, 0, 1).astype(np.float32)


def load_corpus(path: Path, size: int, grayscale: bool = False,
                workers: Optional[int] = None) -> ImageCorpus:
    """
    Decode every PNG/PGM file of a directory, in name order.

    Raises:
        DataError: If the directory is missing, has no images or a file is undecodable
    """
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"image directory not found: {root}")
    files = sorted(p for p in root.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise DataError(f"no PNG/PGM images in {root}")

    decode = partial(_decode, size=size, grayscale=grayscale)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        arrays: List[np.ndarray] = list(pool.map(decode, files))

    logger.info("corpus loaded", path=str(root), images=len(arrays), size=size,
                grayscale=grayscale)
    return ImageCorpus(np.stack(arrays), provenance=f"dir:{root}")


def subsample(corpus: ImageCorpus, n: int, seed: int) -> ImageCorpus:
    """
    Keep the first n entries of a seeded permutation.

    Raises:
        DataError: If n is not in 1..len(corpus)
    """
    if not 1 <= n <= len(corpus):
        raise DataError(f"cannot subsample {n} images from a corpus of {len(corpus)}")
    picked = np.random.default_rng(seed).permutation(len(corpus))[:n]
    parent = corpus.indices[picked] if corpus.indices is not None else picked
    return replace(
        corpus,
        images=corpus.images[picked],
        provenance=f"{corpus.provenance}|subsample(n={n},seed={seed})",
        indices=parent,
    )


def epoch_orders(count: int, seed: int) -> Iterator[np.ndarray]:
    """Successive per-epoch permutations drawn from one seeded stream"""
    rng = np.random.default_rng(seed)
    while True:
        yield rng.permutation(count)


def batch_iterator(corpus: ImageCorpus, batch: int, seed: int) -> Iterator[np.ndarray]:
    """
    Endless minibatches from the concatenation of per-epoch permutations.

    Raises:
        DataError: If batch exceeds the corpus size
    """
    if batch < 1 or batch > len(corpus):
        raise DataError(f"batch size {batch} does not fit a corpus of {len(corpus)}")

    def generate():
        pending = np.empty(0, dtype=int)
        for order in epoch_orders(len(corpus), seed):
            pending = np.concatenate([pending, order])
            while pending.size >= batch:
                yield corpus.images[pending[:batch]]
                pending = pending[batch:]

    return generate()


# ---------------------------------------------------------------------------
# Synthetic corpora
# ---------------------------------------------------------------------------


def _grid(size: int):
    coords = (np.arange(size) + 0.5) / size
    return np.meshgrid(coords, coords, indexing="ij")


def _paint(canvas: np.ndarray, mask: np.ndarray, color: np.ndarray):
    alpha = mask[..., None]
    canvas *= 1.0 - alpha
    canvas += alpha * color


def _gradient_background(rng: np.random.Generator, yy, xx, low: float, high: float):
    c0 = rng.uniform(low, high, 3)
    c1 = rng.uniform(low, high, 3)
    angle = rng.uniform(0, 2 * np.pi)
    t = np.clip((np.cos(angle) * (xx - 0.5) + np.sin(angle) * (yy - 0.5)) + 0.5, 0, 1)
    return c0 * (1 - t[..., None]) + c1 * t[..., None]


def _draw_source(rng: np.random.Generator, size: int) -> np.ndarray:
    """A cluttered scene: gradient background and one to four coloured shapes"""
    yy, xx = _grid(size)
    canvas = _gradient_background(rng, yy, xx, 0.0, 1.0)
    for _ in range(rng.integers(1, 5)):
        kind = rng.integers(0, 4)
        cy, cx = rng.uniform(0.15, 0.85, 2)
        radius = rng.uniform(0.08, 0.3)
        color = rng.uniform(0.0, 1.0, 3)
        theta = rng.uniform(0, np.pi)
        dy, dx = yy - cy, xx - cx
        ry = np.cos(theta) * dy - np.sin(theta) * dx
        rx = np.sin(theta) * dy + np.cos(theta) * dx
        if kind == 0:
            mask = dy ** 2 + dx ** 2 <= radius ** 2
        elif kind == 1:
            mask = (np.abs(ry) <= radius) & (np.abs(rx) <= radius)
        elif kind == 2:
            mask = (ry >= -radius / 2) & (np.abs(rx) <= (ry + radius / 2) * 0.6) & (ry <= radius)
        else:
            mask = np.abs(ry) <= radius / 4
        _paint(canvas, mask.astype(float), color)
    return canvas


FLOWER_PALETTE = np.array([
    [0.95, 0.35, 0.55],
    [0.98, 0.85, 0.20],
    [0.60, 0.30, 0.80],
    [0.98, 0.55, 0.15],
    [0.95, 0.95, 0.95],
])


def _draw_target(rng: np.random.Generator, size: int) -> np.ndarray:
    """A single centred flower: petals in polar form, a disc centre, dark foliage"""
    yy, xx = _grid(size)
    canvas = _gradient_background(rng, yy, xx, 0.0, 0.35)
    canvas[..., 1] = np.clip(canvas[..., 1] + 0.15, 0, 1)

    cy, cx = 0.5 + rng.uniform(-0.08, 0.08, 2)
    dy, dx = yy - cy, xx - cx
    r = np.sqrt(dy ** 2 + dx ** 2)
    phi = np.arctan2(dy, dx) + rng.uniform(0, 2 * np.pi)
    petals = rng.integers(5, 9)
    outer = rng.uniform(0.28, 0.42)
    profile = outer * (0.55 + 0.45 * np.abs(np.cos(petals * phi / 2)))
    petal_color = np.clip(FLOWER_PALETTE[rng.integers(0, len(FLOWER_PALETTE))]
                          + rng.normal(0, 0.05, 3), 0, 1)
    shade = np.clip(1.0 - 0.5 * r / outer, 0.5, 1.0)
    _paint(canvas, (r <= profile).astype(float) * shade, petal_color)

    centre = rng.uniform(0.06, 0.1)
    centre_color = np.array([0.55, 0.35, 0.1]) if rng.random() < 0.5 else np.array([0.9, 0.75, 0.1])
    _paint(canvas, (r <= centre).astype(float), centre_color)
    if rng.random() < 0.3:
        ring = np.abs(r - centre * 1.5) <= 0.012
        _paint(canvas, ring.astype(float), petal_color * 0.6)
    return canvas


def synth_generate(spec: SyntheticSpec) -> ImageCorpus:
    """Deterministic synthetic corpus; equal specs give identical images"""
    rng = np.random.default_rng(spec.seed)
    draw = _draw_source if spec.domain == SyntheticDomain.SOURCE_SHAPES else _draw_target
    images = []
    for _ in range(spec.count):
        rgb = np.clip(draw(rng, spec.size), 0.0, 1.0)
        pixels = to_luminance(rgb) if spec.grayscale else rgb
        images.append((pixels * 2.0 - 1.0).transpose(2, 0, 1))
    stack = np.stack(images).astype(np.float32)
    return ImageCorpus(stack, provenance=f"synth:{spec.domain.value}(n={spec.count},seed={spec.seed})")


def to_uint8(images: np.ndarray) -> np.ndarray:
    """[-1, 1] (N, C, H, W) -> uint8 (N, H, W, C)"""
    scaled = np.round((np.clip(images, -1.0, 1.0) + 1.0) * 127.5)
    return scaled.astype(np.uint8).transpose(0, 2, 3, 1)


def write_corpus(corpus: ImageCorpus, directory: Path) -> List[Path]:
    """Write a corpus as numbered PNG files readable by load_corpus"""
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, pixels in enumerate(to_uint8(corpus.images)):
        path = directory / f"{i:06d}.png"
        array = pixels[..., 0] if pixels.shape[-1] == 1 else pixels
        Image.fromarray(array).save(path)
        paths.append(path)
    logger.info("corpus written", directory=str(directory), images=len(paths))
    return paths


def resolve_corpus(source: str, size: int, grayscale: bool, count: int, seed: int,
                   limit_n: Optional[int] = None) -> ImageCorpus:
    """
    Load ``synth:<domain>`` or an image directory, optionally subsampled to limit_n.

    Raises:
        DataError: For unknown synthetic domains or unreadable directories
    """
    if source.startswith(SYNTH_PREFIX):
        name = source[len(SYNTH_PREFIX):]
        try:
            domain = SyntheticDomain(name)
        except ValueError as exc:
            raise DataError(f"unknown synthetic domain: {name}") from exc
        corpus = synth_generate(SyntheticSpec(domain=domain, count=count, seed=seed,
                                              size=size, grayscale=grayscale))
    else:
        corpus = load_corpus(Path(source), size, grayscale)
    if limit_n is not None:
        corpus = subsample(corpus, limit_n, seed)
    return corpus

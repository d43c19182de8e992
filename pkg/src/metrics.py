"""
Evaluation and Analysis

Sample quality and modulation analysis for trained generators.

Key Components:
- Proxy-FID: Frechet distance between Gaussian fits of features from a
  fixed, seeded random convolutional network
- Latent interpolation and style mixing
- Quartile statistics and boxplots of learned gamma/beta
- The sorted gamma matrix comparing filter usage across target domains
- Sample grids written as PNG

Version: 1.0.0
License: MIT License
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import structlog  # noqa: E402
from PIL import Image  # noqa: E402

from .architecture import Generator, HEAD_BLOCKS  # noqa: E402
from .data import to_uint8  # noqa: E402
from .errors import ShapeError  # noqa: E402
from .layers import LEAKY_SLOPE, he_std  # noqa: E402
from .models import AdaFMReport, QuartileStats  # noqa: E402
from .modulation import FSParams  # noqa: E402
from .tensor_core import Tensor, conv2d, no_grad  # noqa: E402

logger = structlog.get_logger(__name__)

FEATURE_SEED = 20200914
FEATURE_WIDTHS = (16, 32, 64)
DOMINANCE_MARGIN = 0.03
GAMMA_CLIP = (0.9, 1.1)


@dataclass
class GaussianFit:
    """Mean and covariance of a feature sample"""
    mu: np.ndarray
    sigma: np.ndarray
    count: int

    @classmethod
    def from_features(cls, features: np.ndarray) -> "GaussianFit":
        """
        Raises:
            ShapeError: With fewer than two samples
        """
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] < 2:
            raise ShapeError(f"a Gaussian fit needs at least 2 feature rows, got {features.shape}")
        sigma = np.cov(features, rowvar=False)
        return cls(features.mean(axis=0), (sigma + sigma.T) / 2.0, features.shape[0])

    @property
    def dim(self) -> int:
        return int(self.mu.shape[0])


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    """Symmetric square root of a symmetric PSD matrix with clamped eigenvalues"""
    vals, vecs = np.linalg.eigh((matrix + matrix.T) / 2.0)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def sqrt_product(sigma1: np.ndarray, sigma2: np.ndarray) -> np.ndarray:
    """
    A square root R of sigma1 @ sigma2 (R @ R == sigma1 @ sigma2) for SPD inputs.

    Computed as S * sqrt(S sigma2 S) * S^-1 with S = sigma1^(1/2).
    """
    root = _psd_sqrt(sigma1)
    inner = _psd_sqrt(root @ sigma2 @ root)
    return root @ inner @ np.linalg.pinv(root)


def frechet_distance(a: GaussianFit, b: GaussianFit) -> float:
    """
    Squared Frechet distance between two Gaussian fits, clamped at 0.

    The trace of (sigma_a sigma_b)^(1/2) is taken from the eigenvalues of the
    symmetric matrix S sigma_b S, S = sigma_a^(1/2), which share the spectrum.

    Raises:
        ShapeError: If the fits have different dimensions
    """
    if a.dim != b.dim:
        raise ShapeError(f"feature dimensions differ: {a.dim} vs {b.dim}")
    diff = a.mu - b.mu
    root = _psd_sqrt(a.sigma)
    inner = root @ b.sigma @ root
    eigenvalues = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    trace_sqrt = float(np.sqrt(np.clip(eigenvalues, 0.0, None)).sum())
    value = float(diff @ diff) + float(np.trace(a.sigma)) + float(np.trace(b.sigma)) - 2.0 * trace_sqrt
    return max(value, 0.0)


class FeatureExtractor:
    """
    Fixed random conv network: three conv3x3 / leaky-ReLU / 2x2 average-pool
    stages (16, 32, 64 filters) and a global average pool to 64 features.

    Weights depend only on the published seed, so every instance is identical.
    Single-channel images are replicated to three channels.
    """

    def __init__(self, seed: int = FEATURE_SEED):
        rng = np.random.default_rng(seed)
        self.weights: List[np.ndarray] = []
        cin = 3
        for width in FEATURE_WIDTHS:
            std = he_std(cin * 9)
            self.weights.append(rng.normal(0.0, std, size=(width, cin, 3, 3)).astype(np.float32))
            cin = width

    @property
    def dim(self) -> int:
        return FEATURE_WIDTHS[-1]

    def extract(self, images: np.ndarray, batch: int = 64) -> np.ndarray:
        """
        Args:
            images: (N, C, H, W) in [-1, 1], C in {1, 3}, H and W divisible by 8

        Returns:
            np.ndarray: (N, 64) float64 features
        """
        if images.ndim != 4 or images.shape[1] not in (1, 3):
            raise ShapeError(f"expected (N, 1|3, H, W) images, got {images.shape}")
        if images.shape[2] % 8 or images.shape[3] % 8:
            raise ShapeError(f"image extents must be divisible by 8, got {images.shape[2:]}")
        if images.shape[1] == 1:
            images = np.repeat(images, 3, axis=1)
        chunks = []
        with no_grad():
            for start in range(0, images.shape[0], batch):
                h = Tensor(images[start:start + batch].astype(np.float32))
                for weight in self.weights:
                    h = conv2d(h, Tensor(weight), padding=1).leaky_relu(LEAKY_SLOPE).avg_pool2x()
                chunks.append(h.data.mean(axis=(2, 3)).astype(np.float64))
        return np.concatenate(chunks, axis=0)

    def fit(self, images: np.ndarray) -> GaussianFit:
        return GaussianFit.from_features(self.extract(images))


def proxy_fid(real_images: np.ndarray, fake_images: np.ndarray,
              extractor: Optional[FeatureExtractor] = None) -> float:
    """Frechet distance between feature fits of two image sets"""
    extractor = extractor or FeatureExtractor()
    return frechet_distance(extractor.fit(real_images), extractor.fit(fake_images))


# ---------------------------------------------------------------------------
# Generation helpers
# ---------------------------------------------------------------------------


def generate(generator: Generator, z: np.ndarray, batch: int = 64) -> np.ndarray:
    """Images for latents z, no graph recorded"""
    outputs = []
    with no_grad():
        for start in range(0, z.shape[0], batch):
            outputs.append(generator(Tensor(z[start:start + batch])).data)
    return np.concatenate(outputs, axis=0)


def sample_latents(count: int, latent_dim: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((count, latent_dim)).astype(np.float32)


def interpolate(generator: Generator, z_a: np.ndarray, z_b: np.ndarray, steps: int) -> np.ndarray:
    """
    Frames along the straight line from z_a to z_b, endpoints included.

    Each frame is generated alone, so the endpoints equal generate(z_a), generate(z_b).

    Raises:
        ValueError: If steps < 2
    """
    if steps < 2:
        raise ValueError(f"interpolation needs at least 2 steps, got {steps}")
    z_a = np.asarray(z_a, dtype=np.float32).reshape(1, -1)
    z_b = np.asarray(z_b, dtype=np.float32).reshape(1, -1)
    frames = []
    for alpha in np.linspace(0.0, 1.0, steps):
        if alpha == 0.0:
            z = z_a
        elif alpha == 1.0:
            z = z_b
        else:
            z = ((1.0 - alpha) * z_a + alpha * z_b).astype(np.float32)
        frames.append(generate(generator, z)[0])
    return np.stack(frames)


def style_mix(generator: Generator, z_source: np.ndarray, z_dest: np.ndarray,
              mix_block_index: int) -> np.ndarray:
    """
    Generate from z_source with one style block driven by z_dest's style.

    Args:
        mix_block_index: 1 or 2, the head style block whose style is replaced

    Raises:
        ValueError: For an index outside 1..2 or a generator without style blocks
    """
    if not generator.has_styles:
        raise ValueError("style mixing needs a generator with a style head")
    if mix_block_index not in range(1, HEAD_BLOCKS + 1):
        raise ValueError(f"mix block index must be in 1..{HEAD_BLOCKS}, got {mix_block_index}")
    z_source = np.asarray(z_source, dtype=np.float32)
    z_dest = np.asarray(z_dest, dtype=np.float32)
    if z_source.shape != z_dest.shape:
        raise ShapeError(f"latent batches differ: {z_source.shape} vs {z_dest.shape}")
    with no_grad():
        zs, zd = Tensor(z_source), Tensor(z_dest)
        styles = generator.styles(zs)
        styles[mix_block_index - 1] = generator.mapping(zd)
        return generator(zs, styles).data


# ---------------------------------------------------------------------------
# Modulation analysis
# ---------------------------------------------------------------------------


def _modulation_values(generator: Generator) -> Dict[str, Dict[str, List[np.ndarray]]]:
    per_group: Dict[str, Dict[str, List[np.ndarray]]] = {}
    for index, group in enumerate(generator.groups(), start=1):
        for name, param in group.named_parameters():
            if param.role != "modulation":
                continue
            family = name.rsplit("/", 1)[-1]
            family = {"gamma_hat": "gamma", "beta_hat": "beta"}.get(family, family)
            per_group.setdefault(f"group{index}", {}).setdefault(family, []).append(
                param.data.ravel())
    return per_group


def adafm_stats(generator: Generator) -> AdaFMReport:
    """
    Min, quartiles and max of gamma and beta per generator group.

    Raises:
        ValueError: If the generator carries no modulation parameters
    """
    values = _modulation_values(generator)
    if not values:
        raise ValueError("generator has no modulation parameters")
    stats = []
    for group, families in values.items():
        for family, arrays in families.items():
            flat = np.concatenate(arrays).astype(np.float64)
            q = np.percentile(flat, [0, 25, 50, 75, 100])
            stats.append(QuartileStats(group=group, param=family, count=int(flat.size),
                                       min=q[0], q1=q[1], median=q[2], q3=q[3], max=q[4]))
    return AdaFMReport(stats=stats)


def plot_modulation_boxplot(generator: Generator, path: Path) -> None:
    """Boxplot of gamma and beta per group (whiskers at the extremes)"""
    values = _modulation_values(generator)
    if not values:
        raise ValueError("generator has no modulation parameters")
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for ax, family in zip(axes, ("gamma", "beta")):
        labels, data = [], []
        for group, families in values.items():
            if family in families:
                labels.append(group)
                data.append(np.concatenate(families[family]))
        if data:
            ax.boxplot(data, whis=(0, 100))
            ax.set_xticks(range(1, len(labels) + 1))
            ax.set_xticklabels(labels)
        ax.set_title(family)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


@dataclass
class SortedGammaMatrix:
    """
    Attributes:
        matrix: Clipped, rescaled gammas with columns reordered, (k, Cout * Cin)
        permutation: Column order t applied to the unsorted matrix
        dominant: Per row, the columns where that row dominates all others
    """
    matrix: np.ndarray
    permutation: np.ndarray
    dominant: List[List[int]]


def sorted_gamma_matrix(rows: Sequence[np.ndarray]) -> SortedGammaMatrix:
    """
    Compare flattened gammas of one conv bank across k target domains.

    Gammas are clipped to [0.9, 1.1] and min-max rescaled over the whole
    matrix. Row i dominates column j when its value beats every other row's
    by more than 0.03. Columns are ordered row by row through each row's
    dominant columns (descending value), then the remaining columns in
    index order.

    Raises:
        ValueError: For no rows or rows of different lengths
    """
    if not rows:
        raise ValueError("sorted gamma matrix needs at least one row")
    lengths = {np.asarray(r).size for r in rows}
    if len(lengths) != 1:
        raise ValueError(f"gamma rows have different lengths: {sorted(lengths)}")
    m = np.clip(np.stack([np.asarray(r, dtype=np.float64).ravel() for r in rows]), *GAMMA_CLIP)
    lo, hi = m.min(), m.max()
    m = (m - lo) / (hi - lo) if hi > lo else np.zeros_like(m)

    k, cols = m.shape
    used = np.zeros(cols, dtype=bool)
    order: List[int] = []
    dominant: List[List[int]] = []
    for i in range(k):
        if k == 1:
            candidates = np.ones(cols, dtype=bool)
        else:
            others = np.delete(m, i, axis=0)
            candidates = np.all(m[i] - others > DOMINANCE_MARGIN, axis=0)
        picked = np.flatnonzero(candidates & ~used)
        picked = picked[np.argsort(-m[i, picked], kind="stable")]
        used[picked] = True
        dominant.append(picked.tolist())
        order.extend(picked.tolist())
    order.extend(np.flatnonzero(~used).tolist())
    permutation = np.asarray(order, dtype=int)
    return SortedGammaMatrix(matrix=m[:, permutation], permutation=permutation, dominant=dominant)


def bank_gammas(generator: Generator, bank: str) -> np.ndarray:
    """
    Flattened (Cout * Cin,) gamma of a modulated bank, row-major.

    FS scales are expanded to their AdaFM equivalent first so rows from
    either scheme line up column for column.

    Args:
        bank: Registry path of the bank, e.g. ``group4/block1/conv2``
    """
    params = dict(generator.named_parameters())
    if f"{bank}/gamma" in params:
        return params[f"{bank}/gamma"].data.ravel().copy()
    if f"{bank}/gamma_hat" in params:
        fs = FSParams(params[f"{bank}/gamma_hat"], params[f"{bank}/beta_hat"])
        with no_grad():
            expanded = fs.expand(params[f"{bank}/W"].shape[1])
        return expanded.gamma.data.ravel().copy()
    raise ValueError(f"bank {bank} has no gamma parameters")


def default_gamma_bank(generator: Generator) -> str:
    """
    Last conv of the second group counted from the output.

    Groups are counted from the image side, as in GmDn labels, so this bank
    sits in the general part whenever gm >= 2.
    """
    index = generator.group_count - 1
    group = generator.group(index)
    return f"group{index}/block{len(group.blocks())}/conv2"


# ---------------------------------------------------------------------------
# Image output
# ---------------------------------------------------------------------------


def make_grid(images: np.ndarray, nrow: int, padding: int = 2) -> np.ndarray:
    """Tile (N, C, H, W) images in [-1, 1] into one uint8 (H', W', C) array"""
    if images.ndim != 4:
        raise ShapeError(f"expected (N, C, H, W) images, got {images.shape}")
    tiles = to_uint8(images)
    n, h, w, c = tiles.shape
    ncol = min(nrow, n)
    nrows = int(np.ceil(n / ncol))
    grid = np.zeros((nrows * (h + padding) + padding, ncol * (w + padding) + padding, c),
                    dtype=np.uint8)
    for idx in range(n):
        r, col = divmod(idx, ncol)
        top = padding + r * (h + padding)
        left = padding + col * (w + padding)
        grid[top:top + h, left:left + w] = tiles[idx]
    return grid


def save_png(array: np.ndarray, path: Path) -> None:
    pixels = array[..., 0] if array.shape[-1] == 1 else array
    Image.fromarray(pixels).save(path, format="PNG")

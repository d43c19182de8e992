"""
Network Layers

Building blocks of the generator and discriminator: dense layers, residual
blocks, style blocks and the latent-to-style mapping MLP. Convolutions are
FilterBanks so every conv can be frozen and modulated uniformly.

Version: 1.0.0
License: MIT License
"""

from typing import Optional

import numpy as np

from .config import DemodForm
from .errors import ShapeError
from .modulation import FilterBank
from .tensor_core import Module, Parameter, Tensor, dense

LEAKY_SLOPE = 0.2


def he_std(fan_in: int, slope: float = LEAKY_SLOPE) -> float:
    """He standard deviation for a leaky-ReLU network"""
    return float(np.sqrt(2.0 / ((1.0 + slope ** 2) * fan_in)))


def conv_bank(cin: int, cout: int, kernel: int, rng: np.random.Generator,
              bias: bool = True, stride: int = 1) -> FilterBank:
    """FilterBank with He-normal filters and zero bias"""
    weight = rng.normal(0.0, he_std(cin * kernel * kernel), size=(cout, cin, kernel, kernel))
    return FilterBank(weight, np.zeros(cout) if bias else None, stride=stride)


class Dense(Module):
    """Fully connected layer, W of shape (in, out)"""

    def __init__(self, fan_in: int, fan_out: int, rng: Optional[np.random.Generator] = None,
                 std: Optional[float] = None, role: str = "fc", bias_init: float = 0.0):
        std = 1.0 / np.sqrt(fan_in) if std is None else std
        values = rng.normal(0.0, std, size=(fan_in, fan_out)) if std > 0 else np.zeros((fan_in, fan_out))
        self.W = Parameter(values, role=role)
        self.b = Parameter(np.full(fan_out, bias_init), role=role)

    def forward(self, x: Tensor) -> Tensor:
        return dense(x, self.W, self.b)


class ToImage(Module):
    """leaky-ReLU, 3x3 conv to image channels, tanh"""

    def __init__(self, cin: int, image_channels: int, rng: np.random.Generator):
        self.conv = conv_bank(cin, image_channels, 3, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(x.leaky_relu(LEAKY_SLOPE)).tanh()


class ResidualBlock(Module):
    """
    Pre-activation residual block.

    main: lrelu -> conv3x3 -> lrelu -> conv3x3; shortcut: identity, or a 1x1
    projection when the width changes. Generator blocks upsample before the
    block, discriminator blocks average-pool after it.
    """

    def __init__(self, cin: int, cout: int, rng: np.random.Generator,
                 resample: Optional[str] = None, hidden: Optional[int] = None):
        if resample not in (None, "up", "down"):
            raise ValueError(f"unknown resample mode: {resample}")
        hidden = hidden or cout
        self.conv1 = conv_bank(cin, hidden, 3, rng)
        self.conv2 = conv_bank(hidden, cout, 3, rng)
        if cin != cout:
            self.shortcut = conv_bank(cin, cout, 1, rng, bias=False)
        self._cin = cin
        self._resample = resample

    def forward(self, x: Tensor) -> Tensor:
        return residual_forward(x, self)


def residual_forward(x: Tensor, block: ResidualBlock) -> Tensor:
    """
    Apply one residual block.

    Raises:
        ShapeError: If the input width differs from the block's input width
    """
    if x.ndim != 4 or x.shape[1] != block._cin:
        raise ShapeError(f"residual block expects {block._cin} input channels, got {x.shape}")
    if block._resample == "up":
        x = x.upsample2x()
    h = block.conv1(x.leaky_relu(LEAKY_SLOPE))
    h = block.conv2(h.leaky_relu(LEAKY_SLOPE))
    skip = block.shortcut(x) if hasattr(block, "shortcut") else x
    out = h + skip
    if block._resample == "down":
        out = out.avg_pool2x()
    return out


class StyleBlock(Module):
    """
    Residual block whose convolutions are demodulated by a style vector.

    Each conv gets its input-channel style from a dense affine of w. The
    affines start at weight 0 and bias 1, so the initial style is all ones.
    A 1x1 projection shortcut carries the block input.
    """

    def __init__(self, cin: int, cout: int, style_dim: int, rng: np.random.Generator,
                 epsilon: float = 1e-8, form: DemodForm = DemodForm.SQUARED):
        self.affine1 = Dense(style_dim, cin, std=0.0, role="affine", bias_init=1.0)
        self.conv1 = conv_bank(cin, cout, 3, rng)
        self.conv1.use_style_demodulation(epsilon, form)
        self.affine2 = Dense(style_dim, cout, std=0.0, role="affine", bias_init=1.0)
        self.conv2 = conv_bank(cout, cout, 3, rng)
        self.conv2.use_style_demodulation(epsilon, form)
        self.shortcut = conv_bank(cin, cout, 1, rng, bias=False)
        self._cin = cin
        self._style_dim = style_dim

    def forward(self, x: Tensor, w: Tensor) -> Tensor:
        return style_forward(x, w, self)


def style_forward(x: Tensor, w: Tensor, block: StyleBlock) -> Tensor:
    """
    Apply one style block with style vector ``w`` of shape (N, style_dim).

    Raises:
        ShapeError: If w's width differs from the block's style width
    """
    if w.ndim != 2 or w.shape[-1] != block._style_dim:
        raise ShapeError(f"style block expects (N, {block._style_dim}) styles, got {w.shape}")
    if x.ndim != 4 or x.shape[1] != block._cin or x.shape[0] != w.shape[0]:
        raise ShapeError(f"style block input {x.shape} does not match styles {w.shape}")
    h = block.conv1(x.leaky_relu(LEAKY_SLOPE), style=block.affine1(w))
    h = block.conv2(h.leaky_relu(LEAKY_SLOPE), style=block.affine2(w))
    return h + block.shortcut(x)


class MappingMLP(Module):
    """Latent-to-style MLP of ``depth`` leaky-ReLU dense layers"""

    def __init__(self, latent_dim: int, style_dim: int, depth: int, rng: np.random.Generator):
        widths = [latent_dim] + [style_dim] * depth
        for i in range(depth):
            setattr(self, f"fc{i + 1}",
                    Dense(widths[i], widths[i + 1], rng, std=he_std(widths[i])))
        self._depth = depth
        self._latent_dim = latent_dim

    def forward(self, z: Tensor) -> Tensor:
        return mapping_forward(z, self)


def mapping_forward(z: Tensor, mlp: MappingMLP) -> Tensor:
    if z.ndim != 2 or z.shape[-1] != mlp._latent_dim:
        raise ShapeError(f"mapping expects (N, {mlp._latent_dim}) latents, got {z.shape}")
    h = z
    for i in range(mlp._depth):
        h = getattr(mlp, f"fc{i + 1}")(h).leaky_relu(LEAKY_SLOPE)
    return h

"""
Filter Modulation

Adaptive filter modulation of frozen convolution banks. A frozen bank keeps
its pretrained filters W and exposes a small set of trainable parameters that
rescale and shift them:

- AdaFM: W_hat = gamma (.) W + beta, one gamma/beta pair per (out, in) kernel
- FS: the rank-one case gamma = gamma_hat 1^T, beta = beta_hat 1^T
- Weight demodulation: beta = 0, gamma = eta s^T with eta normalizing each
  output filter

Modulated weights are recomputed from the parameters on every forward pass.

Version: 1.0.0
License: MIT License
"""

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
import structlog

from .config import DemodForm
from .errors import DomainError, ShapeError
from .tensor_core import Module, Parameter, Tensor, conv2d

logger = structlog.get_logger(__name__)


class ModulationScheme(str, Enum):
    """How a filter bank's effective weights are derived"""
    NONE = "none"
    ADAFM = "adafm"
    FS = "fs"
    WEIGHT_DEMOD = "weight_demod"


@dataclass
class AdaFMParams:
    """Per-kernel scale and shift, both (Cout, Cin)"""
    gamma: Tensor
    beta: Tensor

    @classmethod
    def identity(cls, cout: int, cin: int) -> "AdaFMParams":
        return cls(
            gamma=Parameter(np.ones((cout, cin)), role="modulation", name="gamma"),
            beta=Parameter(np.zeros((cout, cin)), role="modulation", name="beta"),
        )


@dataclass
class FSParams:
    """Per-output-filter scale and shift, both (Cout,)"""
    gamma_hat: Tensor
    beta_hat: Tensor

    @classmethod
    def identity(cls, cout: int) -> "FSParams":
        return cls(
            gamma_hat=Parameter(np.ones(cout), role="modulation", name="gamma_hat"),
            beta_hat=Parameter(np.zeros(cout), role="modulation", name="beta_hat"),
        )

    def expand(self, cin: int) -> AdaFMParams:
        """The equivalent AdaFM parameters gamma_hat 1^T and beta_hat 1^T"""
        cout = self.gamma_hat.shape[0]
        return AdaFMParams(
            gamma=self.gamma_hat.reshape(cout, 1).broadcast_to((cout, cin)),
            beta=self.beta_hat.reshape(cout, 1).broadcast_to((cout, cin)),
        )


@dataclass
class WeightDemodParams:
    """
    Input-channel style s, shape (Cin,) or per-sample (N, Cin).

    Attributes:
        epsilon: Added to the normalizer before the inverse square root
        form: ``linear`` sums s_j W_ijk as written; ``squared`` sums (s_j W_ijk)^2
    """
    s: Tensor
    epsilon: float = 1e-8
    form: DemodForm = DemodForm.LINEAR


def _check_bank(weight: Tensor):
    if weight.ndim != 4:
        raise ShapeError(f"filter bank must be (Cout, Cin, K, K), got {weight.shape}")


def adafm_modulate(weight: Tensor, params: AdaFMParams) -> Tensor:
    """
    Modulated filters gamma_ij * W_ijk + beta_ij.

    Raises:
        ShapeError: If gamma or beta is not (Cout, Cin)
    """
    _check_bank(weight)
    cout, cin = weight.shape[:2]
    for label, tensor in (("gamma", params.gamma), ("beta", params.beta)):
        if tensor.shape != (cout, cin):
            raise ShapeError(f"{label} must be ({cout}, {cin}), got {tensor.shape}")
    return weight * params.gamma.reshape(cout, cin, 1, 1) + params.beta.reshape(cout, cin, 1, 1)


def fs_modulate(weight: Tensor, params: FSParams) -> Tensor:
    """
    Filter selection: AdaFM restricted to one scale and shift per output filter.

    Raises:
        ShapeError: If gamma_hat or beta_hat length differs from Cout
    """
    _check_bank(weight)
    cout, cin = weight.shape[:2]
    for label, tensor in (("gamma_hat", params.gamma_hat), ("beta_hat", params.beta_hat)):
        if tensor.shape != (cout,):
            raise ShapeError(f"{label} must have length {cout}, got {tensor.shape}")
    return adafm_modulate(weight, params.expand(cin))


def weight_demod_modulate(weight: Tensor, params: WeightDemodParams) -> Tensor:
    """
    Weight demodulation: eta_i * s_j * W_ijk.

    eta_i is the inverse square root of the per-output-channel normalizer
    plus epsilon. With a per-sample style (N, Cin) the result is (N, Cout, Cin, K, K).

    Raises:
        ShapeError: If s does not match Cin
        DomainError: If a normalizer is not positive (linear form only)
    """
    _check_bank(weight)
    cout, cin, k, _ = weight.shape
    s = params.s
    if s.ndim not in (1, 2) or s.shape[-1] != cin:
        raise ShapeError(f"style must be ({cin},) or (N, {cin}), got {s.shape}")
    if s.ndim == 1:
        scaled = weight * s.reshape(1, cin, 1, 1)
        eta_shape = (cout, 1, 1, 1)
    else:
        n = s.shape[0]
        scaled = weight.reshape(1, cout, cin, k, k) * s.reshape(n, 1, cin, 1, 1)
        eta_shape = (n, cout, 1, 1, 1)

    if params.form == DemodForm.SQUARED:
        radicand = (scaled * scaled).sum(axis=(-3, -2, -1)) + params.epsilon
    else:
        radicand = scaled.sum(axis=(-3, -2, -1)) + params.epsilon
    bad = np.argwhere(~(radicand.data > 0))
    if bad.size:
        channel = int(bad[0][-1])
        raise DomainError(
            f"demodulation normalizer for output channel {channel} is not positive "
            f"({float(radicand.data[tuple(bad[0])]):.6g})",
            channel=channel,
        )
    eta = radicand ** -0.5
    return scaled * eta.reshape(*eta_shape)


class FilterBank(Module):
    """
    A convolution layer whose filters can be frozen and modulated.

    Attributes:
        W (Parameter): Filters (Cout, Cin, K, K)
        b (Optional[Parameter]): Bias (Cout,)
        scheme (ModulationScheme): Active modulation
    """

    def __init__(self, weight: np.ndarray, bias: Optional[np.ndarray] = None,
                 stride: int = 1, padding: Optional[int] = None):
        self.W = Parameter(weight, role="weight")
        if bias is not None:
            self.b = Parameter(bias, role="bias")
        self._stride = stride
        self._padding = weight.shape[-1] // 2 if padding is None else padding
        self._scheme = ModulationScheme.NONE
        self._epsilon = 1e-8
        self._form = DemodForm.SQUARED

    @property
    def bias(self) -> Optional[Parameter]:
        return getattr(self, "b", None)

    @property
    def scheme(self) -> ModulationScheme:
        return self._scheme

    @property
    def cout(self) -> int:
        return self.W.shape[0]

    @property
    def cin(self) -> int:
        return self.W.shape[1]

    @property
    def frozen(self) -> bool:
        return self.W.frozen

    def use_style_demodulation(self, epsilon: float, form: DemodForm):
        """Demodulate with a per-sample style passed to forward()"""
        self._scheme = ModulationScheme.WEIGHT_DEMOD
        self._epsilon = epsilon
        self._form = form

    def attach(self, scheme: ModulationScheme, epsilon: float = 1e-8,
               form: DemodForm = DemodForm.SQUARED) -> int:
        """
        Attach identity-initialized modulation parameters.

        Returns:
            int: Number of scalars added
        """
        if self._scheme != ModulationScheme.NONE:
            raise ValueError(f"bank already uses {self._scheme.value} modulation")
        if scheme == ModulationScheme.ADAFM:
            params = AdaFMParams.identity(self.cout, self.cin)
            self.gamma, self.beta = params.gamma, params.beta
        elif scheme == ModulationScheme.FS:
            params = FSParams.identity(self.cout)
            self.gamma_hat, self.beta_hat = params.gamma_hat, params.beta_hat
        elif scheme == ModulationScheme.WEIGHT_DEMOD:
            self.s = Parameter(np.ones(self.cin), role="modulation", name="s")
            self._epsilon = epsilon
            self._form = form
        else:
            return 0
        self._scheme = scheme
        return sum(p.size for p in self.modulation_parameters())

    def modulation_parameters(self):
        return [p for p in self.parameters() if p.role == "modulation"]

    def effective_weight(self, style: Optional[Tensor] = None) -> Tensor:
        if self._scheme == ModulationScheme.ADAFM:
            return adafm_modulate(self.W, AdaFMParams(self.gamma, self.beta))
        if self._scheme == ModulationScheme.FS:
            return fs_modulate(self.W, FSParams(self.gamma_hat, self.beta_hat))
        if self._scheme == ModulationScheme.WEIGHT_DEMOD:
            s = style if style is not None else getattr(self, "s", None)
            if s is None:
                raise ValueError("style-demodulated bank needs a style input")
            return weight_demod_modulate(self.W, WeightDemodParams(s, self._epsilon, self._form))
        return self.W

    def forward(self, x: Tensor, style: Optional[Tensor] = None) -> Tensor:
        return conv2d(x, self.effective_weight(style), self.bias,
                      stride=self._stride, padding=self._padding)

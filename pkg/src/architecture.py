"""
Generator and Discriminator

Group-structured GAN networks, the GmDn partition that freezes a general
part, and the ordered parameter registry shared by training, checkpoints and
transfer.

Generator groups are numbered from the latent side: group1 is the head at
4x4, group2 is the 4x4 tail group and every later group doubles the
resolution. Gm freezes the last m groups. Discriminator group1 holds the
from-image conv; Dn freezes the first n groups. The generator FC, the
mapping MLP and the discriminator FC belong to no group.

Version: 1.0.0
License: MIT License
"""

from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog

from .config import (
    UNPARTITIONED_MODES,
    DemodForm,
    HeadType,
    RunConfig,
    TrainMode,
    parse_partition_label,
)
from .errors import ConfigError, ShapeError
from .layers import (
    LEAKY_SLOPE,
    Dense,
    MappingMLP,
    ResidualBlock,
    StyleBlock,
    ToImage,
    conv_bank,
)
from .modulation import FilterBank, ModulationScheme
from .tensor_core import Module, Parameter, Tensor

logger = structlog.get_logger(__name__)

HEAD_BLOCKS = 2

MODE_SCHEMES = {
    TrainMode.ADAFM: ModulationScheme.ADAFM,
    TrainMode.FS: ModulationScheme.FS,
    TrainMode.WDEMOD: ModulationScheme.WEIGHT_DEMOD,
}


class Group(Module):
    """Blocks sharing one feature-map resolution"""

    def __init__(self, blocks: Sequence[Module], to_image: Optional[ToImage] = None,
                 from_image: Optional[FilterBank] = None):
        if from_image is not None:
            self.from_image = from_image
        for i, block in enumerate(blocks):
            setattr(self, f"block{i + 1}", block)
        if to_image is not None:
            self.to_image = to_image
        self._count = len(blocks)

    def blocks(self) -> List[Module]:
        return [getattr(self, f"block{i + 1}") for i in range(self._count)]

    def banks(self) -> List[FilterBank]:
        return [m for _, m in self.named_modules() if isinstance(m, FilterBank)]

    def forward(self, x: Tensor, styles: Optional[Sequence[Tensor]] = None) -> Tensor:
        if hasattr(self, "from_image"):
            x = self.from_image(x)
        for i, block in enumerate(self.blocks()):
            x = block(x, styles[i]) if isinstance(block, StyleBlock) else block(x)
        if hasattr(self, "to_image"):
            x = self.to_image(x)
        return x


class GroupedNetwork(Module):
    """Network whose groups are attributes group1..groupG"""

    registry_prefix = ""

    def __init__(self):
        self._group_count = 0

    def _add_group(self, group: Group):
        self._group_count += 1
        setattr(self, f"group{self._group_count}", group)

    @property
    def group_count(self) -> int:
        return self._group_count

    def group(self, index: int) -> Group:
        """1-based group access"""
        return getattr(self, f"group{index}")

    def groups(self) -> List[Group]:
        return [self.group(i) for i in range(1, self._group_count + 1)]


class Generator(GroupedNetwork):
    """
    z -> FC -> 4x4 map -> head group -> tail groups -> image in [-1, 1].

    With the style head, a mapping MLP turns z into the style w that drives
    both head style blocks. The residual head is two residual blocks with
    twice the hidden width.
    """

    registry_prefix = "gen"

    def __init__(self, cfg: RunConfig, rng: np.random.Generator):
        super().__init__()
        widths = cfg.generator_channels()
        self.head_type = cfg.resolved_head()
        self.latent_dim = cfg.latent_dim
        self.image_channels = cfg.image_channels
        self._base = widths[0]

        if self.head_type == HeadType.STYLE:
            self.mapping = MappingMLP(cfg.latent_dim, cfg.style_dim, cfg.mapping_depth, rng)
        self.fc = Dense(cfg.latent_dim, widths[0] * 16, rng)

        if self.head_type == HeadType.STYLE:
            head = [
                StyleBlock(widths[0], widths[0], cfg.style_dim, rng,
                           cfg.epsilon_demod, cfg.style_demod_form)
                for _ in range(HEAD_BLOCKS)
            ]
        else:
            head = [
                ResidualBlock(widths[0], widths[0], rng, hidden=2 * widths[0])
                for _ in range(HEAD_BLOCKS)
            ]
        self._add_group(Group(head))

        previous = widths[0]
        for position, width in enumerate(widths):
            blocks = []
            for b in range(cfg.blocks_per_group):
                resample = "up" if position > 0 and b == 0 else None
                blocks.append(ResidualBlock(previous, width, rng, resample=resample))
                previous = width
            last = position == len(widths) - 1
            to_image = ToImage(width, cfg.image_channels, rng) if last else None
            self._add_group(Group(blocks, to_image=to_image))

    @property
    def has_styles(self) -> bool:
        return self.head_type == HeadType.STYLE

    def styles(self, z: Tensor) -> List[Tensor]:
        """Per-style-block inputs for plain generation"""
        w = self.mapping(z)
        return [w] * HEAD_BLOCKS

    def forward(self, z: Tensor, styles: Optional[Sequence[Tensor]] = None) -> Tensor:
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise ShapeError(f"generator expects (N, {self.latent_dim}) latents, got {z.shape}")
        n = z.shape[0]
        h = self.fc(z).reshape(n, self._base, 4, 4)
        if self.has_styles:
            styles = self.styles(z) if styles is None else list(styles)
            if len(styles) != HEAD_BLOCKS:
                raise ShapeError(f"expected {HEAD_BLOCKS} styles, got {len(styles)}")
        elif styles is not None:
            raise ValueError("the residual head takes no styles")
        h = self.group1(h, styles)
        for group in self.groups()[1:]:
            h = group(h)
        return h


class Discriminator(GroupedNetwork):
    """
    image -> from-image conv -> downsampling groups -> two 4x4 groups -> FC -> logit.
    """

    registry_prefix = "disc"

    def __init__(self, cfg: RunConfig, rng: np.random.Generator):
        super().__init__()
        widths = cfg.discriminator_channels()
        from_image = conv_bank(cfg.image_channels, widths[0], 3, rng)
        self.image_channels = cfg.image_channels
        self.resolution = cfg.resolution

        for position in range(1, len(widths)):
            blocks = [ResidualBlock(widths[position - 1], widths[position], rng, resample="down")]
            for _ in range(cfg.blocks_per_group - 1):
                blocks.append(ResidualBlock(widths[position], widths[position], rng))
            self._add_group(Group(blocks, from_image=from_image if position == 1 else None))
        for _ in range(HEAD_BLOCKS):
            blocks = [ResidualBlock(widths[-1], widths[-1], rng)
                      for _ in range(cfg.blocks_per_group)]
            self._add_group(Group(blocks))
        self.fc = Dense(widths[-1] * 16, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1:] != (self.image_channels, self.resolution, self.resolution):
            raise ShapeError(
                f"discriminator expects (N, {self.image_channels}, {self.resolution}, "
                f"{self.resolution}) images, got {x.shape}"
            )
        h = x
        for group in self.groups():
            h = group(h)
        n = x.shape[0]
        return self.fc(h.leaky_relu(LEAKY_SLOPE).reshape(n, -1)).reshape(n)


def build_models(cfg: RunConfig, seed: Optional[int] = None) -> Tuple[Generator, Discriminator]:
    """
    Construct a freshly initialized generator and discriminator.

    Raises:
        ConfigError: If the resolution or channel widths are invalid
    """
    cfg.generator_channels()
    root = np.random.SeedSequence(cfg.seed if seed is None else seed)
    g_seed, d_seed = root.spawn(2)
    generator = Generator(cfg, np.random.default_rng(g_seed))
    discriminator = Discriminator(cfg, np.random.default_rng(d_seed))
    logger.debug(
        "models built",
        generator_groups=generator.group_count,
        discriminator_groups=discriminator.group_count,
        head=generator.head_type.value,
    )
    return generator, discriminator


@dataclass(frozen=True)
class ModelPartition:
    """Frozen general part: last m generator groups, first n discriminator groups"""
    m: int
    n: int

    @classmethod
    def parse(cls, label: str) -> "ModelPartition":
        try:
            m, n = parse_partition_label(label)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return cls(m, n)

    @classmethod
    def for_config(cls, cfg: RunConfig) -> "ModelPartition":
        if cfg.mode in UNPARTITIONED_MODES:
            return cls(0, 0)
        return cls(cfg.gm, cfg.dn)

    @property
    def label(self) -> str:
        return f"G{self.m}D{self.n}"


def frozen_generator_groups(generator: Generator, m: int) -> List[Group]:
    return generator.groups()[generator.group_count - m:] if m else []


def apply_partition(generator: Generator, discriminator: Discriminator,
                    partition: ModelPartition,
                    scheme: ModulationScheme = ModulationScheme.NONE,
                    cfg: Optional[RunConfig] = None) -> int:
    """
    Freeze the general part and attach modulation to its generator banks.

    Banks that are already style-demodulated keep their scheme.

    Returns:
        int: Number of modulation scalars attached

    Raises:
        ConfigError: If m or n exceeds the group count
    """
    if not 0 <= partition.m <= generator.group_count:
        raise ConfigError(
            f"gm={partition.m} outside 0..{generator.group_count} generator groups"
        )
    if not 0 <= partition.n <= discriminator.group_count:
        raise ConfigError(
            f"dn={partition.n} outside 0..{discriminator.group_count} discriminator groups"
        )
    for group in frozen_generator_groups(generator, partition.m):
        group.freeze()
    for group in discriminator.groups()[:partition.n]:
        group.freeze()

    attached = 0
    if scheme != ModulationScheme.NONE:
        epsilon = cfg.epsilon_demod if cfg else 1e-8
        form = cfg.wdemod_form if cfg else DemodForm.SQUARED
        for group in frozen_generator_groups(generator, partition.m):
            for bank in group.banks():
                if bank.scheme == ModulationScheme.NONE:
                    attached += bank.attach(scheme, epsilon, form)
    logger.info("partition applied", partition=partition.label, scheme=scheme.value,
                modulation_scalars=attached)
    return attached


def configure_models(cfg: RunConfig, seed: Optional[int] = None
                     ) -> Tuple[Generator, Discriminator, ModelPartition]:
    """Build models and apply the partition and modulation implied by ``cfg.mode``"""
    generator, discriminator = build_models(cfg, seed)
    partition = ModelPartition.for_config(cfg)
    apply_partition(generator, discriminator, partition,
                    MODE_SCHEMES.get(cfg.mode, ModulationScheme.NONE), cfg)
    return generator, discriminator, partition


@dataclass
class ParameterInfo:
    name: str
    tensor: Parameter

    @property
    def frozen(self) -> bool:
        return self.tensor.frozen

    @property
    def role(self) -> str:
        return self.tensor.role

    @property
    def network(self) -> str:
        return self.name.split("/", 1)[0]

    @property
    def group(self) -> Optional[str]:
        second = self.name.split("/")[1]
        return second if second.startswith("group") else None


class ParameterRegistry:
    """Ordered map from stable hierarchical names to parameters"""

    def __init__(self, entries: "OrderedDict[str, Parameter]"):
        self._entries = entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[ParameterInfo]:
        for name, tensor in self._entries.items():
            yield ParameterInfo(name, tensor)

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __getitem__(self, name: str) -> Parameter:
        return self._entries[name]

    def names(self) -> List[str]:
        return list(self._entries)

    def trainable(self) -> Dict[str, Parameter]:
        return OrderedDict((k, p) for k, p in self._entries.items() if not p.frozen)

    def frozen(self) -> Dict[str, Parameter]:
        return OrderedDict((k, p) for k, p in self._entries.items() if p.frozen)

    def modulation(self) -> Dict[str, Parameter]:
        return OrderedDict((k, p) for k, p in self._entries.items() if p.role == "modulation")

    def count(self, trainable_only: bool = False) -> int:
        return int(sum(p.size for p in self._entries.values()
                       if not (trainable_only and p.frozen)))


def list_parameters(models: Union[GroupedNetwork, Sequence[GroupedNetwork]]) -> ParameterRegistry:
    """
    Enumerate parameters with names such as ``gen/group3/block1/conv2/W``.

    Order is deterministic: generator before discriminator, then assignment order.
    """
    networks = [models] if isinstance(models, GroupedNetwork) else list(models)
    entries: "OrderedDict[str, Parameter]" = OrderedDict()
    for network in networks:
        for name, param in network.named_parameters(f"{network.registry_prefix}/"):
            if name in entries:
                raise ValueError(f"duplicate parameter name {name}")
            entries[name] = param
    return ParameterRegistry(entries)

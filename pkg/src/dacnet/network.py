"""Config-driven construction and execution of the classifier network.

The architecture is: a strided 3x3 input convolution, a chain of
inverted-bottleneck blocks (pointwise expansion -> dilated depthwise 3x3 ->
pointwise projection, each with batch normalization, ReLU on the first two),
per-scale embedding heads (1x1 projection + global average pooling) tapped at
the last three block instances, concatenation into a multi-scale embedding,
and a linear classifier.

``NetworkConfig.instances()`` is the single source of architectural truth:
both the executable :class:`Model` and the analytic cost walk in
:mod:`dacnet.complexity` are derived from it.

Model files ("DACM") are: magic "DACM", a version byte, a little-endian
uint32 length plus that many bytes of config JSON, then every parameter in
declaration order as little-endian float64.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from . import ops
from .errors import ConfigError, DataError, ShapeError
from .ops import ConvSpec
from .tensor import DTYPE, Tensor

DACM_MAGIC = b"DACM"
DACM_VERSION = 1

ABLATION_VARIANTS = ("full", "no_dco", "no_mse")


@dataclass(frozen=True)
class BlockSpec:
    """One row of the block table; expands to ``repeats`` block instances.

    Only the first instance of a row applies the stride and the channel
    change; the rest run out->out at stride 1. Every instance holds exactly
    three convolution layers.
    """

    in_channels: int
    out_channels: int
    stride: int = 1
    repeats: int = 1
    expansion_factor: int = 3
    dilation: int = 2

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.stride, self.repeats,
               self.expansion_factor, self.dilation) < 1:
            raise ConfigError(f"block fields must be positive: {self}")


@dataclass(frozen=True)
class InstanceSpec:
    """A materialized block instance (after applying the repeat rule)."""

    in_channels: int
    out_channels: int
    stride: int
    expansion_factor: int
    dilation: int

    @property
    def expanded(self) -> int:
        return self.expansion_factor * self.in_channels


@dataclass(frozen=True)
class NetworkConfig:
    input_channels: int = 3
    stem_channels: int = 32
    stem_kernel: int = 3
    stem_stride: int = 2
    blocks: tuple[BlockSpec, ...] = ()
    mse_taps: Optional[tuple[int, ...]] = None  # block-instance indices; default: last three
    mse_projection_channels: int = 1280
    num_classes: int = 9
    dilation_enabled: bool = True
    mse_enabled: bool = True
    residual_enabled: bool = True
    literal_fc_head: bool = False
    fc_neurons: int = 1280  # only used when literal_fc_head is set

    def instances(self) -> list[InstanceSpec]:
        out: list[InstanceSpec] = []
        prev = self.stem_channels
        for bi, b in enumerate(self.blocks):
            if b.in_channels != prev:
                raise ConfigError(
                    f"block {bi}: in_channels {b.in_channels} does not chain from "
                    f"previous output {prev}"
                )
            dilation = b.dilation if self.dilation_enabled else 1
            for r in range(b.repeats):
                if r == 0:
                    out.append(InstanceSpec(b.in_channels, b.out_channels, b.stride,
                                            b.expansion_factor, dilation))
                else:
                    out.append(InstanceSpec(b.out_channels, b.out_channels, 1,
                                            b.expansion_factor, dilation))
            prev = b.out_channels
        return out

    def tap_indices(self) -> tuple[int, ...]:
        instances = self.instances()
        if not self.mse_enabled:
            return (len(instances) - 1,)
        taps = self.mse_taps
        if taps is None:
            if len(instances) < 3:
                raise ConfigError("multi-scale embedding needs at least 3 block instances")
            taps = tuple(range(len(instances) - 3, len(instances)))
        if len(taps) != 3:
            raise ConfigError(f"exactly 3 embedding taps required, got {len(taps)}")
        widths = set()
        for t in taps:
            if not 0 <= t < len(instances):
                raise ConfigError(f"tap index {t} out of range for {len(instances)} instances")
            widths.add(instances[t].out_channels)
        if len(widths) != 1:
            raise ConfigError(f"tap channel counts differ: {sorted(widths)}")
        return tuple(sorted(taps))

    def validate(self) -> None:
        if not self.blocks:
            raise ConfigError("network needs at least one block")
        self.instances()
        self.tap_indices()

    # -- JSON round trip ----------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "input_channels": self.input_channels,
            "stem_channels": self.stem_channels,
            "stem_kernel": self.stem_kernel,
            "stem_stride": self.stem_stride,
            "blocks": [
                [b.in_channels, b.out_channels, b.stride, b.repeats,
                 b.expansion_factor, b.dilation]
                for b in self.blocks
            ],
            "mse_taps": list(self.mse_taps) if self.mse_taps is not None else None,
            "mse_projection_channels": self.mse_projection_channels,
            "num_classes": self.num_classes,
            "dilation_enabled": self.dilation_enabled,
            "mse_enabled": self.mse_enabled,
            "residual_enabled": self.residual_enabled,
            "literal_fc_head": self.literal_fc_head,
            "fc_neurons": self.fc_neurons,
        }
        return json.dumps(doc, indent=2)

    @staticmethod
    def from_dict(doc: dict) -> "NetworkConfig":
        try:
            blocks = tuple(BlockSpec(*row) for row in doc["blocks"])
            taps = doc.get("mse_taps")
            return NetworkConfig(
                input_channels=doc.get("input_channels", 3),
                stem_channels=doc.get("stem_channels", 32),
                stem_kernel=doc.get("stem_kernel", 3),
                stem_stride=doc.get("stem_stride", 2),
                blocks=blocks,
                mse_taps=tuple(taps) if taps is not None else None,
                mse_projection_channels=doc.get("mse_projection_channels", 1280),
                num_classes=doc.get("num_classes", 9),
                dilation_enabled=doc.get("dilation_enabled", True),
                mse_enabled=doc.get("mse_enabled", True),
                residual_enabled=doc.get("residual_enabled", True),
                literal_fc_head=doc.get("literal_fc_head", False),
                fc_neurons=doc.get("fc_neurons", 1280),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed network config: {exc}") from exc

    @staticmethod
    def from_json(text: str) -> "NetworkConfig":
        return NetworkConfig.from_dict(json.loads(text))


def ablation_variant(config: NetworkConfig, which: str) -> NetworkConfig:
    """Table-style ablations: disable dilation, disable multi-scale, or neither."""
    if which == "full":
        return config
    if which == "no_dco":
        return replace(config, dilation_enabled=False)
    if which == "no_mse":
        return replace(config, mse_enabled=False)
    raise ConfigError(f"unknown ablation variant {which!r}; choose from {ABLATION_VARIANTS}")


# ---------------------------------------------------------------------------
# Layer specs shared by the executable model and the analytic cost walk
# ---------------------------------------------------------------------------


def stem_conv_spec(config: NetworkConfig) -> ConvSpec:
    return ConvSpec(
        kernel_size=config.stem_kernel,
        in_channels=config.input_channels,
        out_channels=config.stem_channels,
        stride=config.stem_stride,
        padding=(config.stem_kernel - 1) // 2,
        mode="standard",
    )


def instance_conv_specs(inst: InstanceSpec) -> tuple[ConvSpec, ConvSpec, ConvSpec]:
    """The three convolutions of one block instance: expand, depthwise, project.

    The depthwise layer carries the dilation; its padding equals the dilation
    so a stride-1 instance preserves the spatial extent. Dilation on the 1x1
    layers would be a no-op by definition.
    """
    expand = ConvSpec(1, inst.in_channels, inst.expanded, mode="pointwise")
    depthwise = ConvSpec(
        kernel_size=3, in_channels=inst.expanded, out_channels=inst.expanded,
        stride=inst.stride, padding=inst.dilation, dilation=inst.dilation,
        mode="depthwise",
    )
    project = ConvSpec(1, inst.expanded, inst.out_channels, mode="pointwise")
    return expand, depthwise, project


def head_conv_spec(config: NetworkConfig, tap_channels: int) -> ConvSpec:
    return ConvSpec(1, tap_channels, config.mse_projection_channels, mode="pointwise")


def receptive_field(config: NetworkConfig, upto_instance: Optional[int] = None) -> int:
    """Input extent seen by one unit of the (deepest by default) tap.

    Recurrence per convolution: r' = r + (k - 1) * d * jump, jump' = jump * s.
    Pointwise layers contribute nothing.
    """
    instances = config.instances()
    if upto_instance is None:
        upto_instance = len(instances) - 1
    r, jump = 1, 1
    stem = stem_conv_spec(config)
    r += (stem.kernel_size - 1) * stem.dilation * jump
    jump *= stem.stride
    for inst in instances[:upto_instance + 1]:
        r += 2 * inst.dilation * jump  # depthwise 3x3
        jump *= inst.stride
    return r


# ---------------------------------------------------------------------------
# Executable model
# ---------------------------------------------------------------------------


class _ConvUnit:
    """Convolution plus optional batch norm and ReLU, owning its parameters."""

    def __init__(self, name: str, spec: ConvSpec, rng: np.random.Generator,
                 bn: bool = True, act: bool = True):
        self.name = name
        self.spec = spec
        self.bn = bn
        self.act = act
        kh = spec.kernel_shape()
        if spec.mode == "depthwise":
            fan_in = spec.kernel_size ** 2
        else:
            fan_in = spec.in_channels * spec.kernel_size ** 2
        self.kernel = Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), kh), requires_grad=True)
        self.bias = Tensor(np.zeros(spec.out_channels), requires_grad=True) if spec.has_bias else None
        if bn:
            c = spec.out_channels
            self.gamma = Tensor(np.ones(c), requires_grad=True)
            self.beta = Tensor(np.zeros(c), requires_grad=True)
            self.running_mean = np.zeros(c, dtype=DTYPE)
            self.running_var = np.ones(c, dtype=DTYPE)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        out = ops.conv2d(x, self.kernel, self.bias, self.spec)
        if self.bn:
            out = ops.batchnorm(out, self.gamma, self.beta,
                                self.running_mean, self.running_var, training)
        if self.act:
            out = ops.relu(out)
        return out

    def parameters(self) -> list[tuple[str, Tensor]]:
        out = [(f"{self.name}.kernel", self.kernel)]
        if self.bias is not None:
            out.append((f"{self.name}.bias", self.bias))
        if self.bn:
            out.append((f"{self.name}.gamma", self.gamma))
            out.append((f"{self.name}.beta", self.beta))
        return out

    def buffers(self) -> list[np.ndarray]:
        return [self.running_mean, self.running_var] if self.bn else []


class _Block:
    def __init__(self, name: str, inst: InstanceSpec, residual: bool, rng: np.random.Generator):
        expand, depthwise, project = instance_conv_specs(inst)
        self.name = name
        self.expand = _ConvUnit(f"{name}.expand", expand, rng)
        self.depthwise = _ConvUnit(f"{name}.depthwise", depthwise, rng)
        self.project = _ConvUnit(f"{name}.project", project, rng, act=False)
        self.residual = residual and inst.stride == 1 and inst.in_channels == inst.out_channels

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        out = self.project(self.depthwise(self.expand(x, training), training), training)
        if self.residual:
            out = ops.add(out, x)
        return out

    def units(self) -> list[_ConvUnit]:
        return [self.expand, self.depthwise, self.project]


@dataclass
class MultiScaleEmbedding:
    """Pooled per-scale embeddings and their concatenation.

    ``scales`` is ordered shallowest tap first; ``embedding`` is the
    concatenation in that order.
    """

    scales: list[np.ndarray]
    embedding: np.ndarray


class Model:
    """Parameter set plus execution plan for one NetworkConfig."""

    def __init__(self, config: NetworkConfig, seed: int = 0):
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        self.stem = _ConvUnit("stem", stem_conv_spec(config), rng)
        self.blocks = [
            _Block(f"block{i}", inst, config.residual_enabled, rng)
            for i, inst in enumerate(config.instances())
        ]
        self.taps = config.tap_indices()
        tap_channels = config.instances()[self.taps[0]].out_channels
        self.heads = [
            _ConvUnit(f"head{j}", head_conv_spec(config, tap_channels), rng)
            for j in range(len(self.taps))
        ]
        embed_width = config.mse_projection_channels * len(self.taps)
        if config.literal_fc_head:
            self.fc_hidden = Tensor(
                rng.normal(0.0, np.sqrt(2.0 / embed_width), (embed_width, config.fc_neurons)),
                requires_grad=True,
            )
            self.fc_hidden_bias = Tensor(np.zeros(config.fc_neurons), requires_grad=True)
            classifier_in = config.fc_neurons
        else:
            self.fc_hidden = None
            self.fc_hidden_bias = None
            classifier_in = embed_width
        self.classifier = Tensor(
            rng.normal(0.0, np.sqrt(2.0 / classifier_in), (classifier_in, config.num_classes)),
            requires_grad=True,
        )
        self.classifier_bias = Tensor(np.zeros(config.num_classes), requires_grad=True)

    # -- parameters ----------------------------------------------------------

    def units(self) -> Iterator[_ConvUnit]:
        yield self.stem
        for block in self.blocks:
            yield from block.units()
        yield from self.heads

    def parameters(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for unit in self.units():
            out.extend(unit.parameters())
        if self.fc_hidden is not None:
            out.append(("fc_hidden.weight", self.fc_hidden))
            out.append(("fc_hidden.bias", self.fc_hidden_bias))
        out.append(("classifier.weight", self.classifier))
        out.append(("classifier.bias", self.classifier_bias))
        return out

    def parameter_count(self) -> int:
        return sum(t.size for _, t in self.parameters())

    def zero_grad(self) -> None:
        for _, t in self.parameters():
            t.zero_grad()

    # -- execution -----------------------------------------------------------

    def check_input_shape(self, h: int, w: int) -> None:
        """Walk the shape law and name the first stage that collapses."""
        try:
            h, w = self.stem.spec.output_hw(h, w)
        except ShapeError as exc:
            raise ShapeError(f"stem: {exc}") from exc
        for i, block in enumerate(self.blocks):
            for unit in block.units():
                try:
                    h, w = unit.spec.output_hw(h, w)
                except ShapeError as exc:
                    raise ShapeError(f"block{i}.{unit.name.split('.')[-1]}: {exc}") from exc

    def forward(self, x: Tensor, training: bool = False) -> tuple[Tensor, MultiScaleEmbedding]:
        if x.ndim != 4 or x.shape[1] != self.config.input_channels:
            raise ShapeError(
                f"expected input (B, {self.config.input_channels}, H, W), got {x.shape}"
            )
        self.check_input_shape(x.shape[2], x.shape[3])
        out = self.stem(x, training)
        tap_outputs: dict[int, Tensor] = {}
        for i, block in enumerate(self.blocks):
            out = block(out, training)
            if i in self.taps:
                tap_outputs[i] = out
        pooled = [
            ops.global_avg_pool(self.heads[j](tap_outputs[t], training))
            for j, t in enumerate(self.taps)
        ]
        embedding = ops.concat(pooled) if len(pooled) > 1 else pooled[0]
        hidden = embedding
        if self.fc_hidden is not None:
            hidden = ops.relu(ops.linear(embedding, self.fc_hidden, self.fc_hidden_bias))
        logits = ops.linear(hidden, self.classifier, self.classifier_bias)
        mse = MultiScaleEmbedding(
            scales=[p.data for p in pooled], embedding=embedding.data
        )
        return logits, mse

    def predict_logits(self, x: np.ndarray) -> np.ndarray:
        logits, _ = self.forward(Tensor(x), training=False)
        return logits.data

    # -- serialization ---------------------------------------------------------

    def save(self, path: str | Path) -> None:
        config_blob = self.config.to_json().encode()
        parts = [DACM_MAGIC, struct.pack("<B", DACM_VERSION),
                 struct.pack("<I", len(config_blob)), config_blob]
        for _, t in self.parameters():
            parts.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        for buf in self._bn_buffers():
            parts.append(np.ascontiguousarray(buf, dtype="<f8").tobytes())
        Path(path).write_bytes(b"".join(parts))

    def _bn_buffers(self) -> list[np.ndarray]:
        out = []
        for unit in self.units():
            out.extend(unit.buffers())
        return out

    @staticmethod
    def load(path: str | Path) -> "Model":
        raw = Path(path).read_bytes()
        if len(raw) < 9 or raw[:4] != DACM_MAGIC:
            raise DataError(f"{path}: not a DACM model file")
        (version,) = struct.unpack_from("<B", raw, 4)
        if version != DACM_VERSION:
            raise DataError(f"{path}: unsupported DACM version {version}")
        (cfg_len,) = struct.unpack_from("<I", raw, 5)
        config = NetworkConfig.from_json(raw[9:9 + cfg_len].decode())
        model = Model(config, seed=0)
        offset = 9 + cfg_len
        for name, t in model.parameters():
            nbytes = t.size * 8
            if offset + nbytes > len(raw):
                raise DataError(f"{path}: truncated at parameter {name}")
            t.data = np.frombuffer(raw[offset:offset + nbytes], dtype="<f8").reshape(
                t.data.shape
            ).copy()
            offset += nbytes
        for buf in model._bn_buffers():
            nbytes = buf.size * 8
            if offset + nbytes > len(raw):
                raise DataError(f"{path}: truncated batch-norm state")
            buf[...] = np.frombuffer(raw[offset:offset + nbytes], dtype="<f8").reshape(buf.shape)
            offset += nbytes
        if offset != len(raw):
            raise DataError(f"{path}: {len(raw) - offset} trailing bytes")
        return model


def build_network(config: NetworkConfig, seed: int = 0) -> Model:
    """Construct a model with freshly initialized parameters."""
    return Model(config, seed=seed)

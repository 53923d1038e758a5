"""Convolutional front-end, 1x1-conv bridge, and the Phase-1 feature model.

The stem is a plain conv/swish downsampling stack standing in for a
pretrained EfficientNetV2-S backbone; the bridge maps its feature maps to a
3-channel square image for the patch encoder via exactly three 1x1
convolutions and a bilinear resize.  The head turns the encoder's class
token into the exported 256-wide feature vector and 3-class logits.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigurationError
from .tensor import Tensor
from .vit import VitEncoder, ViTConfig

log = logging.getLogger(__name__)

FEATURE_DIM = 256
NUM_CLASSES = 3


@dataclass(frozen=True)
class StemConfig:
    channels: tuple[int, ...] = (16, 32, 48)
    strides: tuple[int, ...] = (2, 2, 2)
    kernel: int = 3
    bridge_channels: tuple[int, int, int] = (24, 12, 3)
    bridge_side: int = 64
    feature_dim: int = FEATURE_DIM
    num_classes: int = NUM_CLASSES

    def __post_init__(self):
        if len(self.channels) != len(self.strides) or not self.channels:
            raise ConfigurationError("channels and strides must align and be non-empty")
        if len(self.bridge_channels) != 3:
            raise ConfigurationError("the bridge uses exactly three 1x1 convolutions")
        if self.bridge_channels[-1] != 3:
            raise ConfigurationError("bridge must end at 3 channels")
        if any(a < b for a, b in zip(self.bridge_channels, self.bridge_channels[1:])):
            raise ConfigurationError(
                f"bridge channel counts must be non-increasing, got {self.bridge_channels}")
        if self.feature_dim != FEATURE_DIM:
            raise ConfigurationError(f"feature width is fixed at {FEATURE_DIM}")
        if self.num_classes != NUM_CLASSES:
            raise ConfigurationError(f"class count is fixed at {NUM_CLASSES}")


def _conv_bias(x: Tensor, kernels: Tensor, bias: Tensor, stride: int,
               padding: int) -> Tensor:
    out = T.conv2d(x, kernels, stride=stride, padding=padding)
    return out + T.reshape(bias, (-1, 1, 1))


class ConvStem:
    """Stacked stride-s conv + swish stages over a [3,H,W] image."""

    def __init__(self, cfg: StemConfig, rng: np.random.Generator,
                 trainable: bool = True):
        self.cfg = cfg
        self.stages: list[tuple[Tensor, Tensor]] = []
        c_in = 3
        k = cfg.kernel
        for c_out in cfg.channels:
            std = np.sqrt(2.0 / (c_in * k * k))
            kernels = Tensor(rng.normal(0.0, std, (c_out, c_in, k, k)),
                             requires_grad=trainable)
            bias = Tensor(np.zeros(c_out), requires_grad=trainable)
            self.stages.append((kernels, bias))
            c_in = c_out

    @property
    def out_channels(self) -> int:
        return self.cfg.channels[-1]

    def forward(self, image: Tensor) -> Tensor:
        if image.ndim != 3 or image.shape[0] != 3:
            raise ConfigurationError(f"stem expects a [3,H,W] image, got {image.shape}")
        if min(image.shape[1:]) < 32:
            raise ConfigurationError(
                f"input {image.shape[1]}x{image.shape[2]} too small for the"
                f" stride plan {self.cfg.strides}")
        x = image
        pad = self.cfg.kernel // 2
        for (kernels, bias), stride in zip(self.stages, self.cfg.strides):
            x = T.swish(_conv_bias(x, kernels, bias, stride, pad))
        return x

    def named(self, prefix: str = "stem") -> dict[str, Tensor]:
        out = {}
        for i, (kernels, bias) in enumerate(self.stages):
            out[f"{prefix}.stage{i}.kernels"] = kernels
            out[f"{prefix}.stage{i}.bias"] = bias
        return out


class Bridge:
    """Three 1x1 convolutions down to 3 channels, then resize to S x S."""

    def __init__(self, cfg: StemConfig, in_channels: int, rng: np.random.Generator,
                 trainable: bool = True):
        self.cfg = cfg
        self.convs: list[tuple[Tensor, Tensor]] = []
        c_in = in_channels
        for c_out in cfg.bridge_channels:
            std = np.sqrt(2.0 / c_in)
            kernels = Tensor(rng.normal(0.0, std, (c_out, c_in, 1, 1)),
                             requires_grad=trainable)
            bias = Tensor(np.zeros(c_out), requires_grad=trainable)
            self.convs.append((kernels, bias))
            c_in = c_out
        log.debug("bridge channel chain: %s -> %s", in_channels,
                  " -> ".join(str(c) for c in cfg.bridge_channels))

    @property
    def channel_chain(self) -> tuple[int, ...]:
        return tuple(k.shape[0] for k, _ in self.convs)

    def forward(self, features: Tensor) -> Tensor:
        x = features
        for kernels, bias in self.convs:
            x = _conv_bias(x, kernels, bias, stride=1, padding=0)
        side = self.cfg.bridge_side
        return T.bilinear_resize(x, (side, side))

    def named(self, prefix: str = "bridge") -> dict[str, Tensor]:
        out = {}
        for i, (kernels, bias) in enumerate(self.convs):
            out[f"{prefix}.conv{i}.kernels"] = kernels
            out[f"{prefix}.conv{i}.bias"] = bias
        return out


class FeatureHead:
    """Class token -> 256-wide feature vector -> 3-class logits."""

    def __init__(self, token_dim: int, rng: np.random.Generator):
        std = np.sqrt(1.0 / token_dim)
        self.w1 = Tensor(rng.normal(0.0, std, (FEATURE_DIM, token_dim)),
                         requires_grad=True)
        self.b1 = Tensor(np.zeros(FEATURE_DIM), requires_grad=True)
        self.w2 = Tensor(rng.normal(0.0, np.sqrt(1.0 / FEATURE_DIM),
                                    (NUM_CLASSES, FEATURE_DIM)), requires_grad=True)
        self.b2 = Tensor(np.zeros(NUM_CLASSES), requires_grad=True)

    def forward(self, encoder_out: Tensor) -> tuple[Tensor, Tensor]:
        cls_row = encoder_out[0:1]
        features = T.linear(cls_row, self.w1, self.b1)
        logits = T.linear(features, self.w2, self.b2)
        return T.reshape(features, (-1,)), T.reshape(logits, (-1,))

    def named(self, prefix: str = "head") -> dict[str, Tensor]:
        return {f"{prefix}.w1": self.w1, f"{prefix}.b1": self.b1,
                f"{prefix}.w2": self.w2, f"{prefix}.b2": self.b2}


def feature_head(encoder_out, head: FeatureHead) -> tuple[Tensor, Tensor]:
    out = encoder_out if isinstance(encoder_out, Tensor) else Tensor(encoder_out)
    return head.forward(out)


class ExtractorModel:
    """Full Phase-1 model: stem -> bridge -> patch encoder -> feature head."""

    def __init__(self, stem_cfg: StemConfig | None = None,
                 vit_cfg: ViTConfig | None = None, seed: int = 0,
                 freeze_backbone: bool = False):
        self.stem_cfg = stem_cfg or StemConfig()
        self.vit_cfg = vit_cfg or ViTConfig(image_side=self.stem_cfg.bridge_side)
        if self.vit_cfg.image_side != self.stem_cfg.bridge_side:
            raise ConfigurationError(
                f"bridge side {self.stem_cfg.bridge_side} must match encoder"
                f" input side {self.vit_cfg.image_side}")
        self.seed = seed
        self.freeze_backbone = freeze_backbone
        trainable = not freeze_backbone
        rngs = [np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                             spawn_key=(i,)))
                for i in range(4)]
        self.stem = ConvStem(self.stem_cfg, rngs[0], trainable=trainable)
        self.bridge = Bridge(self.stem_cfg, self.stem.out_channels, rngs[1],
                             trainable=trainable)
        self.encoder = VitEncoder(self.vit_cfg, seed=seed)
        self.head = FeatureHead(self.vit_cfg.dim, rngs[3])

    def forward(self, image) -> tuple[Tensor, Tensor]:
        image = image if isinstance(image, Tensor) else Tensor(image)
        maps = self.stem.forward(image)
        bridged = self.bridge.forward(maps)
        tokens = self.encoder.forward(bridged)
        return self.head.forward(tokens)

    def extract(self, image) -> np.ndarray:
        """Inference-mode 256-vector; no tape, deterministic."""
        features, _ = self.forward(image)
        return features.data.copy()

    def named_parameters(self) -> dict[str, Tensor]:
        params = self.stem.named()
        params.update(self.bridge.named())
        params.update({f"encoder.{k}": v
                       for k, v in self.encoder.named_parameters().items()})
        params.update(self.head.named())
        return params

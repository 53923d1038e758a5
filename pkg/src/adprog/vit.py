"""Frozen transformer encoder over patch tokens with low-rank adapters.

The encoder weights (patch projection, positional embeddings, attention and
MLP matrices, layer norms) are seeded random stand-ins for a pretrained
checkpoint and never receive gradients.  The only trainable parameters are
the rank-r adapter pairs attached to the key, query, and value projections
of every block: each projection computes x W^T + alpha (x A^T) B^T with B
zero-initialised, so a fresh adapter contributes exactly nothing.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, InputError
from .tensor import Tensor

LN_EPS = 1e-5


@dataclass(frozen=True)
class ViTConfig:
    """Architecture knobs; the default is the desk-scale configuration."""

    blocks: int = 2
    dim: int = 64
    heads: int = 4
    patch: int = 16
    image_side: int = 64
    rank: int = 8
    lora_alpha: float = 1.0
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.blocks < 1:
            raise ConfigurationError("need at least one encoder block")
        if self.dim % self.heads != 0:
            raise ConfigurationError(
                f"dim {self.dim} not divisible by heads {self.heads}")
        if self.image_side % self.patch != 0:
            raise ConfigurationError(
                f"image side {self.image_side} not divisible by patch {self.patch}")

    @property
    def tokens(self) -> int:
        return (self.image_side // self.patch) ** 2 + 1

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ViTConfig":
        return cls(**json.loads(text))


class LoraAdapter:
    """Trainable low-rank pair (A, B) attached to one frozen projection."""

    def __init__(self, d_in: int, d_out: int, rank: int, rng: np.random.Generator,
                 init_std: float = 0.02):
        if rank < 1 or rank >= min(d_in, d_out):
            raise ConfigurationError(
                f"rank {rank} is not low-rank for a {d_in}x{d_out} projection")
        self.rank = rank
        self.a = Tensor(rng.normal(0.0, init_std, (rank, d_in)), requires_grad=True)
        self.b = Tensor(np.zeros((d_out, rank)), requires_grad=True)

    @property
    def trainable_count(self) -> int:
        return self.a.size + self.b.size

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.A": self.a, f"{prefix}.B": self.b}


def lora_linear(x: Tensor, frozen_w: Tensor, adapter: LoraAdapter | None,
                scale: float = 1.0) -> Tensor:
    """x W^T plus the scaled low-rank correction; None adapter = plain projection."""
    base = T.matmul(x, T.transpose(frozen_w))
    if adapter is None:
        return base
    low = T.matmul(T.matmul(x, T.transpose(adapter.a)), T.transpose(adapter.b))
    return base + scale * low


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    mu = x.mean(axis=1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    return centered / T.sqrt(var + LN_EPS) * gamma + beta


class PatchEmbedding:
    """Linear projection of flattened patches plus class token and positions."""

    def __init__(self, cfg: ViTConfig, rng: np.random.Generator):
        d, p = cfg.dim, cfg.patch
        n = cfg.tokens - 1
        self.patch = p
        self.proj = Tensor(rng.normal(0.0, 0.02, (d, 3 * p * p)))
        self.pos = Tensor(rng.normal(0.0, 0.02, (n + 1, d)))
        self.cls = Tensor(rng.normal(0.0, 0.02, d))

    def named(self, prefix: str = "embed") -> dict[str, Tensor]:
        return {f"{prefix}.proj": self.proj, f"{prefix}.pos": self.pos,
                f"{prefix}.cls": self.cls}


def patchify(image: Tensor, emb: PatchEmbedding) -> Tensor:
    """[3,S,S] image to [(N+1), d] tokens: class token first, positions added."""
    image = image if isinstance(image, Tensor) else Tensor(image)
    c, s, s2 = image.shape
    p = emb.patch
    if c != 3 or s != s2 or s % p != 0:
        raise ConfigurationError(
            f"patchify needs a square 3-channel image with side divisible by"
            f" {p}, got {image.shape}")
    g = s // p
    # [3,S,S] -> [g,g,3,p,p] -> [N, 3*p*p], rows ordered by patch position
    x = T.reshape(image, (3, g, p, g, p))
    x = T.permute(x, (1, 3, 0, 2, 4))
    x = T.reshape(x, (g * g, 3 * p * p))
    tokens = T.matmul(x, T.transpose(emb.proj))
    cls_row = T.reshape(emb.cls, (1, -1))
    return T.concat([cls_row, tokens], axis=0) + emb.pos


class EncoderBlock:
    """Pre-norm block: x + Attn(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, cfg: ViTConfig, rng: np.random.Generator):
        d, hidden = cfg.dim, cfg.dim * cfg.mlp_ratio
        self.heads = cfg.heads
        self.lora_scale = cfg.lora_alpha
        frozen = lambda *shape: Tensor(rng.normal(0.0, 0.02, shape))
        self.w_q, self.w_k, self.w_v, self.w_o = (frozen(d, d) for _ in range(4))
        self.adapter_q = LoraAdapter(d, d, cfg.rank, rng)
        self.adapter_k = LoraAdapter(d, d, cfg.rank, rng)
        self.adapter_v = LoraAdapter(d, d, cfg.rank, rng)
        self.mlp_w1, self.mlp_b1 = frozen(hidden, d), Tensor(np.zeros(hidden))
        self.mlp_w2, self.mlp_b2 = frozen(d, hidden), Tensor(np.zeros(d))
        self.ln1_gamma, self.ln1_beta = Tensor(np.ones(d)), Tensor(np.zeros(d))
        self.ln2_gamma, self.ln2_beta = Tensor(np.ones(d)), Tensor(np.zeros(d))

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for key in ("w_q", "w_k", "w_v", "w_o", "mlp_w1", "mlp_b1", "mlp_w2",
                    "mlp_b2", "ln1_gamma", "ln1_beta", "ln2_gamma", "ln2_beta"):
            out[f"{prefix}.{key}"] = getattr(self, key)
        for name in ("q", "k", "v"):
            out.update(getattr(self, f"adapter_{name}").named(f"{prefix}.adapter_{name}"))
        return out


def multihead_attention_lora(tokens: Tensor, block: EncoderBlock,
                             return_weights: bool = False):
    """Scaled dot-product attention with LoRA-adapted Q/K/V, frozen output proj."""
    tokens = tokens if isinstance(tokens, Tensor) else Tensor(tokens)
    if tokens.shape[0] < 1:
        raise InputError("attention requires at least one token")
    d = tokens.shape[1]
    dh = d // block.heads
    q = lora_linear(tokens, block.w_q, block.adapter_q, block.lora_scale)
    k = lora_linear(tokens, block.w_k, block.adapter_k, block.lora_scale)
    v = lora_linear(tokens, block.w_v, block.adapter_v, block.lora_scale)
    ctx_heads = []
    weights = []
    scale = dh ** -0.5
    for h in range(block.heads):
        cols = slice(h * dh, (h + 1) * dh)
        qh, kh, vh = q[:, cols], k[:, cols], v[:, cols]
        attn = T.softmax(T.matmul(qh, T.transpose(kh)) * scale, axis=1)
        if return_weights:
            weights.append(attn.data.copy())
        ctx_heads.append(T.matmul(attn, vh))
    out = T.matmul(T.concat(ctx_heads, axis=1), T.transpose(block.w_o))
    if return_weights:
        return out, weights
    return out


def _mlp(x: Tensor, block: EncoderBlock) -> Tensor:
    hidden = T.swish(T.linear(x, block.mlp_w1, block.mlp_b1))
    return T.linear(hidden, block.mlp_w2, block.mlp_b2)


def encoder_forward(tokens: Tensor, blocks: list[EncoderBlock]) -> Tensor:
    if not blocks:
        raise ConfigurationError("encoder needs at least one block")
    x = tokens if isinstance(tokens, Tensor) else Tensor(tokens)
    for block in blocks:
        x = x + multihead_attention_lora(
            layer_norm(x, block.ln1_gamma, block.ln1_beta), block)
        x = x + _mlp(layer_norm(x, block.ln2_gamma, block.ln2_beta), block)
    return x


class VitEncoder:
    """Patch embedding plus a stack of frozen, LoRA-adapted encoder blocks."""

    def __init__(self, cfg: ViTConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                           spawn_key=(1,)))
        self.embed = PatchEmbedding(cfg, rng)
        self.blocks = [EncoderBlock(cfg, rng) for _ in range(cfg.blocks)]

    def forward(self, image) -> Tensor:
        return encoder_forward(patchify(image, self.embed), self.blocks)

    def named_parameters(self) -> dict[str, Tensor]:
        params = self.embed.named()
        for i, block in enumerate(self.blocks):
            params.update(block.named(f"block{i}"))
        return params


def count_trainable_params(model) -> int:
    """Number of scalar parameters with requires_grad set."""
    params = model if isinstance(model, dict) else model.named_parameters()
    return sum(t.size for t in params.values() if t.requires_grad)


def trainable_param_groups(model) -> dict[str, int]:
    """Trainable counts grouped by the name segment before the first dot."""
    params = model if isinstance(model, dict) else model.named_parameters()
    groups: dict[str, int] = {}
    for name, t in params.items():
        if not t.requires_grad:
            continue
        group = name.split(".", 1)[0]
        groups[group] = groups.get(group, 0) + t.size
    return groups

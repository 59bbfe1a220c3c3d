"""Desk-scale pre-norm ViT trunk with read-only intermediate-layer taps.

The trunk is deliberately small (default 8 blocks, width 32, 16 patches)
so finite-difference checks over the downstream fusion/projection head
run in seconds.  Trunk parameters are frozen by design: only the fusion
combiner and projector in :mod:`beecurate.fusion` are trainable, which is
why no backward pass exists here.

Blocks are conventional pre-norm transformer blocks: multi-head self
attention and a 2-layer feedforward with expansion 4 and GELU, each on a
residual branch.  A "tap" records the output of a block (after its
residual add) without altering the computation; tapping block L yields
the final feature map itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

LN_EPS = 1e-5
FF_EXPANSION = 4

# Depth-fraction aliases for tap layers, resolved against the trunk depth.
LAYER_ALIASES = ("shallow", "middle", "deep")


@dataclass(frozen=True)
class TrunkConfig:
    depth: int = 8
    hidden_dim: int = 32
    num_patches: int = 16
    heads: int = 4
    seed: int = 0
    input_dim: int | None = None  # defaults to hidden_dim

    def __post_init__(self) -> None:
        if self.depth < 2:
            raise ValueError(f"depth must be >= 2, got {self.depth}")
        if self.hidden_dim < 4:
            raise ValueError(f"hidden_dim must be >= 4, got {self.hidden_dim}")
        if self.num_patches < 1:
            raise ValueError(f"num_patches must be >= 1, got {self.num_patches}")
        if self.heads < 1 or self.hidden_dim % self.heads != 0:
            raise ValueError(
                f"heads must divide hidden_dim, got heads={self.heads}, "
                f"hidden_dim={self.hidden_dim}"
            )

    @property
    def embed_input_dim(self) -> int:
        return self.hidden_dim if self.input_dim is None else self.input_dim

    def resolve_alias(self, name: str) -> int:
        """Map shallow/middle/deep to block indices at L/4, L/2, 3L/4."""
        quarters = {"shallow": 1, "middle": 2, "deep": 3}
        if name not in quarters:
            raise ValueError(f"unknown layer alias {name!r}; use one of {LAYER_ALIASES}")
        return max(1, math.ceil(quarters[name] * self.depth / 4))


@dataclass(frozen=True)
class BlockParams:
    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass(frozen=True)
class TrunkParams:
    config: TrunkConfig
    embed_w: np.ndarray
    embed_b: np.ndarray
    blocks: tuple[BlockParams, ...]

    def num_parameters(self) -> int:
        total = self.embed_w.size + self.embed_b.size
        for block in self.blocks:
            total += sum(
                getattr(block, name).size for name in BlockParams.__dataclass_fields__
            )
        return int(total)


@dataclass(frozen=True)
class TapFeatures:
    """Per-tap block outputs plus the final feature map, all N x d."""

    taps: dict[int, np.ndarray]
    final: np.ndarray


def init_trunk(config: TrunkConfig) -> TrunkParams:
    """Deterministic parameters: uniform(-1/sqrt(d), 1/sqrt(d)) weights,
    zero biases, identity layer norms.  Same seed, same bytes.
    """
    d = config.hidden_dim
    rng = np.random.default_rng(config.seed)
    scale = 1.0 / math.sqrt(d)

    def weight(rows: int, cols: int) -> np.ndarray:
        return rng.uniform(-scale, scale, size=(rows, cols))

    embed_w = weight(config.embed_input_dim, d)
    embed_b = np.zeros(d)
    blocks = []
    for _ in range(config.depth):
        blocks.append(
            BlockParams(
                ln1_gamma=np.ones(d),
                ln1_beta=np.zeros(d),
                wq=weight(d, d),
                bq=np.zeros(d),
                wk=weight(d, d),
                bk=np.zeros(d),
                wv=weight(d, d),
                bv=np.zeros(d),
                wo=weight(d, d),
                bo=np.zeros(d),
                ln2_gamma=np.ones(d),
                ln2_beta=np.zeros(d),
                w1=weight(d, FF_EXPANSION * d),
                b1=np.zeros(FF_EXPANSION * d),
                w2=weight(FF_EXPANSION * d, d),
                b2=np.zeros(d),
            )
        )
    return TrunkParams(config=config, embed_w=embed_w, embed_b=embed_b, blocks=tuple(blocks))


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + LN_EPS) * gamma + beta


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact (erf-based) GELU."""
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _attention(x: np.ndarray, block: BlockParams, heads: int) -> np.ndarray:
    n, d = x.shape
    dh = d // heads
    q = (x @ block.wq + block.bq).reshape(n, heads, dh)
    k = (x @ block.wk + block.bk).reshape(n, heads, dh)
    v = (x @ block.wv + block.bv).reshape(n, heads, dh)
    # (heads, n, n) attention over patches, no masking.
    scores = np.einsum("nhd,mhd->hnm", q, k) / math.sqrt(dh)
    scores -= scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=-1, keepdims=True)
    mixed = np.einsum("hnm,mhd->nhd", weights, v).reshape(n, d)
    return mixed @ block.wo + block.bo


def _block_forward(x: np.ndarray, block: BlockParams, heads: int) -> np.ndarray:
    x = x + _attention(layer_norm(x, block.ln1_gamma, block.ln1_beta), block, heads)
    h = layer_norm(x, block.ln2_gamma, block.ln2_beta)
    return x + gelu(h @ block.w1 + block.b1) @ block.w2 + block.b2


def embed_patches(params: TrunkParams, patches: np.ndarray) -> np.ndarray:
    patches = np.asarray(patches, dtype=np.float64)
    expected = (params.config.num_patches, params.config.embed_input_dim)
    if patches.shape != expected:
        raise ValueError(f"patch matrix must have shape {expected}, got {patches.shape}")
    return patches @ params.embed_w + params.embed_b


def forward_with_taps(
    params: TrunkParams, patches: np.ndarray, tap_set: set[int] | frozenset[int]
) -> TapFeatures:
    """Run all blocks, recording the output of every tapped block.

    Tap indices are 1-based block numbers in [1, depth].  Taps are
    read-only: the final feature map is identical for any tap set, and
    tapping the last block returns the final map itself.
    """
    depth = params.config.depth
    for k in tap_set:
        if not 1 <= k <= depth:
            raise ValueError(f"tap index {k} out of range [1, {depth}]")
    x = embed_patches(params, patches)
    taps: dict[int, np.ndarray] = {}
    for i, block in enumerate(params.blocks, start=1):
        x = _block_forward(x, block, params.config.heads)
        if i in tap_set:
            taps[i] = x
    return TapFeatures(taps=taps, final=x)

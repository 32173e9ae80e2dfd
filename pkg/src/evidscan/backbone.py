"""Selective-scan encoder over 2D feature grids.

Images are cut into non-overlapping patches, linearly embedded, passed
through a stack of blocks (pre-norm -> four-direction selective scan ->
gated residual fusion) and average-pooled to a feature vector.

Each scan direction runs the per-channel recurrence

    h_t = a_t * h_{t-1} + b * x_t,    y_t = c * h_t + d * x_t

with input-dependent decay a_t = sigmoid(W_a x_t + b_a) and h_0 = 0; the
four raster directions (rows forward/backward, columns forward/backward)
are averaged. All functions accept a single sample or a leading batch dim.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .rng import Rng
from .tensor import Tensor

__all__ = [
    "BackboneConfig",
    "ScanParams",
    "SCALE_PRESETS",
    "init_backbone",
    "patch_embed",
    "pre_norm",
    "directional_scan",
    "ss2d_lite",
    "gated_fuse",
    "global_pool",
    "encode",
]

# scale tag -> (embed_dim, num_blocks)
SCALE_PRESETS = {"T": (64, 2), "S": (96, 3), "B": (128, 4)}

_NORM_EPS = 1e-5


@dataclass
class BackboneConfig:
    image_size: int
    patch_size: int = 4
    embed_dim: int = 64
    num_blocks: int = 2
    state_dim: int = 1
    in_channels: int = 3
    scale: str = "T"

    @classmethod
    def from_scale(cls, scale: str, image_size: int, patch_size: int = 4, in_channels: int = 3) -> "BackboneConfig":
        if scale not in SCALE_PRESETS:
            raise ValueError(f"unknown scale tag {scale!r}, expected one of {sorted(SCALE_PRESETS)}")
        d, l = SCALE_PRESETS[scale]
        return cls(image_size=image_size, patch_size=patch_size, embed_dim=d, num_blocks=l,
                   in_channels=in_channels, scale=scale)

    def validate(self) -> None:
        if self.image_size % self.patch_size != 0:
            raise ValueError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.embed_dim < 1 or self.num_blocks < 0:
            raise ValueError("embed_dim must be >= 1 and num_blocks >= 0")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size


@dataclass
class ScanParams:
    """One direction's recurrence parameters."""

    W_a: Tensor  # [D, D] decay projection
    b_a: Tensor  # [D]
    b: Tensor    # [D] input gate
    c: Tensor    # [D] output mix
    d: Tensor    # [D] skip


def _fanin_uniform(rng: Rng, shape, fan_in: int, dtype) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, shape).astype(dtype), requires_grad=True)


def init_backbone(cfg: BackboneConfig, rng: Rng, dtype=np.float32) -> dict[str, Tensor]:
    cfg.validate()
    D = cfg.embed_dim
    p2c = cfg.patch_size * cfg.patch_size * cfg.in_channels
    params: dict[str, Tensor] = {
        "patch.W": _fanin_uniform(rng, (p2c, D), p2c, dtype),
        "patch.b": Tensor(np.zeros(D, dtype=dtype), requires_grad=True),
    }
    for l in range(cfg.num_blocks):
        params[f"block{l}.norm.scale"] = Tensor(np.ones(D, dtype=dtype), requires_grad=True)
        params[f"block{l}.norm.offset"] = Tensor(np.zeros(D, dtype=dtype), requires_grad=True)
        for d in range(4):
            params[f"block{l}.scan{d}.W_a"] = _fanin_uniform(rng, (D, D), D, dtype)
            params[f"block{l}.scan{d}.b_a"] = Tensor(np.zeros(D, dtype=dtype), requires_grad=True)
            params[f"block{l}.scan{d}.b"] = Tensor(np.ones(D, dtype=dtype), requires_grad=True)
            params[f"block{l}.scan{d}.c"] = Tensor(np.full(D, 0.5, dtype=dtype), requires_grad=True)
            params[f"block{l}.scan{d}.d"] = Tensor(np.ones(D, dtype=dtype), requires_grad=True)
        params[f"block{l}.gate.W"] = _fanin_uniform(rng, (2 * D, D), 2 * D, dtype)
        params[f"block{l}.gate.b"] = Tensor(np.full(D, -2.0, dtype=dtype), requires_grad=True)
    return params


def scan_params(params: dict[str, Tensor], block: int, direction: int) -> ScanParams:
    p = f"block{block}.scan{direction}"
    return ScanParams(
        W_a=params[f"{p}.W_a"], b_a=params[f"{p}.b_a"],
        b=params[f"{p}.b"], c=params[f"{p}.c"], d=params[f"{p}.d"],
    )


def _affine_lastdim(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x[..., Din] @ w[Din, Dout] + b, flattening leading dims for matmul."""
    lead = x.shape[:-1]
    flat = T.reshape(x, (-1, x.shape[-1]))
    y = T.matmul(flat, w) + b
    return T.reshape(y, lead + (w.shape[1],))


def patch_embed(image: Tensor, cfg: BackboneConfig, params: dict[str, Tensor]) -> Tensor:
    """[C,H,W] (or [B,C,H,W]) -> [H',W',D] (or [B,H',W',D])."""
    cfg.validate()
    single = image.ndim == 3
    x = T.reshape(image, (1,) + image.shape) if single else image
    B, C, H, W = x.shape
    if C != cfg.in_channels or H != cfg.image_size or W != cfg.image_size:
        raise T.ShapeError(f"image shape {x.shape[1:]} does not match config "
                           f"({cfg.in_channels},{cfg.image_size},{cfg.image_size})")
    p = cfg.patch_size
    g = cfg.grid
    x = T.reshape(x, (B, C, g, p, g, p))
    x = T.transpose(x, (0, 2, 4, 1, 3, 5))          # [B, g, g, C, p, p]
    x = T.reshape(x, (B, g, g, C * p * p))
    out = _affine_lastdim(x, params["patch.W"], params["patch.b"])
    return T.reshape(out, out.shape[1:]) if single else out


def pre_norm(x: Tensor, scale: Tensor, offset: Tensor) -> Tensor:
    """Per-position normalization over the channel axis with learned affine."""
    m = T.reduce("mean", x, axes=-1, keepdims=True)
    centered = x - m
    var = T.reduce("mean", centered * centered, axes=-1, keepdims=True)
    return centered / T.sqrt(var + _NORM_EPS) * scale + offset


def _scan_core(x: Tensor, a: Tensor, b: Tensor, c: Tensor, d: Tensor) -> Tensor:
    """Run the recurrence along axis -2 of x given precomputed decay a."""
    steps = x.shape[-2]
    h = None
    ys = []
    for t in range(steps):
        x_t = T.index_axis(x, t, x.ndim - 2)
        a_t = T.index_axis(a, t, a.ndim - 2)
        h = b * x_t if h is None else a_t * h + b * x_t
        ys.append(c * h + d * x_t)
    return T.stack(ys, axis=x.ndim - 2)


def directional_scan(seq: Tensor, p: ScanParams, direction: str = "forward") -> Tensor:
    """Selective recurrence over a [T,D] or [B,T,D] sequence."""
    if direction not in ("forward", "backward"):
        raise ValueError(f"unknown direction {direction!r}")
    x = seq if direction == "forward" else T.flip(seq, axis=seq.ndim - 2)
    a = T.sigmoid(_affine_lastdim(x, p.W_a, p.b_a))
    y = _scan_core(x, a, p.b, p.c, p.d)
    return y if direction == "forward" else T.flip(y, axis=seq.ndim - 2)


def ss2d_lite(X: Tensor, params: dict[str, Tensor], block: int = 0) -> Tensor:
    """Four-direction scan over a [H,W,D] or [B,H,W,D] grid, averaged.

    Directions: row-major forward/backward, column-major forward/backward.
    All four run fused in one recurrence loop; equivalent to four independent
    ``directional_scan`` calls.
    """
    single = X.ndim == 3
    x = T.reshape(X, (1,) + X.shape) if single else X
    B, H, W, D = x.shape
    rows = T.reshape(x, (B, H * W, D))
    cols = T.reshape(T.transpose(x, (0, 2, 1, 3)), (B, H * W, D))
    seqs = T.stack([rows, T.flip(rows, 1), cols, T.flip(cols, 1)], axis=0)  # [4,B,T,D]

    ps = [scan_params(params, block, d) for d in range(4)]
    Wa = T.stack([p.W_a for p in ps], axis=0)                       # [4,D,D]
    ba = T.reshape(T.stack([p.b_a for p in ps], axis=0), (4, 1, 1, D))
    # gain vectors broadcast against per-step [4,B,D] slices
    bg = T.reshape(T.stack([p.b for p in ps], axis=0), (4, 1, D))
    cg = T.reshape(T.stack([p.c for p in ps], axis=0), (4, 1, D))
    dg = T.reshape(T.stack([p.d for p in ps], axis=0), (4, 1, D))

    pre = T.reshape(T.bmm(T.reshape(seqs, (4, B * H * W, D)), Wa), (4, B, H * W, D))
    a = T.sigmoid(pre + ba)
    y = _scan_core(seqs, a, bg, cg, dg)                             # [4,B,T,D]

    y0 = T.index_axis(y, 0, 0)
    y1 = T.flip(T.index_axis(y, 1, 0), 1)
    y2 = T.transpose(T.reshape(T.index_axis(y, 2, 0), (B, W, H, D)), (0, 2, 1, 3))
    y3 = T.transpose(T.reshape(T.flip(T.index_axis(y, 3, 0), 1), (B, W, H, D)), (0, 2, 1, 3))
    out = (T.reshape(y0, (B, H, W, D)) + T.reshape(y1, (B, H, W, D)) + y2 + y3) * 0.25
    return T.reshape(out, out.shape[1:]) if single else out


def gated_fuse(X: Tensor, Y: Tensor, params: dict[str, Tensor], block: int = 0) -> Tensor:
    """Residual fusion: out = X + g * (Y - X), g = sigmoid(W_g [X;Y] + b_g)."""
    if X.shape != Y.shape:
        raise T.ShapeError(f"gated_fuse operands differ: {X.shape} vs {Y.shape}")
    g = T.sigmoid(_affine_lastdim(T.concat([X, Y], axis=X.ndim - 1),
                                  params[f"block{block}.gate.W"], params[f"block{block}.gate.b"]))
    return X + g * (Y - X)


def global_pool(X: Tensor) -> Tensor:
    """[H,W,D] -> [D] (or [B,H,W,D] -> [B,D]) channel-wise spatial mean."""
    if X.ndim == 3:
        return T.reduce("mean", X, axes=(0, 1))
    return T.reduce("mean", X, axes=(1, 2))


def encode_map(image: Tensor, cfg: BackboneConfig, params: dict[str, Tensor]) -> Tensor:
    """Run patch embedding and all blocks; return the final feature grid."""
    x = patch_embed(image, cfg, params)
    for l in range(cfg.num_blocks):
        n = pre_norm(x, params[f"block{l}.norm.scale"], params[f"block{l}.norm.offset"])
        y = ss2d_lite(n, params, block=l)
        x = gated_fuse(x, y, params, block=l)
    return x


def encode(image: Tensor, cfg: BackboneConfig, params: dict[str, Tensor]) -> Tensor:
    """Full encoder: patch embed -> blocks -> global average pool."""
    return global_pool(encode_map(image, cfg, params))

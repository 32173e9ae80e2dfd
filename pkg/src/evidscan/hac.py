"""Hyper-adaptive conditioning: per-sample feature modulation.

A two-layer generator maps the pooled feature vector to sample-specific
modulation parameters -- either feature-wise affine factors (film mode,
applied to the feature grid) or low-rank adapter weights (adapter mode,
applied to the pooled vector) -- plus a scalar gate. The modulated features
are blended with the originals through the gate:

    out = X + gate * (modulated - X)

Output heads are zero-initialized, so at initialization the whole module is
an exact identity (scale is parameterized as 1 + delta).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .rng import Rng
from .tensor import Tensor

__all__ = ["HacConfig", "HacState", "init_hac", "generate", "apply_film",
           "apply_adapter", "conditioned_update", "hac_forward"]

_ALLOWED_FEAT_DIMS = (32, 64, 96, 128)
_ALLOWED_RATIOS = (1, 2, 4, 8)


@dataclass
class HacConfig:
    enabled: bool = True
    mode: str = "film"            # film | adapter
    had_feat_dim: int = 64
    r: int = 4
    gate_bias_init: float = -2.0

    def validate(self, embed_dim: int) -> None:
        if self.mode not in ("film", "adapter"):
            raise ValueError(f"unknown hac mode {self.mode!r}")
        if self.had_feat_dim not in _ALLOWED_FEAT_DIMS:
            raise ValueError(f"had_feat_dim must be one of {_ALLOWED_FEAT_DIMS}")
        if self.r not in _ALLOWED_RATIOS:
            raise ValueError(f"reduction ratio must be one of {_ALLOWED_RATIOS}")
        if embed_dim % self.r != 0:
            raise ValueError(f"embed_dim {embed_dim} not divisible by reduction ratio {self.r}")

    def bottleneck(self, embed_dim: int) -> int:
        return embed_dim // self.r


@dataclass
class HacState:
    """Generated conditioning parameters for one sample (or a batch)."""

    gate: Tensor                       # [..., 1] in (0,1)
    gamma: Optional[Tensor] = None     # film: [..., D]
    beta: Optional[Tensor] = None      # film: [..., D]
    adapter: dict[str, Tensor] = field(default_factory=dict)  # W_down/b_down/W_up/b_up


def init_hac(cfg: HacConfig, embed_dim: int, rng: Rng, dtype=np.float32) -> dict[str, Tensor]:
    cfg.validate(embed_dim)
    D, F = embed_dim, cfg.had_feat_dim
    bound = 1.0 / np.sqrt(D)
    params: dict[str, Tensor] = {
        "gen.W1": Tensor(rng.uniform(-bound, bound, (D, F)).astype(dtype), requires_grad=True),
        "gen.b1": Tensor(np.zeros(F, dtype=dtype), requires_grad=True),
        "gate.w": Tensor(np.zeros((D, 1), dtype=dtype), requires_grad=True),
        "gate.b": Tensor(np.full(1, cfg.gate_bias_init, dtype=dtype), requires_grad=True),
    }
    if cfg.mode == "film":
        # zero-init so gamma = 1 + 0 and beta = 0 at start
        params["head.dgamma.W"] = Tensor(np.zeros((F, D), dtype=dtype), requires_grad=True)
        params["head.dgamma.b"] = Tensor(np.zeros(D, dtype=dtype), requires_grad=True)
        params["head.beta.W"] = Tensor(np.zeros((F, D), dtype=dtype), requires_grad=True)
        params["head.beta.b"] = Tensor(np.zeros(D, dtype=dtype), requires_grad=True)
    else:
        br = cfg.bottleneck(D)
        for name, size in (("W_down", D * br), ("b_down", br), ("W_up", br * D), ("b_up", D)):
            params[f"head.{name}.W"] = Tensor(np.zeros((F, size), dtype=dtype), requires_grad=True)
            params[f"head.{name}.b"] = Tensor(np.zeros(size, dtype=dtype), requires_grad=True)
    return params


def _gen_hidden(z: Tensor, params: dict[str, Tensor]) -> Tensor:
    return T.tanh(T.matmul(z, params["gen.W1"]) + params["gen.b1"])


def generate(z: Tensor, params: dict[str, Tensor], cfg: HacConfig) -> HacState:
    """Produce per-sample modulation parameters from a [D] or [B,D] feature."""
    single = z.ndim == 1
    zb = T.reshape(z, (1,) + z.shape) if single else z
    B, D = zb.shape
    cfg.validate(D)
    hidden = _gen_hidden(zb, params)
    gate = T.sigmoid(T.matmul(zb, params["gate.w"]) + params["gate.b"])  # [B,1]

    def head(name: str) -> Tensor:
        return T.matmul(hidden, params[f"head.{name}.W"]) + params[f"head.{name}.b"]

    if cfg.mode == "film":
        gamma = head("dgamma") + 1.0
        beta = head("beta")
        if single:
            gamma, beta, gate = (T.reshape(t, t.shape[1:]) for t in (gamma, beta, gate))
        return HacState(gate=gate, gamma=gamma, beta=beta)

    br = cfg.bottleneck(D)
    adapter = {
        "W_down": T.reshape(head("W_down"), (B, D, br)),
        "b_down": T.reshape(head("b_down"), (B, 1, br)),
        "W_up": T.reshape(head("W_up"), (B, br, D)),
        "b_up": T.reshape(head("b_up"), (B, 1, D)),
    }
    if single:
        adapter = {
            "W_down": T.reshape(adapter["W_down"], (D, br)),
            "b_down": T.reshape(adapter["b_down"], (br,)),
            "W_up": T.reshape(adapter["W_up"], (br, D)),
            "b_up": T.reshape(adapter["b_up"], (D,)),
        }
        gate = T.reshape(gate, gate.shape[1:])
    return HacState(gate=gate, adapter=adapter)


def apply_film(X: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """Channel-wise affine gamma * X + beta, broadcast over spatial positions.

    X is channel-last ([H,W,D] or [B,H,W,D]); batched gamma/beta are [B,D]
    and broadcast over the two spatial axes.
    """
    if X.shape[-1] != gamma.shape[-1] or X.shape[-1] != beta.shape[-1]:
        raise T.ShapeError(f"channel mismatch: X {X.shape}, gamma {gamma.shape}, beta {beta.shape}")
    if gamma.ndim == 2 and X.ndim == 4:
        B, D = gamma.shape
        gamma = T.reshape(gamma, (B, 1, 1, D))
        beta = T.reshape(beta, (B, 1, 1, D))
    return X * gamma + beta


def apply_adapter(h: Tensor, adapter: dict[str, Tensor]) -> Tensor:
    """Low-rank residual update: h + W_up^T relu(W_down^T h + b_down) + b_up."""
    single = h.ndim == 1
    if single:
        down = T.relu(T.reshape(T.matmul(T.reshape(h, (1, -1)), adapter["W_down"]), (-1,)) + adapter["b_down"])
        up = T.reshape(T.matmul(T.reshape(down, (1, -1)), adapter["W_up"]), (-1,)) + adapter["b_up"]
        return h + up
    B, D = h.shape
    hb = T.reshape(h, (B, 1, D))
    down = T.relu(T.bmm(hb, adapter["W_down"]) + adapter["b_down"])
    up = T.bmm(down, adapter["W_up"]) + adapter["b_up"]
    return h + T.reshape(up, (B, D))


def conditioned_update(X: Tensor, X_mod: Tensor, gate) -> Tensor:
    """Convex blend X + gate * (X_mod - X); gate in [0,1]."""
    if X.shape != X_mod.shape:
        raise T.ShapeError(f"shape mismatch: {X.shape} vs {X_mod.shape}")
    if not isinstance(gate, Tensor):
        g = float(gate)
        if not 0.0 <= g <= 1.0:
            raise ValueError(f"gate must lie in [0,1], got {g}")
        gate = Tensor(np.asarray(g, dtype=X.dtype))
    elif np.any(gate.data < 0) or np.any(gate.data > 1):
        raise ValueError("gate values must lie in [0,1]")
    g = gate
    if g.ndim == 2 and X.ndim == 4:  # [B,1] gate against [B,H,W,D] map
        g = T.reshape(g, (g.shape[0], 1, 1, 1))
    return X + g * (X_mod - X)


def hac_forward(z: Tensor, X: Tensor, params: dict[str, Tensor], cfg: HacConfig) -> Tensor:
    """generate -> apply -> conditioned_update.

    film mode modulates the feature grid X; adapter mode modulates the pooled
    vector z (X is then ignored and the conditioned vector is returned).
    """
    state = generate(z, params, cfg)
    if cfg.mode == "film":
        modulated = apply_film(X, state.gamma, state.beta)
        return conditioned_update(X, modulated, state.gate)
    modulated = apply_adapter(z, state.adapter)
    return conditioned_update(z, modulated, state.gate)

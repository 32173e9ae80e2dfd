"""Full classifier: encoder -> per-sample conditioning -> evidential head."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import backbone as bb
from . import hac as hc
from . import rap
from .rng import Rng
from .tensor import Tensor

__all__ = ["ModelConfig", "init_model", "forward_evidence", "predict_batch"]


@dataclass
class ModelConfig:
    backbone: bb.BackboneConfig
    hac: hc.HacConfig = field(default_factory=hc.HacConfig)
    num_classes: int = 2

    def validate(self) -> None:
        self.backbone.validate()
        if self.hac.enabled:
            self.hac.validate(self.backbone.embed_dim)
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")


def init_model(cfg: ModelConfig, rng: Rng, dtype=np.float32) -> dict[str, Tensor]:
    """Flat parameter dict; keys are dotted (backbone.*, hac.*, rap.*)."""
    cfg.validate()
    params: dict[str, Tensor] = {}
    params.update({f"backbone.{k}": v for k, v in bb.init_backbone(cfg.backbone, rng.child(1), dtype).items()})
    if cfg.hac.enabled:
        params.update({f"hac.{k}": v for k, v in hc.init_hac(cfg.hac, cfg.backbone.embed_dim, rng.child(2), dtype).items()})
    params.update({f"rap.{k}": v for k, v in rap.init_head(cfg.backbone.embed_dim, cfg.num_classes, rng.child(3), dtype).items()})
    return params


def _sub(params: dict[str, Tensor], prefix: str) -> dict[str, Tensor]:
    cut = len(prefix) + 1
    return {k[cut:]: v for k, v in params.items() if k.startswith(prefix + ".")}


def forward_evidence(images: Tensor, params: dict[str, Tensor], cfg: ModelConfig) -> Tensor:
    """[B,C,H,W] normalized images -> [B,K] evidence."""
    bparams = _sub(params, "backbone")
    fmap = bb.encode_map(images, cfg.backbone, bparams)
    z = bb.global_pool(fmap)
    if cfg.hac.enabled:
        hparams = _sub(params, "hac")
        if cfg.hac.mode == "film":
            feature = bb.global_pool(hc.hac_forward(z, fmap, hparams, cfg.hac))
        else:
            feature = hc.hac_forward(z, fmap, hparams, cfg.hac)
    else:
        feature = z
    return rap.evidence(feature, _sub(params, "rap"))


def predict_batch(images: Tensor, params: dict[str, Tensor], cfg: ModelConfig) -> list[rap.DirichletOutput]:
    ev = forward_evidence(images, params, cfg)
    return [rap.dirichlet_from_evidence(ev.data[i]) for i in range(ev.shape[0])]

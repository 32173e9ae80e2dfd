"""Evidential Dirichlet prediction head and training objective.

The head maps features to nonnegative per-class evidence e = softplus(Wz+b);
concentrations are alpha = e + 1, class probabilities the Dirichlet mean
alpha / sum(alpha). Training minimizes an evidential NLL plus a
KL-to-uniform-Dirichlet regularizer whose coefficient follows a fixed,
annealed, or entropy-adaptive schedule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .rng import Rng
from .special import lgamma_np
from .tensor import Tensor

__all__ = [
    "EdlLossConfig",
    "DirichletOutput",
    "init_head",
    "evidence",
    "dirichlet_from_evidence",
    "kl_to_uniform",
    "edl_nll",
    "adaptive_lambda",
    "edl_loss",
    "uncertainty_summary",
]

NLL_FORMS = ("digamma_ce", "log_marginal", "brier")
SCHEDULES = ("fixed", "anneal", "adaptive")


@dataclass
class EdlLossConfig:
    kl_coef: float = 5e-3
    kl_scale: float = 1.2
    schedule: str = "adaptive"
    anneal_horizon: int = 50
    nll_form: str = "digamma_ce"
    kl_masking: bool = True

    def validate(self) -> None:
        if self.kl_coef < 0:
            raise ValueError("kl_coef must be >= 0")
        if self.kl_scale < 1:
            raise ValueError("kl_scale must be >= 1")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if self.nll_form not in NLL_FORMS:
            raise ValueError(f"nll_form must be one of {NLL_FORMS}")


@dataclass
class DirichletOutput:
    """Per-sample evidential prediction summary (plain numpy, no grads)."""

    e: np.ndarray          # [K] evidence, >= 0
    alpha: np.ndarray      # [K] concentrations, >= 1
    S: float               # total evidence
    p_hat: np.ndarray      # [K] mean probabilities
    entropy: float         # predictive entropy, nats
    label: int             # argmax class, lowest-index tie-break


def init_head(embed_dim: int, num_classes: int, rng: Rng, dtype=np.float32) -> dict[str, Tensor]:
    bound = 1.0 / np.sqrt(embed_dim)
    return {
        "head.W": Tensor(rng.uniform(-bound, bound, (embed_dim, num_classes)).astype(dtype), requires_grad=True),
        "head.b": Tensor(np.zeros(num_classes, dtype=dtype), requires_grad=True),
    }


def evidence(z: Tensor, params: dict[str, Tensor]) -> Tensor:
    """Nonnegative evidence from a [D] or [B,D] feature vector."""
    single = z.ndim == 1
    zb = T.reshape(z, (1, -1)) if single else z
    e = T.softplus(T.matmul(zb, params["head.W"]) + params["head.b"])
    return T.reshape(e, (e.shape[-1],)) if single else e


def dirichlet_from_evidence(e) -> DirichletOutput:
    e = np.asarray(e.data if isinstance(e, Tensor) else e, dtype=np.float64)
    if e.ndim != 1:
        raise ValueError(f"expected a [K] evidence vector, got shape {e.shape}")
    if np.any(e < 0):
        raise ValueError("evidence must be nonnegative")
    alpha = e + 1.0
    S = float(alpha.sum())
    p = alpha / S
    ent = float(-(p * np.log(p)).sum())
    return DirichletOutput(e=e, alpha=alpha, S=S, p_hat=p, entropy=ent, label=int(np.argmax(p)))


def kl_to_uniform(alpha: Tensor) -> Tensor:
    """Closed-form KL( Dir(alpha) || Dir(1) ) for a [K] or [B,K] tensor.

    Returns a scalar for [K] input, a [B] vector for [B,K] input.
    """
    if np.any(alpha.data < 1.0 - 1e-9):
        raise T.DomainError("kl_to_uniform expects concentrations >= 1")
    K = alpha.shape[-1]
    axis = alpha.ndim - 1
    S = T.reduce("sum", alpha, axes=axis)
    S_keep = T.reduce("sum", alpha, axes=axis, keepdims=True)
    lgamma_K = float(lgamma_np(np.float64(K)))
    term = (alpha - 1.0) * (T.digamma(alpha) - T.digamma(S_keep))
    return T.lgamma(S) - T.reduce("sum", T.lgamma(alpha), axes=axis) - lgamma_K \
        + T.reduce("sum", term, axes=axis)


def _check_one_hot(y: np.ndarray) -> None:
    if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=-1) == 1)):
        raise ValueError("labels must be one-hot")


def edl_nll(alpha: Tensor, y: Tensor, form: str = "digamma_ce") -> Tensor:
    """Evidential NLL for [K]/[B,K] concentrations and one-hot labels.

    digamma_ce:   sum_k y_k (psi(S) - psi(alpha_k))
    log_marginal: sum_k y_k (ln S  - ln alpha_k)
    brier:        sum_k (y_k - p_k)^2 + p_k (1 - p_k) / (S + 1)
    """
    if form not in NLL_FORMS:
        raise ValueError(f"unknown nll_form {form!r}")
    _check_one_hot(y.data)
    axis = alpha.ndim - 1
    S = T.reduce("sum", alpha, axes=axis, keepdims=True)
    if form == "digamma_ce":
        per = y * (T.digamma(S) - T.digamma(alpha))
    elif form == "log_marginal":
        per = y * (T.log(S) - T.log(alpha))
    else:
        p = alpha / S
        per = (y - p) * (y - p) + p * (1.0 - p) / (S + 1.0)
    return T.reduce("sum", per, axes=axis)


def adaptive_lambda(
    kl_coef: float,
    kl_scale: float,
    batch_mean_norm_entropy: float,
    schedule: str = "adaptive",
    epoch: int = 0,
    anneal_horizon: int = 50,
) -> float:
    """KL coefficient under the configured schedule; always in [0, coef*scale]."""
    if schedule == "fixed":
        return kl_coef
    if schedule == "anneal":
        return kl_coef * min(1.0, epoch / max(1, anneal_horizon))
    if schedule == "adaptive":
        h = min(1.0, max(0.0, batch_mean_norm_entropy))
        return kl_coef * (1.0 + (kl_scale - 1.0) * h)
    raise ValueError(f"unknown schedule {schedule!r}")


def batch_norm_entropy(alpha: np.ndarray) -> float:
    """Mean normalized predictive entropy (H / ln K) of a [B,K] batch."""
    alpha = np.asarray(alpha, dtype=np.float64)
    p = alpha / alpha.sum(axis=-1, keepdims=True)
    h = -(p * np.log(p)).sum(axis=-1)
    return float(h.mean() / np.log(alpha.shape[-1]))


def edl_loss(alpha: Tensor, y: Tensor, cfg: EdlLossConfig, epoch: int = 0) -> tuple[Tensor, float]:
    """Batch-mean evidential loss; returns (loss tensor, lambda used).

    The KL term by default sees masked concentrations
    alpha~ = y + (1 - y) * alpha, so true-class evidence is not penalized.
    """
    cfg.validate()
    if alpha.ndim == 1:
        alpha = T.reshape(alpha, (1, -1))
        y = T.reshape(y, (1, -1))
    lam = adaptive_lambda(cfg.kl_coef, cfg.kl_scale, batch_norm_entropy(alpha.data),
                          cfg.schedule, epoch, cfg.anneal_horizon)
    nll = edl_nll(alpha, y, cfg.nll_form)
    masked = y + (1.0 - y) * alpha if cfg.kl_masking else alpha
    kl = kl_to_uniform(masked)
    loss = T.reduce("mean", nll + lam * kl, axes=0)
    return loss, lam


def uncertainty_summary(d: DirichletOutput) -> tuple[float, float, float]:
    """(confidence = max p_hat, predictive entropy, total evidence)."""
    return float(d.p_hat.max()), d.entropy, d.S

"""Adam training loop, checkpointing, and evaluation."""

from __future__ import annotations

import io
import struct
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import metrics as M
from . import rap
from .backbone import BackboneConfig
from .config import TrainConfig, config_hash
from .data import AugmentConfig, DatasetContainer, SplitSpec, augment_batch, stratified_split
from .formats import FormatError, fnv1a64
from .model import ModelConfig, forward_evidence, init_model
from .rng import Rng
from .tensor import Tensor, backward, tape

__all__ = [
    "TrainState",
    "MetricsRow",
    "TrainingDiverged",
    "adam_step",
    "train",
    "evaluate",
    "save_checkpoint",
    "load_checkpoint",
    "write_metrics_csv",
]

METRICS_HEADER = "epoch,train_loss,lambda,val_oa,val_f1,val_auc,val_ece,seconds"


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class MetricsRow:
    epoch: int
    train_loss: float
    lam: float
    val_oa: float
    val_f1: float
    val_auc: float
    val_ece: float
    seconds: float

    def csv(self) -> str:
        return (f"{self.epoch},{self.train_loss:.6f},{self.lam:.6g},{self.val_oa:.6f},"
                f"{self.val_f1:.6f},{self.val_auc:.6f},{self.val_ece:.6f},{self.seconds:.3f}")


@dataclass
class TrainState:
    cfg: TrainConfig
    model_cfg: ModelConfig
    params: dict[str, Tensor]
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    epoch: int = 0
    best_val_oa: float = -1.0
    best_params: dict[str, np.ndarray] = field(default_factory=dict)
    skipped_steps: list[tuple[int, int]] = field(default_factory=list)  # (epoch, batch)


def adam_step(params: dict[str, Tensor], state_m: dict[str, np.ndarray], state_v: dict[str, np.ndarray],
              lr: float, beta1: float, beta2: float, eps: float, t: int) -> None:
    """One Adam update over every parameter with a gradient; t is 1-based."""
    if t < 1:
        raise ValueError("Adam step counter must be >= 1")
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        m = state_m[name]
        v = state_v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def build_model_config(cfg: TrainConfig, num_classes: int) -> ModelConfig:
    bcfg = BackboneConfig.from_scale(cfg.scale, cfg.image_size, cfg.patch_size, cfg.in_channels)
    return ModelConfig(backbone=bcfg, hac=cfg.hac, num_classes=num_classes)


def init_state(cfg: TrainConfig, num_classes: int) -> TrainState:
    cfg.validate()
    mcfg = build_model_config(cfg, num_classes)
    params = init_model(mcfg, Rng(cfg.seed, stream_id=0))
    return TrainState(
        cfg=cfg, model_cfg=mcfg, params=params,
        m={k: np.zeros_like(p.data) for k, p in params.items()},
        v={k: np.zeros_like(p.data) for k, p in params.items()},
    )


def _one_hot(labels: np.ndarray, k: int, dtype) -> np.ndarray:
    out = np.zeros((labels.size, k), dtype=dtype)
    out[np.arange(labels.size), labels] = 1
    return out


def _grads_finite(params: dict[str, Tensor]) -> bool:
    return all(p.grad is None or np.all(np.isfinite(p.grad)) for p in params.values())


def train_epoch(state: TrainState, train_set: DatasetContainer, epoch: int) -> tuple[float, float]:
    """One pass over the training set; returns (mean loss, mean lambda)."""
    cfg = state.cfg
    aug = AugmentConfig(out_size=cfg.image_size)
    shuffle_rng = Rng(cfg.seed, stream_id=10_000 + epoch)
    aug_rng = Rng(cfg.seed, stream_id=20_000 + epoch)
    order = shuffle_rng.permutation(train_set.n)
    losses, lams = [], []
    k = state.model_cfg.num_classes
    for b0 in range(0, train_set.n, cfg.batch_size):
        idx = order[b0:b0 + cfg.batch_size]
        images = augment_batch(train_set.images[idx], aug, aug_rng, mode="train")
        y = Tensor(_one_hot(train_set.labels[idx], k, np.float32))
        with tape() as t:
            ev = forward_evidence(Tensor(images), state.params, state.model_cfg)
            loss, lam = rap.edl_loss(ev + 1.0, y, cfg.rap, epoch=epoch)
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {b0 // cfg.batch_size}, lambda {lam}")
            for p in state.params.values():
                p.grad = None
            backward(loss, t)
        if _grads_finite(state.params):
            state.t += 1
            adam_step(state.params, state.m, state.v, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps, state.t)
        else:
            state.skipped_steps.append((epoch, b0 // cfg.batch_size))
            warnings.warn(f"skipping update with non-finite gradient at epoch {epoch}, batch {b0 // cfg.batch_size}")
        losses.append(loss_val)
        lams.append(lam)
    return float(np.mean(losses)) if losses else 0.0, float(np.mean(lams)) if lams else 0.0


def predict_dataset(params: dict[str, Tensor], mcfg: ModelConfig, dataset: DatasetContainer,
                    image_size: int, batch_size: int = 256):
    """Eval-mode forward over a dataset; returns per-sample DirichletOutputs."""
    aug = AugmentConfig(out_size=image_size)
    rng = Rng(0, stream_id=0)  # eval pipeline draws nothing
    outs: list[rap.DirichletOutput] = []
    for b0 in range(0, dataset.n, batch_size):
        images = augment_batch(dataset.images[b0:b0 + batch_size], aug, rng, mode="eval")
        ev = forward_evidence(Tensor(images), params, mcfg)
        outs.extend(rap.dirichlet_from_evidence(ev.data[i]) for i in range(ev.shape[0]))
    return outs


def evaluate(params: dict[str, Tensor], mcfg: ModelConfig, dataset: DatasetContainer,
             image_size: int) -> M.EvalReport:
    outs = predict_dataset(params, mcfg, dataset, image_size)
    preds = np.array([o.label for o in outs])
    scores = np.stack([o.p_hat for o in outs])
    confidences = np.array([o.p_hat.max() for o in outs])
    uncertainties = np.array([o.entropy for o in outs])
    return M.build_report(preds, dataset.labels, scores, confidences, uncertainties, mcfg.num_classes)


def train(cfg: TrainConfig, train_set: DatasetContainer, val_set: DatasetContainer | None = None,
          resume: TrainState | None = None, log_fn=None) -> tuple[TrainState, list[MetricsRow]]:
    """Full training run; retains the best-validation-OA parameter snapshot."""
    cfg.validate()
    if val_set is None:
        train_set, val_set = stratified_split(
            train_set, SplitSpec(train_fraction=1.0 - cfg.val_fraction, seed=cfg.seed))
    state = resume if resume is not None else init_state(cfg, train_set.num_classes)
    rows: list[MetricsRow] = []
    for epoch in range(state.epoch, cfg.epochs):
        start = time.perf_counter()
        loss, lam = train_epoch(state, train_set, epoch)
        report = evaluate(state.params, state.model_cfg, val_set, cfg.image_size)
        if report.oa > state.best_val_oa:
            state.best_val_oa = report.oa
            state.best_params = {k: p.data.copy() for k, p in state.params.items()}
        state.epoch = epoch + 1
        row = MetricsRow(epoch=epoch, train_loss=loss, lam=lam, val_oa=report.oa,
                         val_f1=report.f1, val_auc=report.auc, val_ece=report.ece,
                         seconds=time.perf_counter() - start)
        rows.append(row)
        if log_fn is not None:
            log_fn(row)
    return state, rows


def write_metrics_csv(rows: list[MetricsRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(METRICS_HEADER + "\n")
        for row in rows:
            f.write(row.csv() + "\n")


# -- checkpoint format -------------------------------------------------------
#
# magic "CLCK" | u32 version=1 | u16-len config hash (hex) | u32 epoch
# | u32 adam t | f64 best val OA | u32 entry count
# | manifest: per entry u16-len name, u8 kind (0=param,1=m,2=v,3=best),
#   u8 dtype (1=f32,2=f64), u32 ndim, u32 dims[], u64 offset into blob section
# | blob section (row-major payloads) | u64 FNV-1a checksum

_CKPT_MAGIC = b"CLCK"
_KINDS = {"param": 0, "m": 1, "v": 2, "best": 3}
_KIND_NAMES = {v: k for k, v in _KINDS.items()}
_DT = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_DT_INV = {v: k for k, v in _DT.items()}


def save_checkpoint(state: TrainState, path) -> None:
    entries = []
    for name, p in state.params.items():
        entries.append((name, "param", p.data))
        entries.append((name, "m", state.m[name]))
        entries.append((name, "v", state.v[name]))
    for name, arr in state.best_params.items():
        entries.append((name, "best", arr))

    manifest = io.BytesIO()
    blobs = io.BytesIO()
    for name, kind, arr in entries:
        raw = name.encode("utf-8")
        manifest.write(struct.pack("<H", len(raw)))
        manifest.write(raw)
        manifest.write(struct.pack("<BB", _KINDS[kind], _DT[arr.dtype]))
        manifest.write(struct.pack("<I", arr.ndim))
        manifest.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        manifest.write(struct.pack("<Q", blobs.tell()))
        blobs.write(np.ascontiguousarray(arr).tobytes())

    chash = config_hash(state.cfg).encode("ascii")
    head = io.BytesIO()
    head.write(_CKPT_MAGIC)
    head.write(struct.pack("<I", 1))
    head.write(struct.pack("<H", len(chash)))
    head.write(chash)
    head.write(struct.pack("<IId", state.epoch, state.t, state.best_val_oa))
    head.write(struct.pack("<I", len(entries)))
    body = head.getvalue() + manifest.getvalue() + blobs.getvalue()
    with open(path, "wb") as f:
        f.write(body)
        f.write(struct.pack("<Q", fnv1a64(body)))


def load_checkpoint(path, cfg: TrainConfig, num_classes: int) -> TrainState:
    with open(path, "rb") as f:
        raw = f.read()
    body, (stored,) = raw[:-8], struct.unpack("<Q", raw[-8:])
    if stored != fnv1a64(body):
        raise FormatError(f"checkpoint checksum mismatch at offset {len(body)}")
    if body[:4] != _CKPT_MAGIC:
        raise FormatError("bad checkpoint magic at offset 0")
    pos = 4
    (version,) = struct.unpack_from("<I", body, pos); pos += 4
    if version != 1:
        raise FormatError(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<H", body, pos); pos += 2
    chash = body[pos:pos + hlen].decode("ascii"); pos += hlen
    if chash != config_hash(cfg):
        raise FormatError("checkpoint config hash does not match the supplied config")
    epoch, t, best_oa = struct.unpack_from("<IId", body, pos); pos += 16
    (count,) = struct.unpack_from("<I", body, pos); pos += 4

    manifest = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", body, pos); pos += 2
        name = body[pos:pos + nlen].decode("utf-8"); pos += nlen
        kind, dt = struct.unpack_from("<BB", body, pos); pos += 2
        (ndim,) = struct.unpack_from("<I", body, pos); pos += 4
        dims = struct.unpack_from(f"<{ndim}I", body, pos); pos += 4 * ndim
        (offset,) = struct.unpack_from("<Q", body, pos); pos += 8
        manifest.append((name, _KIND_NAMES[kind], _DT_INV[dt], dims, offset))
    blob_start = pos

    state = init_state(cfg, num_classes)
    state.epoch, state.t, state.best_val_oa = epoch, t, best_oa
    for name, kind, dtype, dims, offset in manifest:
        n = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(body, dtype=dtype, count=n, offset=blob_start + offset).reshape(dims).copy()
        if kind == "param":
            state.params[name].data = arr
        elif kind == "m":
            state.m[name] = arr
        elif kind == "v":
            state.v[name] = arr
        else:
            state.best_params[name] = arr
    return state

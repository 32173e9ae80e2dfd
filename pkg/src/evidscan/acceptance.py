"""Gradient-verification harnesses shared by the CLI and the test suite."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .backbone import BackboneConfig
from .gradcheck import GradCheckReport, finite_diff_check
from .hac import HacConfig
from .model import ModelConfig, forward_evidence, init_model
from .rap import EdlLossConfig, edl_loss
from .rng import Rng
from .tensor import Tensor

__all__ = ["primitive_gradchecks", "composed_loss_gradcheck"]


def _t(rng: Rng, shape, low=-2.0, high=2.0) -> Tensor:
    return Tensor(rng.uniform(low, high, shape).astype(np.float64), requires_grad=True)


def primitive_gradchecks(seed: int = 0, tol: float = 1e-4):
    """Finite-difference checks for every differentiable primitive op."""
    rng = Rng(seed, stream_id=99)
    a = _t(rng, (3, 4))
    b = _t(rng, (3, 4))
    brow = _t(rng, (1, 4))
    pos = _t(rng, (3, 4), 0.5, 3.0)
    m1 = _t(rng, (3, 5))
    m2 = _t(rng, (5, 2))
    bm1 = _t(rng, (2, 3, 4))
    bm2 = _t(rng, (2, 4, 3))
    # keep relu inputs away from the kink
    relu_in = Tensor(np.where(np.abs(a.data) < 0.1, 0.5, a.data), requires_grad=True)

    cases = [
        ("add", lambda: T.reduce("sum", (a + brow) * (a + brow)), {"a": a, "b": brow}),
        ("sub", lambda: T.reduce("sum", (a - b) * (a - b) * b), {"a": a, "b": b}),
        ("mul", lambda: T.reduce("sum", a * b * a), {"a": a, "b": b}),
        ("div", lambda: T.reduce("sum", a / pos), {"a": a, "pos": pos}),
        ("neg", lambda: T.reduce("sum", (-a) * b), {"a": a}),
        ("exp", lambda: T.reduce("sum", T.exp(a)), {"a": a}),
        ("log", lambda: T.reduce("sum", T.log(pos) * b), {"pos": pos}),
        ("sqrt", lambda: T.reduce("sum", T.sqrt(pos) * b), {"pos": pos}),
        ("sigmoid", lambda: T.reduce("sum", T.sigmoid(a) * b), {"a": a}),
        ("tanh", lambda: T.reduce("sum", T.tanh(a) * b), {"a": a}),
        ("relu", lambda: T.reduce("sum", T.relu(relu_in) * b), {"x": relu_in}),
        ("softplus", lambda: T.reduce("sum", T.softplus(a) * b), {"a": a}),
        ("lgamma", lambda: T.reduce("sum", T.lgamma(pos) * b), {"pos": pos}),
        ("digamma", lambda: T.reduce("sum", T.digamma(pos) * b), {"pos": pos}),
        ("matmul", lambda: T.reduce("sum", T.matmul(m1, m2) * T.matmul(m1, m2)), {"m1": m1, "m2": m2}),
        ("bmm", lambda: T.reduce("sum", T.bmm(bm1, bm2) * 0.5), {"bm1": bm1, "bm2": bm2}),
        ("reduce_sum", lambda: T.reduce("sum", T.reduce("sum", a * a, axes=0) * T.reduce("sum", b, axes=0)), {"a": a}),
        ("reduce_mean", lambda: T.reduce("sum", T.reduce("mean", a * b, axes=1)), {"a": a, "b": b}),
        ("reduce_max", lambda: T.reduce("sum", T.reduce("max", a, axes=1) * T.reduce("max", a, axes=1)), {"a": a}),
        ("reshape", lambda: T.reduce("sum", T.reshape(a, (4, 3)) * T.reshape(b, (4, 3))), {"a": a}),
        ("transpose", lambda: T.reduce("sum", T.transpose(a, (1, 0)) * T.transpose(b, (1, 0))), {"a": a}),
        ("flip", lambda: T.reduce("sum", T.flip(a, 1) * b), {"a": a}),
        ("concat", lambda: T.reduce("sum", T.concat([a, b], axis=0) * T.concat([b, a], axis=0)), {"a": a, "b": b}),
        ("stack", lambda: T.reduce("sum", T.stack([a, b], axis=0) * T.stack([b, a], axis=0)), {"a": a, "b": b}),
        ("index_axis", lambda: T.reduce("sum", T.index_axis(a, 1, 0) * T.index_axis(b, 2, 0)), {"a": a, "b": b}),
    ]
    for name, fn, params in cases:
        yield name, finite_diff_check(fn, params, tol=tol, seed=seed)


def composed_loss_gradcheck(seed: int = 0, tol: float = 1e-4,
                            mode: str = "film", nll_form: str = "digamma_ce") -> GradCheckReport:
    """Gradcheck of the full loss (scale-T encoder + conditioning + evidential
    head) on a 2-sample batch, float64, at a generic parameter point."""
    rng = Rng(seed, stream_id=5)
    cfg = ModelConfig(
        backbone=BackboneConfig.from_scale("T", image_size=12, patch_size=4),
        hac=HacConfig(mode=mode),
        num_classes=3,
    )
    params = init_model(cfg, rng, dtype=np.float64)
    # move zero-initialized heads off the identity point so every gradient path
    # is exercised (and relu kinks are unlikely)
    noise = Rng(seed, stream_id=6)
    for p in params.values():
        p.data = p.data + noise.normal(0.0, 0.05, p.shape)

    images = Tensor(Rng(seed, stream_id=7).normal(0.0, 1.0, (2, 3, 12, 12)))
    y = np.zeros((2, 3), dtype=np.float64)
    y[0, 1] = 1.0
    y[1, 2] = 1.0
    y_t = Tensor(y)
    loss_cfg = EdlLossConfig(nll_form=nll_form)

    def f() -> Tensor:
        ev = forward_evidence(images, params, cfg)
        loss, _ = edl_loss(ev + 1.0, y_t, loss_cfg, epoch=0)
        return loss

    return finite_diff_check(f, params, tol=tol, seed=seed)

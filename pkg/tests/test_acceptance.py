"""Release gate: every headline guarantee, one printed verdict line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the verdict lines as
they complete. The two training criteria dominate the runtime (the scaled
benchmark reproduction trains the B-scale preset for 100 epochs).
"""

import io
import math
import time

import numpy as np
import pytest

from evidscan.acceptance import composed_loss_gradcheck, primitive_gradchecks
from evidscan.config import RETINAMNIST_PRESET, TrainConfig
from evidscan.data import SplitSpec, stratified_split, synth_longtail
from evidscan.formats import (
    FormatError,
    export_npz,
    import_npz,
    read_npy,
    read_tds,
    write_npy,
    write_tds,
)
from evidscan.metrics import ECE_BINS, confusion, ece, macro_metrics, ovr_auc, risk_coverage
from evidscan.model import ModelConfig, forward_evidence, init_model
from evidscan.rap import kl_to_uniform
from evidscan.rng import Rng
from evidscan.special import lgamma_np
from evidscan.tensor import Tensor
from evidscan.train import evaluate, load_checkpoint, save_checkpoint, train
from evidscan.backbone import BackboneConfig
from evidscan.hac import HacConfig


def _verdict(ok: bool, name: str, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")


# ---------------------------------------------------------------------------
# 1. Gradient correctness
# ---------------------------------------------------------------------------


def test_gradient_correctness():
    start = time.perf_counter()
    worst = 0.0
    failures = []
    for name, report in primitive_gradchecks(seed=0, tol=1e-4):
        worst = max(worst, report.max_rel_error)
        if not report.passed:
            failures.append(name)
    composed = composed_loss_gradcheck(seed=0, tol=1e-4, mode="film",
                                       nll_form="digamma_ce")
    worst = max(worst, composed.max_rel_error)
    if not composed.passed:
        failures.append("composed-loss")
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 120.0
    _verdict(ok, "gradient correctness",
             f"25 primitives + composed loss, max rel err {worst:.3e} (< 1e-4), "
             f"{elapsed:.1f}s (< 120s)")
    assert not failures, f"gradcheck failures: {failures}"
    assert elapsed < 120.0


# ---------------------------------------------------------------------------
# 2. KL oracle
# ---------------------------------------------------------------------------


def _dirichlet_log_pdf(x: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    norm = lgamma_np(alpha.sum()) - lgamma_np(alpha).sum()
    return norm + ((alpha - 1.0) * np.log(x)).sum(axis=-1)


def test_kl_oracle():
    hand = math.log(2.0) - 0.5  # hand-derived KL(Dir(2,1) || Dir(1,1))
    got = kl_to_uniform(Tensor(np.array([2.0, 1.0]))).item()
    hand_ok = abs(got - hand) < 1e-6 and abs(got - 0.19315) < 1e-5

    zero_ok = all(kl_to_uniform(Tensor(np.ones(k))).item() == 0.0 for k in (2, 3))

    # Monte-Carlo cross-check: KL = E_{x~Dir(a)}[log p_a(x) - log p_1(x)]
    mc_details = []
    mc_ok = True
    gen = np.random.default_rng(20260826)
    for alpha in (np.array([2.0, 1.0]), np.array([3.0, 1.5, 2.0])):
        closed = kl_to_uniform(Tensor(alpha)).item()
        x = gen.dirichlet(alpha, size=1_000_000)
        x = np.clip(x, 1e-300, None)  # guard log of exactly-zero draws
        samples = _dirichlet_log_pdf(x, alpha) - lgamma_np(float(len(alpha)))
        est = samples.mean()
        se = samples.std(ddof=1) / math.sqrt(samples.size)
        mc_ok &= abs(est - closed) <= 3.0 * se
        mc_details.append(f"K={len(alpha)}: |{est:.6f}-{closed:.6f}| <= 3*{se:.2e}")

    ok = hand_ok and zero_ok and mc_ok
    _verdict(ok, "KL oracle",
             f"closed form {got:.6f} vs 0.19315; zero at alpha=1; MC {'; '.join(mc_details)}")
    assert hand_ok and zero_ok and mc_ok


# ---------------------------------------------------------------------------
# 3. Metric oracle equivalence
# ---------------------------------------------------------------------------


def _oracle_macro(preds, labels, k):
    precs, sens, specs, f1s = [], [], [], []
    for c in range(k):
        tp = int(np.sum((preds == c) & (labels == c)))
        fp = int(np.sum((preds == c) & (labels != c)))
        fn = int(np.sum((preds != c) & (labels == c)))
        tn = int(np.sum((preds != c) & (labels != c)))
        if tp + fp > 0:
            precs.append(tp / (tp + fp))
        if tp + fn > 0:
            se = tp / (tp + fn)
            sens.append(se)
            specs.append(tn / (tn + fp) if tn + fp > 0 else 0.0)
            if tp + fp > 0:
                p = tp / (tp + fp)
                f1s.append(2 * p * se / (p + se) if p + se > 0 else 0.0)
            else:
                f1s.append(0.0)
    mean = lambda xs: float(np.mean(xs)) if xs else 0.0
    return (float(np.mean(preds == labels)), mean(precs), mean(sens),
            mean(specs), mean(f1s))


def _oracle_auc(scores, labels):
    aucs = []
    for c in range(scores.shape[1]):
        pos = labels == c
        if pos.all() or not pos.any():
            continue
        wins = 0.0
        for p in scores[pos, c]:
            for n in scores[~pos, c]:
                wins += 1.0 if p > n else (0.5 if p == n else 0.0)
        aucs.append(wins / (pos.sum() * (~pos).sum()))
    return float(np.mean(aucs)) if aucs else 0.0


def _oracle_ece(conf, correct):
    total = 0.0
    for i in range(ECE_BINS):
        lo, hi = i / ECE_BINS, (i + 1) / ECE_BINS
        mask = (conf >= lo) & ((conf < hi) if i < ECE_BINS - 1 else (conf <= hi))
        if mask.any():
            total += mask.sum() / conf.size * abs(conf[mask].mean() - correct[mask].mean())
    return total


def _oracle_risk_coverage(unc, correct):
    order = np.argsort(unc, kind="stable")
    rows = []
    for cov in [c / 100 for c in range(100, 0, -10)]:
        keep = max(1, int(round(cov * unc.size)))
        acc = float(correct[order[:keep]].mean())
        rows.append((cov, acc, 1.0 - acc))
    return rows


def test_metric_oracle_equivalence():
    start = time.perf_counter()
    gen = np.random.default_rng(7)
    checked = 0
    for _ in range(1000):
        n = int(gen.integers(5, 40))
        k = int(gen.integers(2, 6))
        labels = gen.integers(0, k, n)
        preds = gen.integers(0, k, n)
        scores = gen.random((n, k))
        scores /= scores.sum(axis=1, keepdims=True)
        conf = scores.max(axis=1)
        unc = gen.random(n)
        correct = (preds == labels).astype(float)

        got_macro = macro_metrics(confusion(preds, labels, k))
        np.testing.assert_allclose(got_macro, _oracle_macro(preds, labels, k),
                                   rtol=0, atol=1e-12)
        got_auc, _ = ovr_auc(scores, labels)
        assert abs(got_auc - _oracle_auc(scores, labels)) <= 1e-10
        assert abs(ece(conf, correct) - _oracle_ece(conf, correct)) <= 1e-12
        got_rc = risk_coverage(unc, correct)
        want_rc = _oracle_risk_coverage(unc, correct)
        for (gc, ga, gr), (wc, wa, wr) in zip(got_rc, want_rc):
            assert gc == wc and ga == wa and gr == wr
        checked += 1
    elapsed = time.perf_counter() - start
    ok = checked == 1000 and elapsed < 60.0
    _verdict(ok, "metric oracle equivalence",
             f"{checked}/1000 random instances exact, {elapsed:.1f}s (< 60s)")
    assert ok


# ---------------------------------------------------------------------------
# 4. Identity at initialization
# ---------------------------------------------------------------------------


def test_identity_at_init():
    bcfg = BackboneConfig.from_scale("T", image_size=16, patch_size=4)
    with_cond = ModelConfig(backbone=bcfg, hac=HacConfig(enabled=True, mode="film"),
                            num_classes=4)
    without = ModelConfig(backbone=bcfg, hac=HacConfig(enabled=False), num_classes=4)
    p_with = init_model(with_cond, Rng(5))
    p_without = init_model(without, Rng(5))

    images = Tensor(Rng(6).normal(0.0, 1.0, (100, 3, 16, 16)).astype(np.float32))
    ev_with = forward_evidence(images, p_with, with_cond).data
    ev_without = forward_evidence(images, p_without, without).data
    identical = np.array_equal(ev_with, ev_without)
    _verdict(identical, "identity at init",
             "conditioned vs unconditioned evidence bit-identical over 100 samples")
    assert identical

    # the adapter route must hold the same guarantee
    with_adapter = ModelConfig(backbone=bcfg, hac=HacConfig(enabled=True, mode="adapter"),
                               num_classes=4)
    p_adapter = init_model(with_adapter, Rng(5))
    ev_adapter = forward_evidence(images, p_adapter, with_adapter).data
    assert np.array_equal(ev_adapter, ev_without)


# ---------------------------------------------------------------------------
# 5 & 6. Training smoke test and selective prediction
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def smoke_run():
    ds = synth_longtail(8, 400, 0.6, 32, seed=1)
    train_set, test_set = stratified_split(ds, SplitSpec(0.8, seed=1))
    cfg = TrainConfig(epochs=30, batch_size=128, scale="T", image_size=32, seed=1)
    start = time.perf_counter()
    state, rows = train(cfg, train_set)
    elapsed = time.perf_counter() - start
    params = dict(state.params)
    for name, arr in state.best_params.items():
        params[name].data = arr
    report = evaluate(params, state.model_cfg, test_set, cfg.image_size)
    return report, elapsed


def test_training_smoke(smoke_run):
    report, elapsed = smoke_run
    split = report.confidence_split
    gap_ok = split.get("correct_median", 0.0) > split.get("incorrect_median", float("inf")) \
        if split.get("complete") else bool(split.get("correct_median", 0.0) > 0.0)
    oa_ok = report.oa >= 0.90
    time_ok = elapsed <= 600.0
    ok = oa_ok and gap_ok and time_ok
    detail = (f"test OA {report.oa:.4f} (>= 0.90), median confidence "
              f"correct {split.get('correct_median', float('nan')):.3f} > "
              f"incorrect {split.get('incorrect_median', float('nan')):.3f}, "
              f"{elapsed:.0f}s (<= 600s)")
    if not split.get("complete"):
        detail = (f"test OA {report.oa:.4f} (>= 0.90); every prediction correct, "
                  f"so the confidence gap holds vacuously; {elapsed:.0f}s (<= 600s)")
    _verdict(ok, "training smoke test", detail)
    assert oa_ok and gap_ok and time_ok


def test_selective_prediction(smoke_run):
    report, _ = smoke_run
    by_cov = {round(cov, 2): acc for cov, acc, _ in report.risk_coverage}
    ok = by_cov[0.5] >= by_cov[1.0]
    _verdict(ok, "selective prediction",
             f"accuracy @50% coverage {by_cov[0.5]:.4f} >= @100% {by_cov[1.0]:.4f}")
    assert ok


# ---------------------------------------------------------------------------
# 7. Scaled benchmark reproduction (synthetic stand-in)
# ---------------------------------------------------------------------------


def _standin_split(n: int, stream: int) -> tuple[np.ndarray, np.ndarray]:
    """28x28 RGB five-class images with class-dependent intensity."""
    rng = Rng(777, stream)
    labels = rng.integers(0, 5, (n,)).astype(np.int32)
    images = np.zeros((n, 28, 28, 3), dtype=np.uint8)
    for i, k in enumerate(labels):
        r = rng.child(1000 + i)
        base = r.normal(80 + 25 * int(k), 18, (28, 28, 3))
        images[i] = np.clip(base, 0, 255).astype(np.uint8)
    return images, labels


def test_scaled_benchmark_standin(tmp_path):
    # The official 28x28 retinal benchmark archive is not redistributable and
    # is unavailable offline, so this exercises the sanctioned fallback: a
    # synthetic stand-in with the identical 1,080/120/400 split shape, judged
    # against chance + 0.25 = 0.45 overall accuracy.
    path = tmp_path / "standin.npz"
    arrays = {}
    for tag, n, stream in (("train", 1080, 1), ("val", 120, 2), ("test", 400, 3)):
        images, labels = _standin_split(n, stream)
        arrays[f"{tag}_images"] = images
        arrays[f"{tag}_labels"] = labels
    export_npz(path, arrays)

    train_set = import_npz(path, "train_images", "train_labels")
    val_set = import_npz(path, "val_images", "val_labels")
    test_set = import_npz(path, "test_images", "test_labels")
    assert (train_set.n, val_set.n, test_set.n) == (1080, 120, 400)

    cfg = TrainConfig(seed=3)
    for key, value in RETINAMNIST_PRESET.items():
        setattr(cfg, key, value)
    assert cfg.epochs == 100 and cfg.batch_size == 96 and cfg.scale == "B"

    start = time.perf_counter()
    state, _ = train(cfg, train_set, val_set)
    elapsed = time.perf_counter() - start
    params = dict(state.params)
    for name, arr in state.best_params.items():
        params[name].data = arr
    report = evaluate(params, state.model_cfg, test_set, cfg.image_size)
    ok = report.oa >= 0.45 and elapsed <= 3600.0
    _verdict(ok, "scaled benchmark (synthetic stand-in)",
             f"1080/120/400 NPZ import, B preset 100 epochs: test OA {report.oa:.4f} "
             f"(>= 0.45 = chance + 0.25), {elapsed:.0f}s (<= 3600s)")
    assert ok


# ---------------------------------------------------------------------------
# 8. In-house results are not reproducible (documented)
# ---------------------------------------------------------------------------


def test_inhouse_results_not_reproducible():
    # The in-house angiography benchmark (reported OA 59.06, macro F1 22.71 at
    # B scale) uses a private clinical dataset that cannot be redistributed.
    # Those two numbers are therefore NOT reproduced here, by design; the
    # oracle and property suites in this file stand in for them. This test
    # records that decision and verifies that the substitute suites exist.
    substitutes = ("test_gradient_correctness", "test_kl_oracle",
                   "test_metric_oracle_equivalence", "test_training_smoke",
                   "test_selective_prediction")
    present = [name for name in substitutes if name in globals()]
    ok = present == list(substitutes)
    _verdict(ok, "in-house benchmark",
             "private dataset; OA 59.06 / F1 22.71 intentionally not reproduced, "
             f"substituted by {len(present)} property/oracle suites")
    assert ok


# ---------------------------------------------------------------------------
# 9. Determinism and resume
# ---------------------------------------------------------------------------


def _strip_seconds(csv_text: str) -> str:
    # the wall-clock column is the one field determinism cannot cover
    return "\n".join(line.rsplit(",", 1)[0] for line in csv_text.strip().splitlines())


def test_determinism_and_resume(tmp_path):
    from evidscan.train import write_metrics_csv

    ds = synth_longtail(4, 40, 0.7, 16, seed=2)
    tr, va = stratified_split(ds, SplitSpec(0.8, seed=2))

    def run(epochs, resume=None):
        cfg = TrainConfig(epochs=epochs, batch_size=32, scale="T", image_size=16, seed=4)
        return train(cfg, tr, va, resume=resume)

    _, rows_a = run(4)
    _, rows_b = run(4)
    a_path, b_path = tmp_path / "a.csv", tmp_path / "b.csv"
    write_metrics_csv(rows_a, a_path)
    write_metrics_csv(rows_b, b_path)
    logs_equal = _strip_seconds(a_path.read_text()) == _strip_seconds(b_path.read_text())

    full_state, _ = run(4)
    half_state, _ = run(2)
    ckpt = tmp_path / "half.ckpt"
    save_checkpoint(half_state, ckpt)
    resumed = load_checkpoint(ckpt, half_state.cfg, ds.num_classes)
    resumed.cfg = TrainConfig(epochs=4, batch_size=32, scale="T", image_size=16, seed=4)
    final_state, _ = run(4, resume=resumed)
    resume_equal = all(
        np.array_equal(final_state.params[name].data, p.data)
        for name, p in full_state.params.items()
    )

    ok = logs_equal and resume_equal
    _verdict(ok, "determinism and resume",
             f"seeded metrics logs identical (excluding wall-clock column): {logs_equal}; "
             f"save/load/resume parameter-exact: {resume_equal}")
    assert logs_equal and resume_equal


# ---------------------------------------------------------------------------
# 10. Format robustness
# ---------------------------------------------------------------------------


def test_format_robustness(tmp_path):
    # bit-exact TDS round trip
    ds = synth_longtail(3, 20, 0.7, 8, seed=5)
    tds = tmp_path / "d.tds"
    write_tds(ds, tds)
    back = read_tds(tds)
    round_trip = (np.array_equal(back.images, ds.images)
                  and np.array_equal(back.labels, ds.labels)
                  and back.class_names == ds.class_names
                  and back.meta == ds.meta)

    # constructed NPY v1.0 fixture accepted through the NPZ importer
    images = np.random.default_rng(6).integers(0, 256, (4, 8, 8, 3)).astype(np.uint8)
    npz = tmp_path / "ok.npz"
    export_npz(npz, {"train_images": images,
                     "train_labels": np.array([0, 1, 0, 1], dtype=np.int32)})
    accepted = import_npz(npz).images.shape == (4, 3, 8, 8)

    # fortran-order member rejected with a precise error
    fortran_buf = io.BytesIO()
    np.save(fortran_buf, np.asfortranarray(images))
    try:
        read_npy(fortran_buf.getvalue(), "train_images")
        fortran_rejected = False
    except FormatError as exc:
        fortran_rejected = "fortran" in str(exc)

    # unsupported dtype rejected with a precise error
    weird_buf = io.BytesIO()
    np.save(weird_buf, np.array(["x", "y"]))
    try:
        read_npy(weird_buf.getvalue(), "train_images")
        dtype_rejected = False
    except FormatError as exc:
        dtype_rejected = "descr" in str(exc) or "dtype" in str(exc)

    ok = round_trip and accepted and fortran_rejected and dtype_rejected
    _verdict(ok, "format robustness",
             f"TDS round trip bit-exact: {round_trip}; NPY fixture accepted: {accepted}; "
             f"fortran rejected: {fortran_rejected}; bad dtype rejected: {dtype_rejected}")
    assert ok

"""Acceptance criteria, one test per criterion, each printing a PASS line.

The synthetic-benchmark thresholds are repository targets sized for a single
CPU core. Heavy tests are marked `acceptance` (they are part of the default
run; deselect with `-m "not acceptance"` for a quick pass).
"""

import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from signspot import cli
from signspot import model as M
from signspot import posedata as pd
from signspot import synthbench as sb
from signspot import tensor as T
from signspot import training as tr
from signspot import verify as vf

pytestmark = pytest.mark.acceptance


def report(name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {status} {name} {detail}".rstrip())
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------------------
# Gradient correctness
# ---------------------------------------------------------------------------


def test_gradient_correctness_under_two_minutes():
    names = [
        "grad_elementwise_ops", "grad_matmul", "grad_conv2d",
        "grad_normalization", "grad_attention_ops", "grad_losses",
        "grad_full_model",
    ]
    start = time.perf_counter()
    results = vf.run_checks(names=names)
    elapsed = time.perf_counter() - start
    for r in results:
        assert r.passed, f"{r.name}: {r.detail}"
    report("gradient-correctness", all(r.passed for r in results),
           f"(7 check groups, {elapsed:.0f}s)")
    report("gradient-correctness-runtime", elapsed < 120.0, f"({elapsed:.0f}s < 120s)")


# ---------------------------------------------------------------------------
# Loss exactness
# ---------------------------------------------------------------------------


def test_loss_exactness():
    v = float(T.bce_with_logits(T.Tensor([0.0]), [1.0]).data)
    report("bce-ln2", abs(v - math.log(2.0)) < 1e-12, f"|{v} - ln 2| < 1e-12")

    rng = np.random.default_rng(0)
    z = rng.standard_normal(64) * 5
    y = (rng.random(64) > 0.5).astype(float)
    a = float(T.bce_with_logits(T.Tensor(z), y).data)
    b = float(T.bce_with_logits(T.Tensor(-z), 1.0 - y).data)
    report("bce-label-flip", abs(a - b) < 1e-12, f"|{a - b:.2e}| < 1e-12")

    logits = T.Tensor(rng.standard_normal(4))
    labels = np.array([1.0, 0.0, 1.0, 0.0])
    q = T.Tensor(rng.standard_normal((4, 8)))
    s = T.Tensor(rng.standard_normal((4, 8)))
    combo, _ = M.total_loss(logits, labels, q, s,
                            M.LossConfig(mode="bce+contrast", contrast_weight=0.0))
    plain, _ = M.total_loss(logits, labels, None, None, M.LossConfig(mode="bce"))
    diff = abs(float(combo.data) - float(plain.data))
    report("lambda-zero-reduces-to-bce", diff < 1e-12, f"({diff:.2e} < 1e-12)")

    B, d = 6, 8
    u = np.full((B, d), 1.0 / math.sqrt(d))
    loss = float(M.contrastive_loss(T.Tensor(u), T.Tensor(u), np.ones(B), 0.07).data)
    report("contrastive-uniform-lnB", abs(loss - math.log(B)) < 1e-9,
           f"|{loss} - ln {B}| < 1e-9")


# ---------------------------------------------------------------------------
# Architectural invariants
# ---------------------------------------------------------------------------


def test_architectural_invariants():
    names = ["padding_invariance", "attention_zero_on_padding",
             "cls_permutation_invariance", "frame_independence",
             "end_to_end_similarity_invariance"]
    results = vf.run_checks(names=names)
    for r in results:
        report(r.name.replace("_", "-"), r.passed, r.detail)


# ---------------------------------------------------------------------------
# Pipeline invariants
# ---------------------------------------------------------------------------


def test_pipeline_invariants():
    names = ["trim_idempotence", "normalize_invariance", "augment_determinism"]
    results = vf.run_checks(names=names)
    for r in results:
        report(r.name.replace("_", "-"), r.passed, r.detail)
    train, val = pd.split_train_val(list(range(25_432)), 0.8, seed=0)
    report("split-arithmetic", (len(train), len(val)) == (20_346, 5_086),
           f"25,432 -> {len(train)}/{len(val)}")


# ---------------------------------------------------------------------------
# Overfit sanity
# ---------------------------------------------------------------------------


def test_overfit_sanity_fixed_batch():
    start = time.perf_counter()
    cfg = sb.PRESETS["clean"]["config"]
    lexicon = sb.generate_lexicon(cfg)
    data = sb.make_pair_dataset(lexicon, 32, cfg, salt=9)
    tcfg = tr.TrainConfig(seed=7)  # default config
    mcfg = M.ModelConfig()
    samples = tr.prepare_samples(data.samples, tcfg)
    batch = pd.collate_batch(samples, tcfg.max_sentence_frames, tcfg.max_query_frames)
    batch.sentence_frames = batch.sentence_frames.astype(tcfg.np_dtype)
    batch.query_frames = batch.query_frames.astype(tcfg.np_dtype)

    params = M.init_parameters(mcfg, seed=7, dtype=tcfg.np_dtype)
    params.set_requires_grad(True)
    opt = tr.OptimizerState()
    reached = None
    for step in range(1, 301):
        rng = np.random.default_rng([7, step])
        with T.Tape():
            res = M.forward(batch, params, mcfg, mode="train", rng=rng)
            loss, _ = M.total_loss(res.logits, batch.labels, None, None, tcfg.loss)
            params.zero_grads()
            T.backward(loss)
        tr.clip_gradients(params, tcfg.max_grad_norm)
        tr.adamw_step(params, opt, tcfg)
        preds = M.predict_labels(res.logits.data)
        acc = float((preds == batch.labels.astype(int)).mean())
        if float(loss.data) < 0.05 and acc == 1.0:
            reached = step
            break
    elapsed = time.perf_counter() - start
    report("overfit-sanity", reached is not None,
           f"(loss<0.05 and 100% batch accuracy at step {reached}, {elapsed:.0f}s)")
    report("overfit-runtime", elapsed < 300.0, f"({elapsed:.0f}s < 300s)")


# ---------------------------------------------------------------------------
# Synthetic benchmark
# ---------------------------------------------------------------------------


def _train_benchmark(preset_name: str, target: float, max_epochs: int, seed: int = 7):
    preset = sb.PRESETS[preset_name]
    cfg = replace(preset["config"], seed=seed)
    lexicon = sb.generate_lexicon(cfg)
    train_data = sb.make_pair_dataset(lexicon, preset["train_pairs"], cfg, salt=1)
    val_data = sb.make_pair_dataset(lexicon, preset["val_pairs"], cfg, salt=2)
    tcfg = tr.TrainConfig(seed=seed, max_epochs=max_epochs, patience=max_epochs,
                          target_metric=target)
    mcfg = M.ModelConfig()
    train_samples = tr.prepare_samples(train_data.samples, tcfg)
    val_samples = tr.prepare_samples(val_data.samples, tcfg)
    params = M.init_parameters(mcfg, seed=seed, dtype=tcfg.np_dtype)
    result = tr.fit(params, train_samples, val_samples, mcfg, tcfg)
    return result


BENCH_ELAPSED: dict[str, float] = {}


@pytest.mark.slow
def test_synthetic_benchmark_clean():
    start = time.perf_counter()
    result = _train_benchmark("clean", target=0.95, max_epochs=15)
    BENCH_ELAPSED["clean"] = time.perf_counter() - start
    report("benchmark-clean", result.best_metric >= 0.95,
           f"(val accuracy {result.best_metric:.4f} >= 0.95 at epoch "
           f"{result.best_epoch} of <= 15, {BENCH_ELAPSED['clean']:.0f}s)")


@pytest.mark.slow
def test_synthetic_benchmark_noisy():
    start = time.perf_counter()
    result = _train_benchmark("noisy", target=0.85, max_epochs=50)
    BENCH_ELAPSED["noisy"] = time.perf_counter() - start
    report("benchmark-noisy", result.best_metric >= 0.85,
           f"(val accuracy {result.best_metric:.4f} >= 0.85 at epoch "
           f"{result.best_epoch} of <= 50, {BENCH_ELAPSED['noisy']:.0f}s)")
    total = BENCH_ELAPSED.get("clean", 0.0) + BENCH_ELAPSED["noisy"]
    report("benchmark-runtime", total < 1800.0, f"({total:.0f}s < 1800s)")


# ---------------------------------------------------------------------------
# Ablation direction (soft check, logged with a +-2 point tolerance)
# ---------------------------------------------------------------------------


@pytest.mark.slow
def test_ablation_direction_bce_vs_contrast():
    preset = sb.PRESETS["noisy"]
    cfg = preset["config"]
    lexicon = sb.generate_lexicon(cfg)
    train_data = sb.make_pair_dataset(lexicon, 800, cfg, salt=21)
    val_data = sb.make_pair_dataset(lexicon, 200, cfg, salt=22)
    scores = {}
    for mode in ("bce", "contrast"):
        tcfg = tr.TrainConfig(seed=7, max_epochs=3, patience=3,
                              loss=M.LossConfig(mode=mode))
        ts = tr.prepare_samples(train_data.samples, tcfg)
        vs = tr.prepare_samples(val_data.samples, tcfg)
        params = M.init_parameters(M.ModelConfig(), seed=7, dtype=tcfg.np_dtype)
        result = tr.fit(params, ts, vs, M.ModelConfig(), tcfg)
        scores[mode] = result.best_metric
    margin = scores["bce"] - scores["contrast"]
    report("ablation-direction", margin >= -0.02,
           f"(bce {scores['bce']:.4f} vs contrast {scores['contrast']:.4f}, "
           f"tolerance -0.02)")


# ---------------------------------------------------------------------------
# Determinism of two full CLI runs
# ---------------------------------------------------------------------------


@pytest.mark.slow
def test_two_full_train_runs_identical(tmp_path):
    data = tmp_path / "data"
    code = cli.main([
        "gen-synth", "--preset", "clean", "--seed", "11", "--out", str(data),
        "--pairs", "16", "--val-pairs", "8", "--test-pairs", "0", "--signs", "8",
    ])
    assert code == 0
    histories = []
    for run in ("a", "b"):
        out = tmp_path / f"run_{run}"
        code = cli.main([
            "train", "--data", str(data), "--out", str(out),
            "--epochs", "2", "--batch-size", "4", "--dtype", "float64",
            "--layers", "1", "--heads", "2", "--d-model", "16", "--ffn-dim", "32",
            "--sentence-cap", "12", "--query-cap", "6", "--seed", "11",
        ])
        assert code == 0
        histories.append((out / "history.jsonl").read_bytes())
    report("determinism-64bit", histories[0] == histories[1],
           "(two CLI runs, byte-identical metric histories)")

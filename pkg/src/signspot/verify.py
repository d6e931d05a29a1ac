"""Runtime invariant suite behind the `verify` command.

Each check is a small named callable; the runner times them and reports
pass/fail per check. Tests reuse the same registry so the CLI report and the
test suite can never drift apart.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from . import dtw as dtw_mod
from . import model as M
from . import posedata as pd
from . import synthbench as sb
from . import tensor as T
from . import training as tr
from .errors import VerificationError

TINY = M.ModelConfig(
    d_model=16, conv_channels=(2, 3, 4), num_layers=1, num_heads=2,
    ffn_dim=32, dropout=0.0, max_positions=32,
)


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise VerificationError(message)


def _tiny_batch(rng, B=2, tq=2, ts=3, max_len=16):
    samples = []
    for b in range(B):
        q = pd.make_sequence(f"q{b}", rng.standard_normal((tq, 50, 2)) * 0.3)
        s = pd.make_sequence(f"s{b}", rng.standard_normal((ts, 50, 2)) * 0.3)
        samples.append(pd.PairSample(s, q, b % 2))
    return pd.collate_batch(samples, max_len, max_len)


# ---------------------------------------------------------------------------
# Gradient checks
# ---------------------------------------------------------------------------


def check_grad_elementwise(seed: int) -> str:
    worst = 0.0
    for s in range(seed, seed + 10):
        rng = np.random.default_rng(s)
        w = T.Tensor(rng.standard_normal((2, 3)))
        c = T.Tensor(rng.standard_normal((2, 3)) + 3.0)
        x0 = rng.standard_normal((2, 3)) + 0.1
        cases = [
            lambda t: (t + c).sum(),
            lambda t: (t * c).sum(),
            lambda t: (t / c).sum(),
            lambda t: (t.exp() * w).sum(),
            lambda t: (T.relu(t) * w).sum(),
            lambda t: (T.sigmoid(t) * w).sum(),
            lambda t: (T.amax(t, axis=1) * w[:, 0:1].reshape(2)).sum(),
            lambda t: (T.logsumexp(t, axis=1) * w[:, 0:1].reshape(2)).sum(),
            lambda t: (t.reshape(3, 2).transpose() * w).sum(),
            lambda t: (T.concat([t, t], axis=0).sum()),
            lambda t: (t[0:1, 1:] * w[0:1, 1:]).sum(),
        ]
        for f in cases:
            worst = max(worst, T.gradient_check(f, T.Tensor(x0.copy())))
    _require(worst < 1e-4, f"elementwise op gradient error {worst:.2e}")
    return f"max rel err {worst:.2e}"


def check_grad_matmul(seed: int) -> str:
    worst = 0.0
    for s in range(seed, seed + 10):
        rng = np.random.default_rng(s)
        b = T.Tensor(rng.standard_normal((4, 3)))
        w = T.Tensor(rng.standard_normal((4, 3)))
        batched = T.Tensor(rng.standard_normal((2, 3, 4)))
        w3 = T.Tensor(rng.standard_normal((2, 3, 3)))
        worst = max(worst, T.gradient_check(
            lambda t: (T.matmul(t, b) * w).sum(),
            T.Tensor(rng.standard_normal((4, 4))),
        ))
        worst = max(worst, T.gradient_check(
            lambda t: (T.matmul(batched, t) * w3).sum(),
            T.Tensor(rng.standard_normal((4, 3))),
        ))
    _require(worst < 1e-4, f"matmul gradient error {worst:.2e}")
    return f"max rel err {worst:.2e}"


def check_grad_conv2d(seed: int) -> str:
    worst = 0.0
    for s in range(seed, seed + 10):
        rng = np.random.default_rng(s)
        x = rng.standard_normal((2, 2, 4, 3))
        w = rng.standard_normal((3, 2, 3, 3)) * 0.5
        bias = rng.standard_normal(3)
        weights = T.Tensor(rng.standard_normal((2, 3, 4, 3)))
        xt, wt, bt = T.Tensor(x), T.Tensor(w), T.Tensor(bias)
        worst = max(worst, T.gradient_check(
            lambda t: (T.conv2d(t, wt, bt, padding=1) * weights).sum(), T.Tensor(x.copy())))
        worst = max(worst, T.gradient_check(
            lambda t: (T.conv2d(xt, t, bt, padding=1) * weights).sum(), T.Tensor(w.copy())))
        worst = max(worst, T.gradient_check(
            lambda t: (T.conv2d(xt, wt, t, padding=1) * weights).sum(), T.Tensor(bias.copy())))
    _require(worst < 1e-4, f"conv2d gradient error {worst:.2e}")
    return f"max rel err {worst:.2e}"


def check_grad_normalization(seed: int) -> str:
    worst = 0.0
    for s in range(seed, seed + 10):
        rng = np.random.default_rng(s)
        x = rng.standard_normal((3, 2, 2, 2))
        gamma = rng.standard_normal(2) + 1.5
        beta = rng.standard_normal(2)
        weights = T.Tensor(rng.standard_normal((3, 2, 2, 2)))
        gt, bt = T.Tensor(gamma), T.Tensor(beta)
        worst = max(worst, T.gradient_check(
            lambda t: (T.batch_norm2d(t, gt, bt, T.BatchNormState(2)) * weights).sum(),
            T.Tensor(x.copy())))
        worst = max(worst, T.gradient_check(
            lambda t: (T.batch_norm2d(T.Tensor(x), t, bt, T.BatchNormState(2)) * weights).sum(),
            T.Tensor(gamma.copy())))
        x2 = rng.standard_normal((3, 5))
        w2 = T.Tensor(rng.standard_normal((3, 5)))
        g2 = T.Tensor(rng.standard_normal(5) + 1.0)
        worst = max(worst, T.gradient_check(
            lambda t: (T.layer_norm(t, g2, T.Tensor(np.zeros(5))) * w2).sum(),
            T.Tensor(x2.copy())))
    _require(worst < 1e-4, f"normalization gradient error {worst:.2e}")
    return f"max rel err {worst:.2e}"


def check_grad_attention_ops(seed: int) -> str:
    worst = 0.0
    for s in range(seed, seed + 10):
        rng = np.random.default_rng(s)
        scores = rng.standard_normal((3, 5))
        mask = np.ones((3, 5), dtype=bool)
        mask[1, 3:] = False
        w = T.Tensor(rng.standard_normal((3, 5)))
        worst = max(worst, T.gradient_check(
            lambda t: (T.masked_softmax(t, mask) * w).sum(), T.Tensor(scores.copy())))
        table = rng.standard_normal((4, 3))
        ids = rng.integers(0, 4, size=6)
        w2 = T.Tensor(rng.standard_normal((6, 3)))
        worst = max(worst, T.gradient_check(
            lambda t: (T.embedding_lookup(t, ids) * w2).sum(), T.Tensor(table.copy())))
        x = rng.standard_normal((2, 2, 5, 3))
        w3 = T.Tensor(rng.standard_normal((2, 2, 2, 1)))
        worst = max(worst, T.gradient_check(
            lambda t: (T.adaptive_avg_pool2d(t, (2, 1)) * w3).sum(), T.Tensor(x.copy())))
    _require(worst < 1e-4, f"attention-op gradient error {worst:.2e}")
    return f"max rel err {worst:.2e}"


def check_grad_losses(seed: int) -> str:
    worst = 0.0
    for s in range(seed, seed + 10):
        rng = np.random.default_rng(s)
        y = (rng.random(5) > 0.5).astype(float)
        worst = max(worst, T.gradient_check(
            lambda t: T.bce_with_logits(t, y), T.Tensor(rng.standard_normal(5))))
        z = rng.standard_normal(30)
        worst = max(worst, T.gradient_check(
            lambda t: T.dropout(t, 0.4, "train", np.random.default_rng(s)).sum(),
            T.Tensor(z.copy())))
        q = rng.standard_normal((3, 4))
        labels = np.array([1, 0, 1])
        sv = T.Tensor(rng.standard_normal((3, 4)))
        worst = max(worst, T.gradient_check(
            lambda t: M.contrastive_loss(t, sv, labels, 0.5), T.Tensor(q.copy())))
    _require(worst < 1e-4, f"loss gradient error {worst:.2e}")
    return f"max rel err {worst:.2e}"


def check_grad_full_model(seed: int) -> str:
    # the evaluation point is pinned: gradient_check requires smoothness at x,
    # and this seed keeps every relu/max kink farther than h from the point
    del seed
    params = M.init_parameters(TINY, seed=42)
    params.set_requires_grad(False)
    batch = _tiny_batch(np.random.default_rng(42))
    loss_cfg = M.LossConfig(mode="bce+contrast", contrast_weight=0.5, temperature=0.07)

    def loss_with(t, name, original):
        params.tensors[name] = t
        try:
            res = M.forward(batch, params, TINY, mode="train")
            q_vecs, s_vecs = M.contrastive_embeddings(res.encoded, res.seqs)
            loss, _ = M.total_loss(res.logits, batch.labels, q_vecs, s_vecs, loss_cfg)
            return loss
        finally:
            params.tensors[name] = original

    worst = 0.0
    worst_name = ""
    for name in params.tensors:
        original = params.tensors[name]
        f = lambda t, n=name, o=original: loss_with(t, n, o)
        err = T.gradient_check(f, T.Tensor(original.data.copy()))
        if err >= 1e-4:
            # a kink inside the h-interval shows as a finite-difference
            # artifact that vanishes as h shrinks; a wrong backward rule
            # persists at every h
            err = T.gradient_check(f, T.Tensor(original.data.copy()), h=1e-6)
        if err > worst:
            worst, worst_name = err, name
    _require(worst < 1e-4, f"full-model gradient error {worst:.2e} at {worst_name}")
    return f"max rel err {worst:.2e} ({worst_name})"


# ---------------------------------------------------------------------------
# Exactness and architectural invariants
# ---------------------------------------------------------------------------


def check_softmax_exactness(seed: int) -> str:
    rng = np.random.default_rng(seed)
    for _ in range(25):
        scores = rng.standard_normal((4, 7)) * 10
        mask = rng.random((4, 7)) > 0.4
        mask[:, 0] = True
        out = T.masked_softmax(T.Tensor(scores), mask).data
        _require(np.allclose(out.sum(axis=-1), 1.0, atol=1e-9), "rows must sum to 1")
        _require(np.all(out[~mask] == 0.0), "masked entries must be exactly 0")
    return "rows sum to 1 +- 1e-9, masked entries exactly 0"


def check_pool_preserves_mean(seed: int) -> str:
    rng = np.random.default_rng(seed)
    for _ in range(10):
        x = rng.standard_normal((2, 3, 6, 4))
        out = T.adaptive_avg_pool2d(T.Tensor(x), (3, 2)).data
        _require(abs(out.mean() - x.mean()) < 1e-9, "pooling must preserve the global mean")
    return "global mean preserved +- 1e-9"


def check_bce_exactness(seed: int) -> str:
    v = float(T.bce_with_logits(T.Tensor([0.0]), [1.0]).data)
    _require(abs(v - math.log(2.0)) < 1e-12, f"bce(0, 1) = {v}, want ln 2")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(32) * 6
    y = (rng.random(32) > 0.5).astype(float)
    a = float(T.bce_with_logits(T.Tensor(z), y).data)
    b = float(T.bce_with_logits(T.Tensor(-z), 1.0 - y).data)
    _require(abs(a - b) < 1e-12, "label-flip symmetry broken")
    big = float(T.bce_with_logits(T.Tensor([20.0]), [1.0]).data)
    _require(abs(big - math.log1p(math.exp(-20.0))) < 1e-15, "stable form mismatch")
    return "ln 2 exact, label-flip symmetric, stable at logit 20"


def check_conv_identity(seed: int) -> str:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((3, 1, 50, 2))
    out = T.conv2d(T.Tensor(x), T.Tensor(np.ones((1, 1, 1, 1))), T.Tensor(np.zeros(1)))
    _require(np.array_equal(out.data, x), "1x1 identity kernel must be the identity")
    return "1x1 identity kernel is the identity map"


def check_contrastive_limits(seed: int) -> str:
    B, d = 5, 8
    v = np.full((B, d), 1.0 / math.sqrt(d))
    loss = float(M.contrastive_loss(T.Tensor(v), T.Tensor(v), np.ones(B), 0.07).data)
    _require(abs(loss - math.log(B)) < 1e-9, f"uniform similarities give {loss}, want ln B")
    rng = np.random.default_rng(seed)
    logits = T.Tensor(rng.standard_normal(4))
    labels = np.array([1.0, 0.0, 1.0, 0.0])
    q = T.Tensor(rng.standard_normal((4, 8)))
    s = T.Tensor(rng.standard_normal((4, 8)))
    combo, _ = M.total_loss(logits, labels, q, s,
                            M.LossConfig(mode="bce+contrast", contrast_weight=0.0))
    plain, _ = M.total_loss(logits, labels, None, None, M.LossConfig(mode="bce"))
    _require(abs(float(combo.data) - float(plain.data)) < 1e-12,
             "lambda=0 must reduce to plain bce")
    return "uniform case = ln B, lambda=0 reduces to bce"


def check_padding_invariance(seed: int) -> str:
    params = M.init_parameters(TINY, seed=seed)
    rng = np.random.default_rng(seed)
    q = pd.make_sequence("q", rng.standard_normal((2, 50, 2)))
    s = pd.make_sequence("s", rng.standard_normal((4, 50, 2)))
    sample = pd.PairSample(s, q, 1)
    longer = pd.PairSample(
        pd.make_sequence("s2", rng.standard_normal((4 + 8, 50, 2))),
        pd.make_sequence("q2", rng.standard_normal((2 + 8, 50, 2))), 0)
    alone = pd.collate_batch([sample], 16, 16)
    padded = pd.collate_batch([sample, longer], 16, 16)  # forces 8 pad frames
    la = M.forward(alone, params, TINY).logits.data[0]
    lp = M.forward(padded, params, TINY).logits.data[0]
    drift = abs(la - lp)
    _require(drift < 1e-5, f"padding moved the logit by {drift:.2e}")
    return f"logit drift {drift:.2e} under 8 pad frames"


def check_attention_zero_on_padding(seed: int) -> str:
    """Capture every masked_softmax output inside a padded forward pass."""
    cfg = replace(TINY, num_layers=2)
    params = M.init_parameters(cfg, seed=seed)
    rng = np.random.default_rng(seed)
    captured: list[tuple[np.ndarray, np.ndarray]] = []
    original = T.masked_softmax

    def capturing(scores, mask):
        out = original(scores, mask)
        captured.append((out.data, np.broadcast_to(mask, out.data.shape)))
        return out

    samples = [
        pd.PairSample(pd.make_sequence("s0", rng.standard_normal((3, 50, 2))),
                      pd.make_sequence("q0", rng.standard_normal((2, 50, 2))), 1),
        pd.PairSample(pd.make_sequence("s1", rng.standard_normal((7, 50, 2))),
                      pd.make_sequence("q1", rng.standard_normal((4, 50, 2))), 0),
    ]
    batch = pd.collate_batch(samples, 16, 16)
    T.masked_softmax = capturing
    try:
        M.forward(batch, params, cfg)
    finally:
        T.masked_softmax = original
    _require(len(captured) == cfg.num_layers, "expected one capture per layer")
    for probs, mask in captured:
        _require(np.all(probs[~mask] == 0.0), "padded positions got probability mass")
    return f"exact zeros on padded keys across {len(captured)} layers"


def check_cls_permutation_invariance(seed: int) -> str:
    params = M.init_parameters(TINY, seed=seed)
    params["pos.table"].data[:] = 0.0
    params["type.table"].data[:] = 0.0
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((2, 16))
    s = rng.standard_normal((5, 16))
    base = M.transformer_encode(
        M.assemble_pair_sequence(T.Tensor(q), T.Tensor(s), params), params, TINY).data
    perm = rng.permutation(5)
    out = M.transformer_encode(
        M.assemble_pair_sequence(T.Tensor(q), T.Tensor(s[perm]), params), params, TINY).data
    drift = np.abs(out[0] - base[0]).max()
    _require(drift < 1e-5, f"CLS vector moved by {drift:.2e} under permutation")
    _require(np.allclose(out[4:], base[4:][perm], atol=1e-5), "rows must permute with input")
    return f"CLS drift {drift:.2e} with zeroed position/type tables"


def check_frame_independence(seed: int) -> str:
    params = M.init_parameters(TINY, seed=seed)
    rng = np.random.default_rng(seed)
    frames = rng.standard_normal((4, 50, 2))
    base = M.encode_frames(frames, params, TINY).data
    frames2 = frames.copy()
    frames2[2] += 1.0
    out = M.encode_frames(frames2, params, TINY).data
    _require(np.array_equal(out[[0, 1, 3]], base[[0, 1, 3]]),
             "perturbing one frame leaked into other rows")
    return "frame embeddings depend only on their own frame"


def check_end_to_end_similarity_invariance(seed: int) -> str:
    params = M.init_parameters(TINY, seed=seed)
    rng = np.random.default_rng(seed)
    cfg = tr.TrainConfig(dtype="float64", max_sentence_frames=16, max_query_frames=8)

    def build(scale, offset):
        frames_s = rng2.standard_normal((6, 50, 2)) * 0.2
        frames_q = rng2.standard_normal((3, 50, 2)) * 0.2
        for fr in (frames_s, frames_q):
            fr[:, pd.LEFT_SHOULDER] = [-0.4, 0.0]
            fr[:, pd.RIGHT_SHOULDER] = [0.4, 0.0]
        s = pd.make_sequence("s", frames_s * scale + offset)
        q = pd.make_sequence("q", frames_q * scale + offset)
        return tr.prepare_samples([pd.PairSample(s, q, 1)], cfg)

    rng2 = np.random.default_rng(seed)
    plain = build(1.0, 0.0)
    rng2 = np.random.default_rng(seed)
    moved = build(2.5, np.array([3.0, -1.5]))
    ba = pd.collate_batch(plain, 16, 8)
    bb = pd.collate_batch(moved, 16, 8)
    la = M.forward(ba, params, TINY).logits.data[0]
    lb = M.forward(bb, params, TINY).logits.data[0]
    drift = abs(la - lb)
    _require(drift < 1e-5, f"similarity transform moved the logit by {drift:.2e}")
    return f"logit drift {drift:.2e} under scale+translation"


# ---------------------------------------------------------------------------
# Pipeline invariants
# ---------------------------------------------------------------------------


def check_trim_idempotence(seed: int) -> str:
    for s in range(seed, seed + 10):
        rng = np.random.default_rng(s)
        steps = rng.standard_normal((20, 50, 2)) * 0.05
        steps[rng.random(20) < 0.4] = 0.0
        seq = pd.make_sequence("w", np.cumsum(steps, axis=0))
        once = pd.trim_still_frames(seq)
        twice = pd.trim_still_frames(once)
        _require(np.array_equal(once.frames, twice.frames), "trim must be idempotent")
    return "trim(trim(s)) == trim(s) on random pause patterns"


def check_normalize_invariance(seed: int) -> str:
    rng = np.random.default_rng(seed)
    frames = rng.standard_normal((6, 50, 2)) * 0.2
    frames[:, pd.LEFT_SHOULDER] = [-0.5, 0.0]
    frames[:, pd.RIGHT_SHOULDER] = [0.5, 0.0]
    seq = pd.make_sequence("n", frames)
    base = pd.normalize_sequence(seq)
    moved = pd.make_sequence("m", frames * 3.7 + np.array([1.0, -2.0]))
    out = pd.normalize_sequence(moved)
    drift = np.abs(out.frames - base.frames).max()
    _require(drift < 1e-6, f"normalization drift {drift:.2e}")
    return f"max drift {drift:.2e} under similarity transforms"


def check_augment_determinism(seed: int) -> str:
    rng = np.random.default_rng(seed)
    seq = pd.make_sequence("a", rng.standard_normal((10, 50, 2)))
    cfg = pd.AugmentationConfig()
    a = pd.augment(seq, cfg, np.random.default_rng(seed))
    b = pd.augment(seq, cfg, np.random.default_rng(seed))
    _require(np.array_equal(a.frames, b.frames), "augment must be pure given a seed")
    return "identical outputs for identical seeds"


def check_subsample_structure(seed: int) -> str:
    rng = np.random.default_rng(seed)
    for T_len, cap in [(17, 5), (100, 50), (9, 2), (30, 7)]:
        seq = pd.make_sequence("s", rng.standard_normal((T_len, 50, 2)))
        out = pd.subsample_to_cap(seq, cap)
        _require(out.num_frames == cap, "wrong subsampled length")
        _require(np.array_equal(out.frames[0], seq.frames[0]), "first frame must survive")
        _require(np.array_equal(out.frames[-1], seq.frames[-1]), "last frame must survive")
    return "endpoints preserved, lengths exact"


def check_split_arithmetic(seed: int) -> str:
    train, val = pd.split_train_val(list(range(25_432)), 0.8, seed=seed)
    _require((len(train), len(val)) == (20_346, 5_086),
             f"got {(len(train), len(val))}, want (20346, 5086)")
    _require(not set(train) & set(val), "partitions overlap")
    return "25,432 -> 20,346 / 5,086"


def check_training_determinism(seed: int) -> str:
    rng = np.random.default_rng(seed)
    samples = [
        pd.PairSample(
            pd.make_sequence(f"s{i}", rng.standard_normal((6, 50, 2)) * 0.3),
            pd.make_sequence(f"q{i}", rng.standard_normal((3, 50, 2)) * 0.3),
            i % 2,
        )
        for i in range(8)
    ]
    cfg = tr.TrainConfig(batch_size=4, max_epochs=2, patience=5, seed=seed,
                         dtype="float64", max_sentence_frames=8, max_query_frames=4)
    histories = []
    for _ in range(2):
        params = M.init_parameters(TINY, seed=seed)
        result = tr.fit(params, samples, samples[:4], TINY, cfg)
        histories.append(result.history)
        best = max(rec["val_accuracy"] for rec in result.history)
        _require(result.best_metric == best,
                 "early stopping returned a checkpoint below an earlier epoch")
    _require(histories[0] == histories[1], "identical seeds produced different histories")
    return "two 64-bit runs produced identical histories"


def check_adamw_reference(seed: int) -> str:
    lr, b1, b2, eps, wd = 0.01, 0.9, 0.999, 1e-8, 0.04
    rng = np.random.default_rng(seed)
    grads = rng.standard_normal(10)
    theta_ref, m, v = 0.8, 0.0, 0.0
    trace = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta_ref = (theta_ref * (1 - lr * wd)
                     - lr * (m / (1 - b1 ** t)) / ((v / (1 - b2 ** t)) ** 0.5 + eps))
        trace.append(theta_ref)
    cfg_m = M.ModelConfig(d_model=2, conv_channels=(1,), num_layers=1, num_heads=1,
                          ffn_dim=2, dropout=0.0, max_positions=8)
    params = M.init_parameters(cfg_m, seed=0)
    params.tensors = {"head.w2": T.Tensor(np.full((1, 1), 0.8), requires_grad=True)}
    params.bn_states = {}
    cfg = tr.TrainConfig(lr=lr, betas=(b1, b2), eps=eps, weight_decay=wd)
    state = tr.OptimizerState()
    for g, want in zip(grads, trace):
        params["head.w2"].grad = np.full((1, 1), g)
        tr.adamw_step(params, state, cfg)
        got = float(params["head.w2"].data[0, 0])
        _require(abs(got - want) < 1e-12, f"adamw trace diverged: {got} vs {want}")
    return "10-step scalar trace matches within 1e-12"


def check_metrics_oracle(seed: int) -> str:
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        n = int(rng.integers(1, 25))
        preds = rng.integers(0, 2, n)
        labels = rng.integers(0, 2, n)
        rep = tr.compute_metrics(preds, labels)
        tp = int(((preds == 1) & (labels == 1)).sum())
        fp = int(((preds == 1) & (labels == 0)).sum())
        tn = int(((preds == 0) & (labels == 0)).sum())
        fn = int(((preds == 0) & (labels == 1)).sum())
        _require((rep.tp, rep.fp, rep.tn, rep.fn) == (tp, fp, tn, fn),
                 "confusion counts disagree with brute force")
    return "1,000 random vectors agree with the brute-force oracle"


def check_synth_labels_against_matcher(seed: int) -> str:
    cfg = replace(sb.PRESETS["clean"]["config"], seed=seed)
    lex = sb.generate_lexicon(cfg)
    data = sb.make_pair_dataset(lex, 60, cfg, salt=3)
    agree = sum(
        dtw_mod.matcher_predict(p.sentence, p.query, threshold=0.4) == p.label
        for p in data.samples
    )
    _require(agree == len(data.samples),
             f"matcher agreed on only {agree}/{len(data.samples)} clean pairs")
    return f"DTW matcher agrees on {agree}/{len(data.samples)} clean pairs"


def check_synth_purity(seed: int) -> str:
    cfg = replace(sb.PRESETS["clean"]["config"], seed=seed)
    lex1 = sb.generate_lexicon(cfg)
    lex2 = sb.generate_lexicon(cfg)
    for sid in lex1.sign_ids:
        _require(np.array_equal(lex1.prototypes[sid], lex2.prototypes[sid]),
                 "lexicon generation is not pure")
    d1 = sb.make_pair_dataset(lex1, 8, cfg, salt=5)
    d2 = sb.make_pair_dataset(lex2, 8, cfg, salt=5)
    for a, b in zip(d1.samples, d2.samples):
        _require(np.array_equal(a.sentence.frames, b.sentence.frames)
                 and a.label == b.label, "dataset generation is not pure")
    return "lexicon and pair generation are pure functions of (cfg, seed)"


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    seconds: float
    detail: str


CHECKS = [
    ("grad_elementwise_ops", check_grad_elementwise),
    ("grad_matmul", check_grad_matmul),
    ("grad_conv2d", check_grad_conv2d),
    ("grad_normalization", check_grad_normalization),
    ("grad_attention_ops", check_grad_attention_ops),
    ("grad_losses", check_grad_losses),
    ("grad_full_model", check_grad_full_model),
    ("softmax_exactness", check_softmax_exactness),
    ("pool_preserves_mean", check_pool_preserves_mean),
    ("bce_exactness", check_bce_exactness),
    ("conv_identity_kernel", check_conv_identity),
    ("contrastive_limits", check_contrastive_limits),
    ("padding_invariance", check_padding_invariance),
    ("attention_zero_on_padding", check_attention_zero_on_padding),
    ("cls_permutation_invariance", check_cls_permutation_invariance),
    ("frame_independence", check_frame_independence),
    ("end_to_end_similarity_invariance", check_end_to_end_similarity_invariance),
    ("trim_idempotence", check_trim_idempotence),
    ("normalize_invariance", check_normalize_invariance),
    ("augment_determinism", check_augment_determinism),
    ("subsample_structure", check_subsample_structure),
    ("split_arithmetic", check_split_arithmetic),
    ("training_determinism", check_training_determinism),
    ("adamw_reference_trace", check_adamw_reference),
    ("metrics_oracle", check_metrics_oracle),
    ("synth_labels_vs_matcher", check_synth_labels_against_matcher),
    ("synth_purity", check_synth_purity),
]


def run_checks(names: list[str] | None = None, seed: int = 0) -> list[CheckResult]:
    wanted = dict(CHECKS)
    if names:
        unknown = [n for n in names if n not in wanted]
        if unknown:
            raise VerificationError(f"unknown checks: {', '.join(unknown)}")
    results = []
    for name, fn in CHECKS:
        if names and name not in names:
            continue
        start = time.perf_counter()
        try:
            detail = fn(seed)
            passed = True
        except Exception as exc:  # a failed invariant, whatever the cause
            detail = f"{type(exc).__name__}: {exc}"
            passed = False
        results.append(CheckResult(name, passed, time.perf_counter() - start, detail))
    return results

"""The spotting network.

Per-frame CNN encoder over the 50x2 keypoint grid (or a 1D variant over the
flattened 100-vector), CLS/SEP pair assembly with learned position and
token-type embeddings, a pre-norm transformer encoder, a small MLP
classification head, and the presence/contrastive losses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DegenerateBatchError
from .posedata import Batch
from .tensor import BatchNormState, Tensor


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 128
    conv_channels: tuple[int, ...] = (32, 64, 128)
    conv_kernel: int = 3
    conv_padding: int = 1
    pool_out: tuple[int, int] = (1, 1)
    num_layers: int = 4
    num_heads: int = 8
    ffn_dim: int = 512
    dropout: float = 0.02
    max_positions: int = 512
    pose_encoder: str = "2d"    # "2d" grid conv | "1d" flattened-frame conv
    head_pool: str = "cls"      # "cls" token vector | "max_all" over valid positions

    def validate(self) -> "ModelConfig":
        if self.d_model < 1 or self.d_model % self.num_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} must be divisible by num_heads {self.num_heads}"
            )
        if not self.conv_channels:
            raise ConfigError("conv_channels must not be empty")
        if self.pose_encoder not in ("2d", "1d"):
            raise ConfigError(f"pose_encoder must be '2d' or '1d', got {self.pose_encoder!r}")
        if self.head_pool not in ("cls", "max_all"):
            raise ConfigError(f"head_pool must be 'cls' or 'max_all', got {self.head_pool!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.max_positions < 4:
            raise ConfigError("max_positions must allow at least CLS+SEP and two frames")
        return self

    def to_dict(self) -> dict:
        return {
            "d_model": self.d_model,
            "conv_channels": list(self.conv_channels),
            "conv_kernel": self.conv_kernel,
            "conv_padding": self.conv_padding,
            "pool_out": list(self.pool_out),
            "num_layers": self.num_layers,
            "num_heads": self.num_heads,
            "ffn_dim": self.ffn_dim,
            "dropout": self.dropout,
            "max_positions": self.max_positions,
            "pose_encoder": self.pose_encoder,
            "head_pool": self.head_pool,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        d["conv_channels"] = tuple(d.get("conv_channels", (32, 64, 128)))
        d["pool_out"] = tuple(d.get("pool_out", (1, 1)))
        return ModelConfig(**d).validate()


@dataclass(frozen=True)
class LossConfig:
    # The combined objective is the default: the contrastive term aligns the
    # two segments' embeddings long before the CLS pathway alone finds the
    # comparison circuit, which is what makes desk-scale training converge.
    mode: str = "bce+contrast"        # bce | contrast | bce+contrast
    contrast_weight: float = 0.5      # weight on the contrastive term
    temperature: float = 0.07

    def validate(self) -> "LossConfig":
        if self.mode not in ("bce", "contrast", "bce+contrast"):
            raise ConfigError(f"loss mode must be bce, contrast or bce+contrast, got {self.mode!r}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if self.contrast_weight < 0:
            raise ConfigError(f"contrast_weight must be >= 0, got {self.contrast_weight}")
        return self

    def to_dict(self) -> dict:
        return {"mode": self.mode, "contrast_weight": self.contrast_weight,
                "temperature": self.temperature}

    @staticmethod
    def from_dict(d: dict) -> "LossConfig":
        return LossConfig(**d).validate()


class ModelParameters:
    """Named parameter tensors plus batch-norm running statistics."""

    def __init__(self, config: ModelConfig, tensors: dict[str, Tensor],
                 bn_states: dict[str, BatchNormState]):
        self.config = config
        self.tensors = tensors
        self.bn_states = bn_states

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    @property
    def parameter_count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def set_requires_grad(self, flag: bool) -> None:
        for t in self.tensors.values():
            t.requires_grad = flag

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def copy(self) -> "ModelParameters":
        tensors = {
            name: Tensor(t.data.copy(), requires_grad=t.requires_grad)
            for name, t in self.tensors.items()
        }
        states = {name: s.copy() for name, s in self.bn_states.items()}
        return ModelParameters(self.config, tensors, states)

    def astype(self, dtype) -> "ModelParameters":
        tensors = {
            name: Tensor(t.data.astype(dtype), requires_grad=t.requires_grad)
            for name, t in self.tensors.items()
        }
        states = {}
        for name, s in self.bn_states.items():
            ns = BatchNormState(len(s.running_mean), dtype=dtype)
            ns.running_mean[:] = s.running_mean
            ns.running_var[:] = s.running_var
            states[name] = ns
        return ModelParameters(self.config, tensors, states)


def expected_parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Walk the config and list every parameter tensor's shape."""
    cfg.validate()
    d = cfg.d_model
    k = cfg.conv_kernel
    shapes: dict[str, tuple[int, ...]] = {}
    cin = 1
    for i, cout in enumerate(cfg.conv_channels, start=1):
        kernel = (cout, cin, k, k) if cfg.pose_encoder == "2d" else (cout, cin, 1, k)
        shapes[f"encoder.conv{i}.weight"] = kernel
        shapes[f"encoder.conv{i}.bias"] = (cout,)
        shapes[f"encoder.bn{i}.gamma"] = (cout,)
        shapes[f"encoder.bn{i}.beta"] = (cout,)
        cin = cout
    ph, pw = cfg.pool_out
    shapes["encoder.proj.weight"] = (cin * ph * pw, d)
    shapes["encoder.proj.bias"] = (d,)
    shapes["cls"] = (d,)
    shapes["sep"] = (d,)
    shapes["pos.table"] = (cfg.max_positions, d)
    shapes["type.table"] = (2, d)
    for l in range(1, cfg.num_layers + 1):
        shapes[f"layer{l}.ln1.gamma"] = (d,)
        shapes[f"layer{l}.ln1.beta"] = (d,)
        for name in ("wq", "wk", "wv", "wo"):
            shapes[f"layer{l}.attn.{name}"] = (d, d)
        for name in ("bq", "bk", "bv", "bo"):
            shapes[f"layer{l}.attn.{name}"] = (d,)
        shapes[f"layer{l}.ln2.gamma"] = (d,)
        shapes[f"layer{l}.ln2.beta"] = (d,)
        shapes[f"layer{l}.ffn.w1"] = (d, cfg.ffn_dim)
        shapes[f"layer{l}.ffn.b1"] = (cfg.ffn_dim,)
        shapes[f"layer{l}.ffn.w2"] = (cfg.ffn_dim, d)
        shapes[f"layer{l}.ffn.b2"] = (d,)
    shapes["final_ln.gamma"] = (d,)
    shapes["final_ln.beta"] = (d,)
    shapes["head.w1"] = (d, d)
    shapes["head.b1"] = (d,)
    shapes["head.w2"] = (d, 1)
    shapes["head.b2"] = (1,)
    return shapes


def init_parameters(cfg: ModelConfig, seed: int, dtype=np.float64) -> ModelParameters:
    """Fan-in scaled uniform weights, zero biases, small-normal embedding tables.

    Projections that feed residual additions (attention output, second FFN
    matrix) are further scaled by 1/sqrt(2 * num_layers) so the residual
    stream starts near identity; this keeps early training stable.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    residual_scale = 1.0 / math.sqrt(2.0 * cfg.num_layers)
    tensors: dict[str, Tensor] = {}
    for name, shape in expected_parameter_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf in ("bias", "beta", "b1", "b2", "bq", "bk", "bv", "bo"):
            data = np.zeros(shape)
        elif leaf == "gamma":
            data = np.ones(shape)
        elif name in ("cls", "sep", "pos.table", "type.table"):
            data = rng.normal(0.0, 0.02, size=shape)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
            bound = 1.0 / math.sqrt(fan_in)
            data = rng.uniform(-bound, bound, size=shape)
            if leaf in ("wo", "w2") and name.startswith("layer"):
                data *= residual_scale
        tensors[name] = Tensor(data.astype(dtype), requires_grad=True)
    bn_states = {
        f"encoder.bn{i}": BatchNormState(c, dtype=dtype)
        for i, c in enumerate(cfg.conv_channels, start=1)
    }
    return ModelParameters(cfg, tensors, bn_states)


# ---------------------------------------------------------------------------
# Frame encoder
# ---------------------------------------------------------------------------


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x (..., din) @ w (din, dout) + b, as one flat GEMM."""
    din, dout = w.shape
    lead = x.shape[:-1]
    flat = T.reshape(x, (-1, din))
    out = T.matmul(flat, w) + b
    return T.reshape(out, lead + (dout,))


def encode_frames(frames: np.ndarray, params: ModelParameters, cfg: ModelConfig,
                  mode: str = "eval") -> Tensor:
    """Encode (T, 50, 2) keypoint frames into (T, d_model) embeddings.

    Each frame is processed independently: conv blocks (conv, batch norm,
    relu), adaptive average pooling, then a linear projection. The "1d"
    variant runs the same channel progression over the flattened 100-vector.
    """
    frames = np.asarray(frames)
    if not np.all(np.isfinite(frames)):
        raise ContractError("encode_frames got non-finite input")
    if frames.ndim != 3 or frames.shape[1:] != (50, 2):
        raise ContractError(f"expected (T, 50, 2) frames, got {frames.shape}")
    n = frames.shape[0]
    dtype = params.dtype
    if cfg.pose_encoder == "2d":
        x = Tensor(frames.reshape(n, 1, 50, 2).astype(dtype))
        padding = (cfg.conv_padding, cfg.conv_padding)
    else:
        x = Tensor(frames.reshape(n, 1, 1, 100).astype(dtype))
        padding = (0, cfg.conv_padding)
    for i in range(1, len(cfg.conv_channels) + 1):
        x = T.conv2d(x, params[f"encoder.conv{i}.weight"], params[f"encoder.conv{i}.bias"],
                     stride=1, padding=padding)
        x = T.batch_norm2d(x, params[f"encoder.bn{i}.gamma"], params[f"encoder.bn{i}.beta"],
                           params.bn_states[f"encoder.bn{i}"], mode=mode)
        x = T.relu(x)
    x = T.adaptive_avg_pool2d(x, cfg.pool_out)
    x = T.reshape(x, (n, -1))
    return _linear(x, params["encoder.proj.weight"], params["encoder.proj.bias"])


# ---------------------------------------------------------------------------
# Pair assembly
# ---------------------------------------------------------------------------


@dataclass
class AssembledSequence:
    """[CLS] + query + [SEP] + sentence tokens with ids and padding mask."""

    tokens: Tensor                # (L, d) including any padding rows (zeros)
    position_ids: np.ndarray      # (L,)
    token_type_ids: np.ndarray    # (L,) 0 through SEP, 1 for sentence tokens
    attention_mask: np.ndarray    # (L,) bool, False exactly on padding
    query_len: int
    sentence_len: int

    @property
    def valid_len(self) -> int:
        return 2 + self.query_len + self.sentence_len

    @property
    def sep_index(self) -> int:
        return 1 + self.query_len


def assemble_pair_sequence(query_emb: Tensor, sentence_emb: Tensor,
                           params: ModelParameters,
                           pad_to: int | None = None) -> AssembledSequence:
    """Concatenate CLS + query + SEP + sentence and add position/type embeddings."""
    if query_emb.shape[-1] != sentence_emb.shape[-1]:
        raise ContractError(
            f"embedding widths differ: {query_emb.shape} vs {sentence_emb.shape}"
        )
    tq, ts = query_emb.shape[0], sentence_emb.shape[0]
    if tq < 1 or ts < 1:
        raise ContractError("query and sentence must contribute at least one token each")
    d = query_emb.shape[-1]
    length = 2 + tq + ts
    max_positions = params["pos.table"].shape[0]
    if length > max_positions:
        raise ContractError(
            f"assembled length {length} exceeds max_positions {max_positions}; "
            "tighten the frame caps"
        )
    position_ids = np.arange(length, dtype=np.int64)
    token_type_ids = np.concatenate([
        np.zeros(2 + tq, dtype=np.int64), np.ones(ts, dtype=np.int64)
    ])
    tokens = T.concat([
        T.reshape(params["cls"], (1, d)),
        query_emb,
        T.reshape(params["sep"], (1, d)),
        sentence_emb,
    ], axis=0)
    tokens = tokens + T.embedding_lookup(params["pos.table"], position_ids)
    tokens = tokens + T.embedding_lookup(params["type.table"], token_type_ids)
    mask = np.ones(length, dtype=bool)
    if pad_to is not None and pad_to > length:
        pad = pad_to - length
        tokens = T.concat([tokens, Tensor(np.zeros((pad, d), dtype=tokens.dtype))], axis=0)
        position_ids = np.concatenate([position_ids, np.zeros(pad, dtype=np.int64)])
        token_type_ids = np.concatenate([token_type_ids, np.zeros(pad, dtype=np.int64)])
        mask = np.concatenate([mask, np.zeros(pad, dtype=bool)])
    return AssembledSequence(tokens, position_ids, token_type_ids, mask, tq, ts)


# ---------------------------------------------------------------------------
# Transformer
# ---------------------------------------------------------------------------


def _attention(x: Tensor, mask: np.ndarray, params: ModelParameters, layer: int,
               cfg: ModelConfig, mode: str, rng) -> Tensor:
    B, L, d = x.shape
    heads = cfg.num_heads
    dk = d // heads
    p = lambda name: params[f"layer{layer}.attn.{name}"]

    def split_heads(t: Tensor) -> Tensor:
        return T.transpose(T.reshape(t, (B, L, heads, dk)), (0, 2, 1, 3))

    q = split_heads(_linear(x, p("wq"), p("bq")))
    k = split_heads(_linear(x, p("wk"), p("bk")))
    v = split_heads(_linear(x, p("wv"), p("bv")))
    scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dk))
    probs = T.masked_softmax(scores, mask[:, None, None, :])
    probs = T.dropout(probs, cfg.dropout, mode, rng)
    ctx = T.matmul(probs, v)                                   # (B, H, L, dk)
    ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (B, L, d))
    return _linear(ctx, p("wo"), p("bo"))


def transformer_encode(seqs, params: ModelParameters, cfg: ModelConfig,
                       mode: str = "eval", rng: np.random.Generator | None = None):
    """Run the pre-norm transformer stack.

    Accepts one AssembledSequence (returns (L, d)) or a list of equally padded
    ones (returns (B, L, d)). Padding positions are never attended to.
    """
    single = isinstance(seqs, AssembledSequence)
    batch = [seqs] if single else list(seqs)
    if not batch:
        raise ContractError("transformer_encode needs at least one sequence")
    L = batch[0].tokens.shape[0]
    if any(s.tokens.shape[0] != L for s in batch):
        raise ContractError("all sequences in a batch must be padded to one length")
    mask = np.stack([s.attention_mask for s in batch])
    if not mask.any(axis=1).all():
        raise ContractError("a sequence with an all-false mask cannot be encoded")
    d = batch[0].tokens.shape[1]
    h = T.concat([T.reshape(s.tokens, (1, L, d)) for s in batch], axis=0)
    h = T.dropout(h, cfg.dropout, mode, rng)  # embedding dropout
    for layer in range(1, cfg.num_layers + 1):
        ln1 = T.layer_norm(h, params[f"layer{layer}.ln1.gamma"], params[f"layer{layer}.ln1.beta"])
        h = h + _attention(ln1, mask, params, layer, cfg, mode, rng)
        ln2 = T.layer_norm(h, params[f"layer{layer}.ln2.gamma"], params[f"layer{layer}.ln2.beta"])
        mid = T.relu(_linear(ln2, params[f"layer{layer}.ffn.w1"], params[f"layer{layer}.ffn.b1"]))
        mid = T.dropout(mid, cfg.dropout, mode, rng)
        h = h + _linear(mid, params[f"layer{layer}.ffn.w2"], params[f"layer{layer}.ffn.b2"])
    h = T.layer_norm(h, params["final_ln.gamma"], params["final_ln.beta"])
    if single:
        return T.reshape(h, (L, d))
    return h


# ---------------------------------------------------------------------------
# Heads and losses
# ---------------------------------------------------------------------------


def classify(encoded: Tensor, seqs: list[AssembledSequence], params: ModelParameters,
             cfg: ModelConfig) -> Tensor:
    """Pool each sequence and project to one presence logit per sample."""
    B, L, d = encoded.shape
    pooled = []
    for b, seq in enumerate(seqs):
        if cfg.head_pool == "cls":
            pooled.append(T.reshape(encoded[b, 0], (1, d)))
        else:  # elementwise max over all non-padding positions
            pooled.append(T.reshape(T.amax(encoded[b, 0:seq.valid_len], axis=0), (1, d)))
    x = T.concat(pooled, axis=0)
    hidden = T.relu(_linear(x, params["head.w1"], params["head.b1"]))
    logits = _linear(hidden, params["head.w2"], params["head.b2"])
    return T.reshape(logits, (B,))


def _l2_normalize(v: Tensor) -> Tensor:
    norm = T.sqrt((v * v).sum() + 1e-12)
    return v / norm


def contrastive_embeddings(encoded: Tensor, seqs: list[AssembledSequence]) -> tuple[Tensor, Tensor]:
    """Mean-pool the query and sentence segments, L2-normalized, per sample."""
    B, L, d = encoded.shape
    q_rows, s_rows = [], []
    for b, seq in enumerate(seqs):
        if seq.query_len < 1 or seq.sentence_len < 1:
            raise ContractError("contrastive embeddings need non-empty segments")
        q_seg = encoded[b, 1:1 + seq.query_len]
        s_seg = encoded[b, 2 + seq.query_len:seq.valid_len]
        q_rows.append(T.reshape(_l2_normalize(q_seg.mean(axis=0)), (1, d)))
        s_rows.append(T.reshape(_l2_normalize(s_seg.mean(axis=0)), (1, d)))
    return T.concat(q_rows, axis=0), T.concat(s_rows, axis=0)


def contrastive_loss(q_vecs: Tensor, s_vecs: Tensor, labels,
                     temperature: float = 0.07) -> Tensor:
    """Symmetric in-batch temperature-scaled cross-entropy over cosine similarities.

    Positive pairs must match their own partner against every other in-batch
    candidate, in both directions; negative pairs only serve as distractors.
    With no positives in the batch the loss is a constant 0.
    """
    labels = np.asarray(labels)
    B = q_vecs.shape[0]
    if B < 2:
        raise DegenerateBatchError("contrastive loss needs a batch of at least 2")
    pos = labels == 1
    n_pos = int(pos.sum())
    if n_pos == 0:
        return Tensor(np.zeros((), dtype=q_vecs.dtype))
    sim = T.matmul(q_vecs, T.transpose(s_vecs)) * (1.0 / temperature)
    row_lse = T.logsumexp(sim, axis=1)
    col_lse = T.logsumexp(sim, axis=0)
    eye = Tensor(np.eye(B, dtype=q_vecs.dtype))
    diag = (sim * eye).sum(axis=1)
    per_pair = row_lse + col_lse - diag * 2.0
    weights = Tensor(pos.astype(q_vecs.data.dtype))
    return (per_pair * weights).sum() * (1.0 / (2.0 * n_pos))


def total_loss(logits: Tensor, labels, q_vecs: Tensor | None, s_vecs: Tensor | None,
               loss_cfg: LossConfig) -> tuple[Tensor, dict]:
    """Combine the configured loss terms; returns (loss, components)."""
    labels = np.asarray(labels, dtype=float)
    parts: dict = {"positives": int((labels == 1).sum())}
    if loss_cfg.mode in ("bce", "bce+contrast"):
        bce = T.bce_with_logits(logits, labels)
        parts["bce"] = float(bce.data)
    if loss_cfg.mode in ("contrast", "bce+contrast"):
        if q_vecs is None or s_vecs is None:
            raise ContractError("contrastive mode needs segment embeddings")
        contrast = contrastive_loss(q_vecs, s_vecs, labels, loss_cfg.temperature)
        parts["contrast"] = float(contrast.data)
    if loss_cfg.mode == "bce":
        loss = bce
    elif loss_cfg.mode == "contrast":
        loss = contrast
    else:
        loss = bce + contrast * loss_cfg.contrast_weight
    parts["total"] = float(loss.data)
    return loss, parts


# ---------------------------------------------------------------------------
# Full forward pass
# ---------------------------------------------------------------------------


@dataclass
class ForwardResult:
    logits: Tensor
    encoded: Tensor
    seqs: list[AssembledSequence]


def forward(batch: Batch, params: ModelParameters, cfg: ModelConfig,
            mode: str = "eval", rng: np.random.Generator | None = None) -> ForwardResult:
    """Encode frames, assemble pairs, run the transformer, classify.

    Only real (unpadded) frames enter the encoder, so zero padding can never
    leak into batch statistics or embeddings.
    """
    B = batch.size
    chunks = []
    for b in range(B):
        chunks.append(batch.query_frames[b, :batch.query_lengths[b]])
        chunks.append(batch.sentence_frames[b, :batch.sentence_lengths[b]])
    all_frames = np.concatenate(chunks, axis=0)
    emb = encode_frames(all_frames, params, cfg, mode=mode)

    max_len = int(2 + (batch.query_lengths + batch.sentence_lengths).max())
    seqs = []
    offset = 0
    for b in range(B):
        tq = int(batch.query_lengths[b])
        ts = int(batch.sentence_lengths[b])
        q_emb = emb[offset:offset + tq]
        s_emb = emb[offset + tq:offset + tq + ts]
        offset += tq + ts
        seqs.append(assemble_pair_sequence(q_emb, s_emb, params, pad_to=max_len))
    encoded = transformer_encode(seqs, params, cfg, mode=mode, rng=rng)
    logits = classify(encoded, seqs, params, cfg)
    return ForwardResult(logits, encoded, seqs)


def sigmoid_np(z: np.ndarray) -> np.ndarray:
    """Stable elementwise logistic on plain arrays."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def predict_labels(logits: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Binary presence decision: sigmoid(logit) >= threshold."""
    return (sigmoid_np(logits) >= threshold).astype(np.int64)

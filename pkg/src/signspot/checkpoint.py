"""Binary checkpoints: a JSON manifest plus raw little-endian tensor payloads.

Layout: 6-byte magic, uint64 little-endian header length, UTF-8 JSON header,
then the concatenated tensor payloads at the offsets the header declares.
The header carries the format version, the model/train configs, optimizer
step, and early-stopping state, so training resumes deterministically.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import CheckpointError
from .model import ModelConfig, ModelParameters, expected_parameter_shapes, init_parameters
from .tensor import BatchNormState, Tensor

MAGIC = b"SSPOT\x00"
FORMAT_VERSION = 1


def _dtype_tag(dtype) -> str:
    return np.dtype(dtype).newbyteorder("<").str


def save_checkpoint(path, params: ModelParameters, opt_state=None,
                    train_cfg=None, fit_state=None) -> None:
    entries = []
    payloads = []
    offset = 0

    def push(name: str, kind: str, arr: np.ndarray):
        nonlocal offset
        raw = np.ascontiguousarray(arr, dtype=np.dtype(arr.dtype).newbyteorder("<"))
        entries.append({
            "name": name, "kind": kind, "shape": list(arr.shape),
            "dtype": _dtype_tag(arr.dtype), "offset": offset, "nbytes": raw.nbytes,
        })
        payloads.append(raw.tobytes())
        offset += raw.nbytes

    for name, tensor in params.items():
        push(name, "param", tensor.data)
    for name, state in params.bn_states.items():
        push(name, "bn_mean", state.running_mean)
        push(name, "bn_var", state.running_var)
    opt_step = 0
    if opt_state is not None:
        opt_step = opt_state.step
        for name, arr in opt_state.m.items():
            push(name, "opt_m", arr)
        for name, arr in opt_state.v.items():
            push(name, "opt_v", arr)

    header = {
        "format_version": FORMAT_VERSION,
        "model_config": params.config.to_dict(),
        "train_config": train_cfg.to_dict() if train_cfg is not None else None,
        "fit_state": fit_state.to_dict() if fit_state is not None else None,
        "opt_step": opt_step,
        "tensors": entries,
    }
    blob = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for raw in payloads:
            fh.write(raw)


class Checkpoint:
    def __init__(self, params: ModelParameters, train_cfg, fit_state_dict,
                 opt_m: dict, opt_v: dict, opt_step: int):
        self.params = params
        self.train_cfg = train_cfg
        self.fit_state_dict = fit_state_dict
        self.opt_m = opt_m
        self.opt_v = opt_v
        self.opt_step = opt_step

    def optimizer_state(self):
        from .training import OptimizerState

        opt = OptimizerState()
        opt.m = self.opt_m
        opt.v = self.opt_v
        opt.step = self.opt_step
        return opt

    def fit_state(self):
        from .training import FitState

        return FitState.from_dict(self.fit_state_dict) if self.fit_state_dict else None


def load_checkpoint(path) -> Checkpoint:
    """Parse and validate a checkpoint; any inconsistency is a hard error."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not blob.startswith(MAGIC):
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    if len(blob) < len(MAGIC) + 8:
        raise CheckpointError(f"{path} is truncated before the header")
    (header_len,) = struct.unpack_from("<Q", blob, len(MAGIC))
    header_start = len(MAGIC) + 8
    payload_start = header_start + header_len
    if len(blob) < payload_start:
        raise CheckpointError(f"{path} is truncated inside the header")
    try:
        header = json.loads(blob[header_start:payload_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path} has a corrupt header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {header.get('format_version')!r}, "
            f"expected {FORMAT_VERSION}"
        )
    model_cfg = ModelConfig.from_dict(header["model_config"])

    arrays: dict[tuple[str, str], np.ndarray] = {}
    for entry in header["tensors"]:
        start = payload_start + entry["offset"]
        end = start + entry["nbytes"]
        if end > len(blob):
            raise CheckpointError(
                f"{path} is truncated: tensor {entry['name']} wants bytes up to {end}"
            )
        arr = np.frombuffer(blob[start:end], dtype=np.dtype(entry["dtype"]))
        arr = arr.reshape(entry["shape"]).astype(np.dtype(entry["dtype"]).newbyteorder("="))
        arrays[(entry["kind"], entry["name"])] = arr

    expected = expected_parameter_shapes(model_cfg)
    tensors: dict[str, Tensor] = {}
    for name, shape in expected.items():
        key = ("param", name)
        if key not in arrays:
            raise CheckpointError(f"checkpoint is missing parameter {name!r}")
        arr = arrays[key]
        if tuple(arr.shape) != tuple(shape):
            raise CheckpointError(
                f"shape mismatch for {name!r}: checkpoint {tuple(arr.shape)}, "
                f"config expects {tuple(shape)}"
            )
        tensors[name] = Tensor(arr.copy())
    for kind, name in arrays:
        if kind == "param" and name not in expected:
            raise CheckpointError(f"checkpoint has unexpected parameter {name!r}")

    bn_states = {}
    template = init_parameters(model_cfg, seed=0)
    for name in template.bn_states:
        mean = arrays.get(("bn_mean", name))
        var = arrays.get(("bn_var", name))
        if mean is None or var is None:
            raise CheckpointError(f"checkpoint is missing batch-norm state {name!r}")
        state = BatchNormState(len(mean), dtype=mean.dtype)
        state.running_mean[:] = mean
        state.running_var[:] = var
        bn_states[name] = state

    params = ModelParameters(model_cfg, tensors, bn_states)
    opt_m = {name: arrays[(k, name)].copy() for k, name in arrays if k == "opt_m"}
    opt_v = {name: arrays[(k, name)].copy() for k, name in arrays if k == "opt_v"}

    train_cfg = None
    if header.get("train_config"):
        from .training import TrainConfig

        train_cfg = TrainConfig.from_dict(header["train_config"])
    return Checkpoint(params, train_cfg, header.get("fit_state"), opt_m, opt_v,
                      header.get("opt_step", 0))

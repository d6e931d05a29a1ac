"""Command-line interface: gen-synth, train, eval, predict, verify.

Exit codes: 0 success, 1 verification/metric failure, 2 usage error,
3 data/schema error. Every run writes a manifest with its config snapshot,
seeds, and input digests so results can be reproduced from the manifest
alone.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import checkpoint as ck
from . import model as M
from . import posedata as pd
from . import synthbench as sb
from . import training as tr
from . import verify as vf
from .errors import (
    CheckpointError,
    ConfigError,
    GenerationError,
    PoseParseError,
    SignspotError,
)

EXIT_OK = 0
EXIT_VERIFY_FAIL = 1
EXIT_USAGE = 2
EXIT_DATA = 3


class UsageError(SignspotError, ValueError):
    pass


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def parse_config_file(path: Path) -> dict:
    """Key-value lines like `train.lr = 0.0005`; values parse as JSON literals."""
    overrides: dict[str, object] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected `section.key = value`")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            overrides[key] = json.loads(value)
        except json.JSONDecodeError:
            overrides[key] = value
    return overrides


_SECTION_FIELDS = {
    "model": set(M.ModelConfig().to_dict()),
    "train": set(tr.TrainConfig().to_dict()) - {"loss", "augmentation"},
    "loss": set(M.LossConfig().to_dict()),
    "augment": {"mask_prob", "scale_range", "jitter_std", "noise_std", "seed"},
}


def apply_overrides(model_d: dict, train_d: dict, overrides: dict) -> None:
    for key, value in overrides.items():
        section, _, field = key.partition(".")
        if section not in _SECTION_FIELDS or field not in _SECTION_FIELDS[section]:
            raise UsageError(f"unknown config key {key!r}")
        if section == "model":
            model_d[field] = value
        elif section == "train":
            train_d[field] = value
        elif section == "loss":
            train_d["loss"][field] = value
        else:
            train_d["augmentation"][field] = value


def build_configs(args) -> tuple[M.ModelConfig, tr.TrainConfig]:
    model_d = M.ModelConfig().to_dict()
    train_d = tr.TrainConfig().to_dict()
    if getattr(args, "config", None):
        apply_overrides(model_d, train_d, parse_config_file(Path(args.config)))
    cli_map = {
        "lr": ("train", "lr"), "batch_size": ("train", "batch_size"),
        "epochs": ("train", "max_epochs"), "patience": ("train", "patience"),
        "monitor": ("train", "monitor"), "dtype": ("train", "dtype"),
        "sentence_cap": ("train", "max_sentence_frames"),
        "query_cap": ("train", "max_query_frames"),
        "threshold": ("train", "threshold"),
        "lr_schedule": ("train", "lr_schedule"),
        "target_accuracy": ("train", "target_metric"),
        "weight_decay": ("train", "weight_decay"),
        "clip_norm": ("train", "max_grad_norm"),
        "loss": ("loss", "mode"), "contrast_weight": ("loss", "contrast_weight"),
        "temperature": ("loss", "temperature"),
        "dropout": ("model", "dropout"), "d_model": ("model", "d_model"),
        "layers": ("model", "num_layers"), "heads": ("model", "num_heads"),
        "ffn_dim": ("model", "ffn_dim"), "encoder": ("model", "pose_encoder"),
        "head_pool": ("model", "head_pool"),
    }
    for attr, (section, field) in cli_map.items():
        value = getattr(args, attr, None)
        if value is None:
            continue
        if section == "model":
            model_d[field] = value
        elif section == "train":
            train_d[field] = value
        else:
            train_d["loss"][field] = value
    if getattr(args, "seed", None) is not None:
        train_d["seed"] = args.seed
        train_d["augmentation"]["seed"] = args.seed
    try:
        return M.ModelConfig.from_dict(model_d), tr.TrainConfig.from_dict(train_d)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc


def write_manifest(path: Path, command: str, config: dict, seeds: dict,
                   inputs: dict[str, str], outputs: list[str]) -> None:
    manifest = {
        "tool": "signspot",
        "version": __version__,
        "command": command,
        "seeds": seeds,
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# gen-synth
# ---------------------------------------------------------------------------


def cmd_gen_synth(args) -> int:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise UsageError(f"output directory {out} is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)

    preset = sb.PRESETS[args.preset]
    cfg: sb.SynthConfig = replace(preset["config"], seed=args.seed)
    if args.signs is not None:
        cfg = replace(cfg, num_signs=args.signs)
    if args.noise_std is not None:
        cfg = replace(cfg, instance_noise_std=args.noise_std)
    sizes = {
        "train": args.pairs if args.pairs is not None else preset["train_pairs"],
        "val": args.val_pairs if args.val_pairs is not None else preset["val_pairs"],
        "test": args.test_pairs if args.test_pairs is not None else preset["test_pairs"],
    }
    for split, n in sizes.items():
        if n % 2 != 0:
            raise UsageError(f"{split} pair count must be even to stay balanced, got {n}")

    lexicon = sb.generate_lexicon(cfg)
    pools = {"train": None, "val": None, "test": None}
    if args.holdout_signs > 0 and sizes["test"] > 0:
        main_pool, test_pool = sb.split_sign_pool(lexicon, args.holdout_signs, cfg.seed)
        pools = {"train": main_pool, "val": main_pool, "test": test_pool}

    outputs = []
    for salt, split in enumerate(("train", "val", "test"), start=1):
        n = sizes[split]
        if n == 0:
            continue
        data = sb.make_pair_dataset(lexicon, n, cfg, salt=salt,
                                    sign_pool=pools[split], id_prefix=f"{split}_")
        sequences = []
        seen = set()
        for p in data.samples:
            for seq in (p.sentence, p.query):
                if seq.id not in seen:
                    seen.add(seq.id)
                    sequences.append(seq)
        pd.save_pose_file(sequences, out / f"{split}_poses.jsonl")
        pd.save_pairs_file(data.pairs, out / f"{split}_pairs.jsonl")
        truth = {"sentences": data.truth, "query_signs": data.query_signs}
        (out / f"{split}_truth.json").write_text(
            json.dumps(truth, indent=2, sort_keys=True) + "\n")
        outputs += [f"{split}_poses.jsonl", f"{split}_pairs.jsonl", f"{split}_truth.json"]
        print(f"{split}: {n} pairs, {len(sequences)} sequences")

    digests = {name: sha256_file(out / name) for name in outputs}
    write_manifest(
        out / "manifest.json", "gen-synth",
        config={"preset": args.preset, "synth": cfg.__dict__ | {
            "signs_per_sentence": list(cfg.signs_per_sentence),
            "proto_frames": list(cfg.proto_frames),
            "time_warp_range": list(cfg.time_warp_range),
            "transition_frames": list(cfg.transition_frames),
            "still_frames": list(cfg.still_frames)},
            "sizes": sizes, "holdout_signs": args.holdout_signs},
        seeds={"synth": cfg.seed},
        inputs={}, outputs=sorted(digests),
    )
    (out / "digests.json").write_text(json.dumps(digests, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out}/manifest.json")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _load_split(data_dir: Path, split: str):
    poses = pd.load_pose_file(data_dir / f"{split}_poses.jsonl")
    pairs = pd.load_pairs_file(data_dir / f"{split}_pairs.jsonl")
    return pd.resolve_pairs(pairs, poses)


def _verify_digests(data_dir: Path) -> None:
    digest_file = data_dir / "digests.json"
    if not digest_file.exists():
        return
    recorded = json.loads(digest_file.read_text())
    for name, want in recorded.items():
        path = data_dir / name
        if not path.exists():
            raise PoseParseError(f"{name} listed in digests.json is missing")
        got = sha256_file(path)
        if got != want:
            raise PoseParseError(
                f"digest mismatch for {name}: file {got[:12]}.., manifest {want[:12]}.."
            )


def cmd_train(args) -> int:
    model_cfg, train_cfg = build_configs(args)
    data_dir = Path(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _verify_digests(data_dir)

    train_samples = _load_split(data_dir, "train")
    val_path = data_dir / "val_pairs.jsonl"
    if val_path.exists():
        val_samples = _load_split(data_dir, "val")
    else:
        train_samples, val_samples = pd.split_train_val(
            train_samples, 1.0 - args.val_split, train_cfg.seed)

    inputs = {
        str(p): sha256_file(p)
        for p in sorted(data_dir.glob("*_p*.jsonl")) if p.exists()
    }
    write_manifest(
        out / "manifest.json", "train",
        config={"model": model_cfg.to_dict(), "train": train_cfg.to_dict()},
        seeds={"train": train_cfg.seed},
        inputs=inputs,
        outputs=["model.ckpt", "history.jsonl", "metrics.json"],
    )

    train_prepared = tr.prepare_samples(train_samples, train_cfg)
    val_prepared = tr.prepare_samples(val_samples, train_cfg)
    params = M.init_parameters(model_cfg, train_cfg.seed, dtype=train_cfg.np_dtype)

    history_path = out / "history.jsonl"
    history_fh = open(history_path, "w", encoding="utf-8")

    def on_epoch(record: dict) -> None:
        history_fh.write(json.dumps(record, sort_keys=True) + "\n")
        history_fh.flush()
        print(f"epoch {record['epoch']}: train_loss {record['train_loss']:.4f} "
              f"val_acc {record['val_accuracy']:.4f} val_f1 {record['val_f1']:.4f}")

    opt = tr.OptimizerState()
    fit_state = tr.FitState()
    if args.resume:
        loaded = ck.load_checkpoint(args.resume)
        if loaded.params.config != model_cfg:
            raise CheckpointError(
                "checkpoint model config differs from the requested one; "
                "drop the conflicting flags or use the original config"
            )
        params = loaded.params
        params.set_requires_grad(True)
        opt = loaded.optimizer_state()
        fit_state = loaded.fit_state() or tr.FitState()

    try:
        result = tr.fit(params, train_prepared, val_prepared, model_cfg, train_cfg,
                        opt=opt, fit_state=fit_state, on_epoch=on_epoch)
    finally:
        history_fh.close()

    ck.save_checkpoint(out / "model.ckpt", result.best_params, opt_state=opt,
                       train_cfg=train_cfg,
                       fit_state=tr.FitState(result.stopped_epoch, result.best_metric,
                                             result.best_epoch, 0))
    final = tr.evaluate(result.best_params, val_prepared, model_cfg, train_cfg)
    (out / "metrics.json").write_text(json.dumps(final.to_dict(), indent=2) + "\n")
    print(f"best epoch {result.best_epoch}: val {train_cfg.monitor} "
          f"{result.best_metric:.4f}; checkpoint at {out / 'model.ckpt'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval / predict
# ---------------------------------------------------------------------------


def _load_checkpoint_for_inference(path: str):
    loaded = ck.load_checkpoint(path)
    train_cfg = loaded.train_cfg or tr.TrainConfig()
    return loaded.params, loaded.params.config, train_cfg


def cmd_eval(args) -> int:
    params, model_cfg, train_cfg = _load_checkpoint_for_inference(args.checkpoint)
    poses = pd.load_pose_file(args.poses)
    pairs = pd.load_pairs_file(args.pairs)
    samples = tr.prepare_samples(pd.resolve_pairs(pairs, poses), train_cfg)
    threshold = args.threshold if args.threshold is not None else train_cfg.threshold
    report = tr.evaluate(params, samples, model_cfg, train_cfg, threshold=threshold)
    print(f"accuracy  {report.accuracy:.4f}")
    print(f"precision {report.precision:.4f}")
    print(f"recall    {report.recall:.4f}")
    print(f"f1        {report.f1:.4f}")
    print(f"confusion tp={report.tp} fp={report.fp} tn={report.tn} fn={report.fn}")
    for flag in report.flags:
        print(f"note: {flag}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return EXIT_OK


def cmd_predict(args) -> int:
    params, model_cfg, train_cfg = _load_checkpoint_for_inference(args.checkpoint)
    poses = {s.id: s for s in pd.load_pose_file(args.poses)}
    try:
        sentence = poses[args.sentence_id]
        query = poses[args.query_id]
    except KeyError as exc:
        raise PoseParseError(f"id {exc.args[0]!r} not found in {args.poses}") from None
    prob = tr.predict_pair(params, sentence, query, model_cfg, train_cfg)
    threshold = args.threshold if args.threshold is not None else train_cfg.threshold
    verdict = "present" if prob >= threshold else "absent"
    print(f"probability {prob:.6f}")
    print(f"verdict     {verdict} (threshold {threshold})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def cmd_verify(args) -> int:
    names = args.only.split(",") if args.only else None
    results = vf.run_checks(names=names, seed=args.seed if args.seed is not None else 0)
    width = max(len(r.name) for r in results)
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name:<{width}}  {r.seconds:7.2f}s  {r.detail}")
        failed += not r.passed
    total = sum(r.seconds for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed in {total:.1f}s")
    return EXIT_OK if failed == 0 else EXIT_VERIFY_FAIL


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="signspot",
        description="Pose-based sign spotting: train and query a word-presence model.",
    )
    parser.add_argument("--version", action="version", version=f"signspot {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", help="generate a synthetic planted-query benchmark")
    g.add_argument("--preset", choices=sorted(sb.PRESETS), default="clean")
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--out", required=True)
    g.add_argument("--force", action="store_true",
                   help="overwrite a non-empty output directory")
    g.add_argument("--pairs", type=int, help="training pairs (preset default otherwise)")
    g.add_argument("--val-pairs", type=int, dest="val_pairs")
    g.add_argument("--test-pairs", type=int, dest="test_pairs")
    g.add_argument("--signs", type=int, help="lexicon size")
    g.add_argument("--noise-std", type=float, dest="noise_std")
    g.add_argument("--holdout-signs", type=float, default=0.2, dest="holdout_signs",
                   help="fraction of signs reserved for the test split")
    g.set_defaults(fn=cmd_gen_synth)

    t = sub.add_parser("train", help="train the spotting model")
    t.add_argument("--data", required=True, help="directory from gen-synth")
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="key-value config file")
    t.add_argument("--resume", help="checkpoint to resume from")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--val-split", type=float, default=0.2, dest="val_split",
                   help="val fraction when the data dir has no val manifest")
    # published recipe defaults
    t.add_argument("--lr", type=float, default=None, help="learning rate (default 0.0005)")
    t.add_argument("--epochs", type=int, default=None, help="max epochs (default 50)")
    t.add_argument("--patience", type=int, default=None, help="early-stop patience (default 5)")
    t.add_argument("--dropout", type=float, default=None, help="dropout rate (default 0.02)")
    t.add_argument("--temperature", type=float, default=None,
                   help="contrastive temperature (default 0.07)")
    t.add_argument("--lambda", type=float, default=None, dest="contrast_weight",
                   help="contrastive weight in bce+contrast (default 0.5)")
    t.add_argument("--loss", choices=["bce", "contrast", "bce+contrast"], default=None,
                   help="training objective (default bce+contrast)")
    t.add_argument("--encoder", choices=["2d", "1d"], default=None,
                   help="pose encoder variant (default 2d)")
    # local defaults (not part of the published recipe)
    t.add_argument("--batch-size", type=int, default=None, dest="batch_size",
                   help="batch size (local default 32)")
    t.add_argument("--d-model", type=int, default=None, dest="d_model")
    t.add_argument("--layers", type=int, default=None)
    t.add_argument("--heads", type=int, default=None)
    t.add_argument("--ffn-dim", type=int, default=None, dest="ffn_dim")
    t.add_argument("--head-pool", choices=["cls", "max_all"], default=None, dest="head_pool")
    t.add_argument("--monitor", choices=["accuracy", "f1"], default=None)
    t.add_argument("--dtype", choices=["float32", "float64"], default=None)
    t.add_argument("--sentence-cap", type=int, default=None, dest="sentence_cap")
    t.add_argument("--query-cap", type=int, default=None, dest="query_cap")
    t.add_argument("--threshold", type=float, default=None)
    t.add_argument("--lr-schedule", choices=["none", "cosine"], default=None,
                   dest="lr_schedule")
    t.add_argument("--target-accuracy", type=float, default=None, dest="target_accuracy",
                   help="stop once the monitored metric reaches this value")
    t.add_argument("--weight-decay", type=float, default=None, dest="weight_decay")
    t.add_argument("--clip-norm", type=float, default=None, dest="clip_norm")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a pairs manifest")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--poses", required=True)
    e.add_argument("--pairs", required=True)
    e.add_argument("--out")
    e.add_argument("--threshold", type=float, default=None)
    e.set_defaults(fn=cmd_eval)

    p = sub.add_parser("predict", help="presence verdict for one sentence/query pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--poses", required=True)
    p.add_argument("--sentence-id", required=True, dest="sentence_id")
    p.add_argument("--query-id", required=True, dest="query_id")
    p.add_argument("--threshold", type=float, default=None)
    p.set_defaults(fn=cmd_predict)

    v = sub.add_parser("verify", help="run the invariant suite")
    v.add_argument("--seed", type=int, default=None)
    v.add_argument("--only", help="comma-separated subset of check names")
    v.set_defaults(fn=cmd_verify)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PoseParseError, CheckpointError, GenerationError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SignspotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

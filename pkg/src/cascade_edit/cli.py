"""Command line: ``cascade-edit {gen-data,train,edit,eval}``.

Exit codes: 0 success, 2 usage / invalid argument, 3 missing dependency
checkpoint, 4 training divergence, 5 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

from .config import SPLIT_PRESETS, RunConfig
from .errors import CascadeEditError, DataIOError, DependencyError

STAGE_DEPS = {"ae": (), "stage1": ("ae",), "warp": (), "stage2": ("ae", "warp")}


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    if args.set:
        cfg = cfg.override(args.set)
    if getattr(args, "split", None):
        cfg.split_ratios = SPLIT_PRESETS[args.split]
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg.validate()


def _write_text(path: str, text: str) -> None:
    try:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w") as fh:
            fh.write(text)
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc


def _manifest(data_dir: str):
    from .synthdata import DatasetManifest

    return DatasetManifest.load(data_dir)


def cmd_gen_data(args) -> int:
    from .synthdata import make_dataset

    cfg = _config(args)
    out = args.out or cfg.data_dir
    make_dataset(cfg.n_identities, cfg.clips_per_identity, cfg.frames_per_clip, cfg.split_ratios,
                 out, seed=cfg.seed, resolution=cfg.resolution, fps=cfg.fps)
    _write_text(os.path.join(out, "config.json"), cfg.to_json())
    print(os.path.join(out, "manifest.json"))
    return 0


def _heldout(manifest):
    from .synthdata import load_split

    # held-out loss is only logged, never used for model selection
    return load_split(manifest, "val" if manifest.splits.get("val") else "test")


def cmd_train(args) -> int:
    from .checkpoint import load_checkpoint, save_checkpoint
    from .edit_pipeline import checkpoint_path

    cfg = _config(args)
    data_dir = args.data or cfg.data_dir
    ckpt_dir = args.ckpt_dir or cfg.ckpt_dir
    stage = args.stage
    for dep in STAGE_DEPS[stage]:
        p = checkpoint_path(ckpt_dir, dep)
        if not os.path.exists(p):
            raise DependencyError(f"training {stage} needs the {dep!r} checkpoint; not found at {p}")
    manifest = _manifest(data_dir)

    ae = None
    if "ae" in STAGE_DEPS[stage]:
        from .latent_ae import LatentAE

        ae = LatentAE.from_checkpoint(load_checkpoint(checkpoint_path(ckpt_dir, "ae"), "ae"))
    if stage == "ae":
        from .latent_ae import train_ae

        ckpt = train_ae(manifest, cfg)
    elif stage == "stage1":
        from .motion_diffusion import train_stage1

        ckpt = train_stage1(manifest, ae, cfg, heldout=_heldout(manifest))
    elif stage == "warp":
        from .ipiw import train_warp

        ckpt = train_warp(manifest, cfg)
    else:
        from .ipiw import WarpModel
        from .refine_diffusion import train_stage2

        warp = WarpModel.from_checkpoint(load_checkpoint(checkpoint_path(ckpt_dir, "warp"), "warp"))
        ckpt = train_stage2(manifest, ae, warp, cfg, heldout=_heldout(manifest))

    path = save_checkpoint(ckpt, checkpoint_path(ckpt_dir, stage))
    try:
        with open(os.path.join(ckpt_dir, f"{stage}_loss.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "loss"])
            for step, loss in ckpt.extra.get("history", []):
                w.writerow([step, repr(float(loss))])
    except OSError as exc:
        raise DataIOError(f"cannot write loss curve: {exc}") from exc
    _write_text(os.path.join(ckpt_dir, f"{stage}_config.json"), cfg.to_json())
    print(path)
    return 0


def cmd_edit(args) -> int:
    from .edit_pipeline import load_models, run_edit, write_edit
    from .plan import EditSpec
    from .synthdata import AudioFeatureSequence, LandmarkSequence, VideoClip, edit_audio, load_clip

    cfg = _config(args)
    clip = load_clip(args.clip)
    end = args.start if args.end is None else args.end
    spec = EditSpec(args.op, (args.start, end), args.new_len, args.audio_seed)
    models = load_models(args.ckpt_dir)
    audio = AudioFeatureSequence(clip.features, clip.envelope)
    audio_edited, plan = edit_audio(audio, spec)
    video = VideoClip(clip.frames, float(clip.meta.get("fps", cfg.fps)), clip.identity or "clip")
    seed = cfg.seed if args.seed is None else args.seed
    result = run_edit(video, LandmarkSequence(clip.keypoints), audio_edited, plan, models, seed)
    extra = {}
    if "identity" in clip.meta:
        extra["identity"] = clip.meta["identity"]
    write_edit(args.out, result, audio_edited, spec, extra)
    _write_text(os.path.join(args.out, "config.json"), cfg.to_json())
    print(args.out)
    return 0


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .edit_pipeline import checkpoint_path, read_plan
    from .landmarks import mouth_roi
    from .latent_ae import LatentAE
    from .metrics import evaluate
    from .synthdata import load_clip

    cfg = _config(args)
    ae_path = checkpoint_path(args.ckpt_dir, "ae")
    if not os.path.exists(ae_path):
        raise DependencyError(f"eval needs the 'ae' checkpoint; not found at {ae_path}")
    ae = LatentAE.from_checkpoint(load_checkpoint(ae_path, "ae"))
    edited = load_clip(args.edited)
    reference = load_clip(args.reference)
    plan = read_plan(args.edited)
    res = edited.frames.shape[1:3]
    roi = mouth_roi(reference.keypoints, resolution=res)
    report = evaluate(edited.frames, reference.frames, plan, edited.envelope, ae, roi,
                      margin=args.margin, config=cfg.to_dict())
    out = args.out or args.edited
    _write_text(os.path.join(out, "report.json"), report.to_json())
    _write_text(os.path.join(out, "report.txt"), report.table(os.path.basename(os.path.normpath(args.edited))))
    _write_text(os.path.join(out, "config.json"), cfg.to_json())
    print(os.path.join(out, "report.json"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config (defaults apply when omitted)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field; repeatable")
    common.add_argument("--seed", type=int, help="global seed (else config, else $CASCADE_EDIT_SEED)")
    common.add_argument("-v", "--verbose", action="store_true", help="log training progress")

    p = argparse.ArgumentParser(prog="cascade-edit", description="Synthetic talking-head editing pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="generate the synthetic dataset")
    g.add_argument("--out", help="dataset root (default: config data_dir)")
    g.add_argument("--split", choices=sorted(SPLIT_PRESETS), help="training-share preset in percent")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", parents=[common], help="train one model")
    t.add_argument("stage", choices=list(STAGE_DEPS))
    t.add_argument("--data", help="dataset root (default: config data_dir)")
    t.add_argument("--ckpt-dir", help="checkpoint directory (default: config ckpt_dir)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("edit", parents=[common], help="edit one clip")
    e.add_argument("--clip", required=True, help="clip directory in the dataset layout")
    e.add_argument("--ckpt-dir", required=True, help="directory holding ae/stage1/warp/stage2 checkpoints")
    e.add_argument("--op", required=True, choices=["insert", "delete", "substitute"])
    e.add_argument("--start", type=int, required=True)
    e.add_argument("--end", type=int, help="inclusive interval end (defaults to --start)")
    e.add_argument("--new-len", type=int, default=0, help="generated frame count (insert/substitute)")
    e.add_argument("--audio-seed", type=int, default=0, help="seed of the synthesized replacement speech")
    e.add_argument("--out", required=True, help="output clip directory")
    e.set_defaults(func=cmd_edit)

    v = sub.add_parser("eval", parents=[common], help="score an edited clip against a reference")
    v.add_argument("--edited", required=True, help="edited clip directory (with edit_plan.json)")
    v.add_argument("--reference", required=True, help="aligned reference clip directory")
    v.add_argument("--ckpt-dir", required=True, help="directory holding the ae checkpoint")
    v.add_argument("--margin", type=int, default=2, help="transition margin in frames")
    v.add_argument("--out", help="report directory (default: the edited clip directory)")
    v.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CascadeEditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())

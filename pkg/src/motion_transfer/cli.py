"""Command-line surface: prepare, train, transfer, eval.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Runtime failures
print a single machine-parsable "error: ..." line to stderr.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="motion-transfer",
        description="Three-stage human motion transfer pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_prep = sub.add_parser("prepare", help="crop/smooth a raw dataset")
    p_prep.add_argument("--manifest", required=True)
    p_prep.add_argument("--out", required=True)
    p_prep.add_argument("--config")

    p_train = sub.add_parser("train", help="train one pipeline stage")
    p_train.add_argument("stage",
                         choices=["parsing", "flow", "foreground", "fusion"])
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--no-flow", action="store_true",
                         help="foreground stage ablation: identity flow")

    p_tr = sub.add_parser("transfer", help="synthesize a video")
    p_tr.add_argument("--appearance", required=True,
                      help="appearance crop PNG (working resolution)")
    p_tr.add_argument("--source", required=True,
                      help="source keypoint file (working-crop coordinates)")
    p_tr.add_argument("--out", required=True, help="output frame directory")
    p_tr.add_argument("--appearance-parsing",
                      help="parsing PNG; default: non-black pixels = class 1")
    p_tr.add_argument("--appearance-pose",
                      help="single-frame keypoint file for the appearance image")
    p_tr.add_argument("--bg", help="background PNG; default: black canvas")
    p_tr.add_argument("--models", help="checkpoint directory from `train`")
    p_tr.add_argument("--config")
    p_tr.add_argument("--seed", type=int, default=0)
    p_tr.add_argument("--no-flow", action="store_true")
    p_tr.add_argument("--no-fusion", action="store_true")

    p_eval = sub.add_parser("eval", help="evaluation metrics")
    eval_sub = p_eval.add_subparsers(dest="metric", required=True)
    p_fvd = eval_sub.add_parser("fvd")
    p_fvd.add_argument("--real", required=True)
    p_fvd.add_argument("--fake", required=True)
    p_fvd.add_argument("--embedder", default="random",
                       help="'random' or 'i3d:<weights-path>'")
    p_fvd.add_argument("--clip-len", type=int, default=30)
    p_fvd.add_argument("--dim", type=int, default=64,
                       help="random embedder output dimension")
    return parser


def _load_pipeline_config(path, args):
    from .pipeline import PipelineConfig

    cfg = PipelineConfig.load(path) if path else PipelineConfig()
    if getattr(args, "no_flow", False):
        cfg.no_flow = True
    if getattr(args, "no_fusion", False):
        cfg.no_fusion = True
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _cmd_prepare(args):
    from .pipeline import DatasetManifest, PipelineConfig, prepare

    manifest = DatasetManifest.load(args.manifest)
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    report = prepare(manifest, args.out, cfg)
    print(json.dumps(report, sort_keys=True))
    return 0 if all(v == "ok" for v in report.values()) else 1


def _cmd_train(args):
    from . import datasets
    from .flow_stage import FlowStageConfig, train_flow_stage
    from .foreground_stage import ForegroundStageConfig, train_foreground_stage
    from .fusion_stage import FusionStageConfig, train_fusion_stage
    from .parsing_stage import ParsingStageConfig, train_parsing_stage
    from .pipeline import load_models

    with open(args.config, "r", encoding="utf-8") as f:
        raw = json.load(f)
    out_path = raw.pop("out", f"{args.stage}.pt")
    steps = raw.pop("steps", None)
    data_dir = raw.pop("data_dir", None)
    manifest = raw.pop("manifest", None)
    num_scenes = raw.pop("num_scenes", 8)
    pose_sigma = raw.pop("pose_sigma", 6.0)
    flow_checkpoint = raw.pop("flow_checkpoint", None)

    if args.stage == "parsing":
        cfg = ParsingStageConfig(**raw)
        samples = datasets.parsing_samples(data_dir, cfg.num_classes, pose_sigma)
        _, losses = train_parsing_stage(samples, cfg, seed=args.seed,
                                        steps=steps, checkpoint_path=out_path)
    elif args.stage == "flow":
        from .synthetic import flow_training_samples

        cfg = FlowStageConfig(**raw)
        samples = flow_training_samples(num_scenes, size=cfg.image_size,
                                        seed=args.seed)
        _, losses = train_flow_stage(samples, cfg, seed=args.seed,
                                     steps=steps, checkpoint_path=out_path)
    elif args.stage == "foreground":
        cfg = ForegroundStageConfig(**raw)
        if args.no_flow:
            cfg.use_flow = False
        flow_model = None
        if flow_checkpoint and cfg.use_flow:
            from .checkpoint import load_checkpoint
            from .flow_stage import FlowRegressor

            state, flow_raw = load_checkpoint(flow_checkpoint)
            flow_model = FlowRegressor(FlowStageConfig(**flow_raw))
            flow_model.load_state_dict(state["flow_regressor"])
        samples = datasets.foreground_samples(data_dir, cfg.num_classes,
                                              pose_sigma, flow_model)
        _, _, curves = train_foreground_stage(samples, cfg, seed=args.seed,
                                              steps=steps,
                                              checkpoint_path=out_path)
        losses = curves["g_total"]
    else:
        cfg = FusionStageConfig(**raw)
        clips = datasets.fusion_clips(manifest, cfg.clip_length, seed=args.seed)
        _, losses = train_fusion_stage(clips, cfg, seed=args.seed,
                                       steps=steps, checkpoint_path=out_path)

    print(json.dumps({"stage": args.stage, "checkpoint": str(out_path),
                      "steps": len(losses), "final_loss": losses[-1]}))
    return 0


def _cmd_transfer(args):
    from .pipeline import build_models, load_models, transfer
    from .pose import N_JOINTS, load_keypoints
    from .regions import ParsingMap, load_frame, load_parsing, save_frame

    cfg = _load_pipeline_config(args.config, args)
    app_frame = load_frame(args.appearance)
    size = app_frame.shape[0]
    if size != cfg.working_size:
        cfg.working_size = size
        cfg.parsing.image_size = size
        cfg.flow.image_size = size
        cfg.foreground.image_size = size

    if args.appearance_parsing:
        app_parsing = load_parsing(args.appearance_parsing,
                                   cfg.parsing.num_classes)
    else:
        labels = (app_frame.sum(axis=2) > 0).astype(np.int32)
        app_parsing = ParsingMap(labels, cfg.parsing.num_classes)

    source = load_keypoints(args.source)
    if args.appearance_pose:
        app_pose = load_keypoints(args.appearance_pose).frames[0]
    else:
        app_pose = np.zeros((N_JOINTS, 3))

    if args.bg:
        bg = load_frame(args.bg)
    else:
        bg = np.zeros((size, size, 3), dtype=np.float32)

    models = load_models(args.models, cfg) if args.models else build_models(cfg)
    frames = transfer((app_frame, app_parsing, app_pose), source, models, bg, cfg)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(frames):
        save_frame(np.clip(frame, 0, 1), out_dir / f"frame_{t:05d}.png")
    print(json.dumps({"frames": len(frames), "out": str(out_dir)}))
    return 0


def _load_video_dirs(root):
    from .regions import load_frame

    root = Path(root)
    videos = []
    subdirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not subdirs:  # a single flat frame directory is one video
        subdirs = [root]
    for vdir in subdirs:
        frames = [load_frame(p) for p in sorted(vdir.glob("*.png"))]
        if frames:
            videos.append(frames)
    if not videos:
        raise ValueError(f"no PNG videos under {root}")
    return videos


def _cmd_eval_fvd(args):
    from .fvd import RandomProjectionEmbedder, TorchScriptClipEmbedder, compute_fvd

    if args.embedder == "random":
        embedder = RandomProjectionEmbedder(dim=args.dim, clip_len=args.clip_len)
        dim = args.dim
    elif args.embedder.startswith("i3d:"):
        embedder = TorchScriptClipEmbedder(args.embedder[4:],
                                           clip_len=args.clip_len)
        dim = None
    else:
        raise ValueError(f"unknown embedder {args.embedder!r}")

    real = _load_video_dirs(args.real)
    fake = _load_video_dirs(args.fake)
    value = compute_fvd(real, fake, embedder, clip_len=args.clip_len)
    if dim is None:
        dim = len(embedder(real[0][: args.clip_len]))
    print(json.dumps({"fvd": value, "n_real": len(real),
                      "n_fake": len(fake), "d": dim}))
    return 0


def run_command(argv):
    """Parse and execute; returns the process exit status."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 2
    try:
        if args.command == "prepare":
            return _cmd_prepare(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "transfer":
            return _cmd_transfer(args)
        if args.command == "eval":
            return _cmd_eval_fvd(args)
        return 2
    except Exception as exc:  # noqa: BLE001 - single-line CLI error contract
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()

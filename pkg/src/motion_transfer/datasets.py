"""Builders turning prepared/raw datasets into per-stage training samples."""

import json
from pathlib import Path

import numpy as np

from .flow_stage import predict_flow
from .foreground_stage import identity_flow
from .pipeline import DatasetManifest
from .pose import load_keypoints, rasterize_pose
from .regions import ParsingMap, load_frame, load_parsing


def _video_dirs(prepared_dir, split="train"):
    out = []
    for vdir in sorted(Path(prepared_dir).iterdir()):
        app_file = vdir / "appearance.json"
        if not app_file.exists():
            continue
        with open(app_file, "r", encoding="utf-8") as f:
            meta = json.load(f)
        if meta["split"] == split:
            out.append((vdir, meta["index"]))
    if not out:
        raise ValueError(f"no prepared {split} videos under {prepared_dir}")
    return out


def _crop_files(vdir, sub):
    return sorted((vdir / sub).glob("frame_*.png"))


def parsing_samples(prepared_dir, num_classes, pose_sigma=6.0, split="train"):
    """(appearance ParsingMap, pose map, target ParsingMap) triples."""
    samples = []
    for vdir, app_idx in _video_dirs(prepared_dir, split):
        parsing_files = _crop_files(vdir, "parsing")
        seq = load_keypoints(vdir / "crop_keypoints.txt")
        size = load_parsing(parsing_files[0], num_classes).labels.shape[0]
        app_parsing = load_parsing(parsing_files[app_idx], num_classes)
        for t, pfile in enumerate(parsing_files):
            pose_map = rasterize_pose(seq.frames[t], size, size, pose_sigma)
            samples.append((app_parsing, pose_map, load_parsing(pfile, num_classes)))
    return samples


def foreground_samples(prepared_dir, num_classes, pose_sigma=6.0,
                       flow_model=None, split="train"):
    """(appearance fg, target ParsingMap, flow, vis, target fg) tuples.

    Foregrounds are crop * foreground-mask; flow/vis come from a trained
    regressor on the (appearance, target) pose-map pair, or are the
    identity when no model is given.
    """
    samples = []
    for vdir, app_idx in _video_dirs(prepared_dir, split):
        crop_files = _crop_files(vdir, "crops")
        parsing_files = _crop_files(vdir, "parsing")
        seq = load_keypoints(vdir / "crop_keypoints.txt")
        app_parsing = load_parsing(parsing_files[app_idx], num_classes)
        app_fg = load_frame(crop_files[app_idx]) * \
            app_parsing.foreground[..., None]
        size = app_fg.shape[0]
        app_pose_map = rasterize_pose(seq.frames[app_idx], size, size, pose_sigma)
        for t, (cfile, pfile) in enumerate(zip(crop_files, parsing_files)):
            parsing_t = load_parsing(pfile, num_classes)
            target_fg = load_frame(cfile) * parsing_t.foreground[..., None]
            if flow_model is None:
                flow, vis = identity_flow(size, size)
            else:
                pose_map = rasterize_pose(seq.frames[t], size, size, pose_sigma)
                flow, vis = predict_flow(flow_model, app_pose_map, pose_map)
            samples.append((app_fg, parsing_t, flow, vis, target_fg))
    return samples


def fusion_clips(manifest_path, clip_length=5, split="train", seed=0):
    """(bg, [fg frames], [gt frames], bootstrap mask) clips of consecutive
    raw frames; foregrounds are parsing-masked ground-truth frames."""
    manifest = DatasetManifest.load(manifest_path)
    rng = np.random.default_rng(seed)
    clips = []
    for video in manifest.videos:
        if video.split != split:
            continue
        frame_files = sorted(Path(video.frame_dir).glob("*.png"))
        parsing_files = sorted(Path(video.parsing_dir).glob("*.png"))
        if len(frame_files) < clip_length:
            continue
        bg = load_frame(video.background)
        start = int(rng.integers(0, len(frame_files) - clip_length + 1))
        fgs, gts = [], []
        mask0 = None
        for t in range(start, start + clip_length):
            frame = load_frame(frame_files[t])
            parsing = load_parsing(parsing_files[t], manifest.num_classes)
            fg_mask = parsing.foreground.astype(np.float32)
            if mask0 is None:
                mask0 = fg_mask
            fgs.append(frame * fg_mask[..., None])
            gts.append(frame)
        clips.append((bg, fgs, gts, mask0))
    if not clips:
        raise ValueError(f"no usable {split} clips in {manifest_path}")
    return clips

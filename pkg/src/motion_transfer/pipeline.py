"""Dataset layout, preparation, and end-to-end transfer orchestration.

A dataset manifest is a single JSON file listing per-video inputs: frame
directory, keypoint file, parsing directory, background image, split tag.
Relative paths resolve against MOTION_TRANSFER_DATA_ROOT when set,
otherwise against the manifest's own directory.
"""

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import flow_stage, foreground_stage, fusion_stage, parsing_stage
from .flow_stage import FlowStageConfig, predict_flow
from .foreground_stage import ForegroundStageConfig, generate_foreground, identity_flow
from .fusion_stage import FusionStageConfig, fuse_sequence, overlay
from .parsing_stage import ParsingStageConfig, generate_parsing
from .pose import (PoseSequence, load_keypoints, rasterize_pose, save_keypoints,
                   select_appearance_frame, smooth_sequence)
from .regions import (CropRecord, ParsingMap, composite, crop_foreground,
                      load_frame, load_parsing, restore_mask_to_frame,
                      restore_to_frame, save_frame, save_parsing)

DATA_ROOT_ENV = "MOTION_TRANSFER_DATA_ROOT"


@dataclass
class VideoEntry:
    name: str
    frame_dir: str
    keypoint_file: str
    parsing_dir: str
    background: str
    split: str = "train"
    resolution: tuple = (720, 1280)
    appearance_index: int | None = None

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ValueError(f"video {self.name}: split must be train or test")


@dataclass
class DatasetManifest:
    videos: list
    num_classes: int = 20

    @classmethod
    def load(cls, path):
        path = Path(path)
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
        root = Path(os.environ.get(DATA_ROOT_ENV, path.parent))
        videos = []
        for entry in raw["videos"]:
            entry = dict(entry)
            for key in ("frame_dir", "keypoint_file", "parsing_dir", "background"):
                entry[key] = str(root / entry[key])
            if "resolution" in entry:
                entry["resolution"] = tuple(entry["resolution"])
            videos.append(VideoEntry(**entry))
        return cls(videos=videos, num_classes=raw.get("num_classes", 20))


@dataclass
class PipelineConfig:
    parsing: ParsingStageConfig = field(default_factory=ParsingStageConfig)
    flow: FlowStageConfig = field(default_factory=FlowStageConfig)
    foreground: ForegroundStageConfig = field(default_factory=ForegroundStageConfig)
    fusion: FusionStageConfig = field(default_factory=FusionStageConfig)
    working_size: int = 448
    pose_sigma: float = 6.0
    smooth_window: int = 11
    smooth_polyorder: int = 3
    no_flow: bool = False
    no_fusion: bool = False
    seed: int = 0

    def __post_init__(self):
        # generators downsample by 4; the U-Net by 2**depth
        stride = max(4, 2 ** self.flow.depth)
        if self.working_size % stride != 0:
            raise ValueError(
                f"working size {self.working_size} not divisible by stride {stride}")

    @classmethod
    def from_dict(cls, raw):
        raw = dict(raw)
        kwargs = {}
        for name, sub_cls in (("parsing", ParsingStageConfig),
                              ("flow", FlowStageConfig),
                              ("foreground", ForegroundStageConfig),
                              ("fusion", FusionStageConfig)):
            if name in raw:
                kwargs[name] = sub_cls(**raw.pop(name))
        kwargs.update(raw)
        return cls(**kwargs)

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


@dataclass
class PipelineModels:
    parsing: object
    flow: object
    foreground: object
    fusion: object


def build_models(cfg, seed=None):
    """Freshly initialized stage models, deterministic under the seed."""
    import torch

    torch.manual_seed(cfg.seed if seed is None else seed)
    return PipelineModels(
        parsing=parsing_stage.ParsingGenerator(cfg.parsing),
        flow=flow_stage.FlowRegressor(cfg.flow),
        foreground=foreground_stage.DualPathGenerator(cfg.foreground),
        fusion=fusion_stage.FusionNetwork(cfg.fusion),
    )


def load_models(models_dir, cfg):
    """Load stage checkpoints <models_dir>/{parsing,flow,foreground,fusion}.pt."""
    from .checkpoint import load_checkpoint

    models_dir = Path(models_dir)
    models = build_models(cfg)
    state, _ = load_checkpoint(models_dir / "parsing.pt")
    models.parsing.load_state_dict(state["generator"])
    state, _ = load_checkpoint(models_dir / "flow.pt")
    models.flow.load_state_dict(state["flow_regressor"])
    state, _ = load_checkpoint(models_dir / "foreground.pt")
    models.foreground.load_state_dict(state["generator"])
    state, _ = load_checkpoint(models_dir / "fusion.pt")
    models.fusion.load_state_dict(state["fusion"])
    return models


def pose_to_crop(pose_frame, rec):
    """Map full-frame keypoints into working-crop coordinates."""
    out = np.asarray(pose_frame, dtype=np.float64).copy()
    out[:, 0] = (out[:, 0] - rec.left + rec.pad_left) * rec.scale
    out[:, 1] = (out[:, 1] - rec.top + rec.pad_top) * rec.scale
    return out


def _frame_files(directory):
    files = sorted(p for p in Path(directory).iterdir() if p.suffix == ".png")
    if not files:
        raise FileNotFoundError(f"no PNG frames in {directory}")
    return files


def prepare_video(video, out_dir, cfg, num_classes):
    """Smooth poses, pick the appearance frame, and write 448x448 crops."""
    out = Path(out_dir) / video.name
    (out / "crops").mkdir(parents=True, exist_ok=True)
    (out / "parsing").mkdir(exist_ok=True)
    (out / "records").mkdir(exist_ok=True)

    seq = load_keypoints(video.keypoint_file)
    window = min(cfg.smooth_window, len(seq) if len(seq) % 2 else len(seq) - 1)
    if window > cfg.smooth_polyorder:
        seq = smooth_sequence(seq, window, cfg.smooth_polyorder)
    save_keypoints(seq, out / "smoothed_keypoints.txt")

    app_index = select_appearance_frame(seq)
    if video.appearance_index is not None and video.appearance_index != app_index:
        raise ValueError(
            f"manifest appearance index {video.appearance_index} does not match "
            f"selected index {app_index}")

    frame_files = _frame_files(video.frame_dir)
    parsing_files = _frame_files(video.parsing_dir)
    if len(frame_files) != len(parsing_files) or len(frame_files) != len(seq):
        raise ValueError(f"video {video.name}: frame/parsing/pose counts differ")

    crop_poses = np.zeros_like(seq.frames)
    for t, (fpath, ppath) in enumerate(zip(frame_files, parsing_files)):
        frame = load_frame(fpath)
        parsing = load_parsing(ppath, num_classes)
        crop, crop_parsing, rec = crop_foreground(
            frame, parsing, target=cfg.working_size)
        save_frame(crop, out / "crops" / f"frame_{t:05d}.png")
        save_parsing(crop_parsing, out / "parsing" / f"frame_{t:05d}.png")
        with open(out / "records" / f"frame_{t:05d}.json", "w", encoding="utf-8") as f:
            f.write(rec.to_json() + "\n")
        crop_poses[t] = seq.frames[t]
        crop_poses[t, :, :2] = pose_to_crop(seq.frames[t], rec)[:, :2]

    save_keypoints(PoseSequence(crop_poses, fps=seq.fps),
                   out / "crop_keypoints.txt")
    with open(out / "appearance.json", "w", encoding="utf-8") as f:
        json.dump({"index": app_index, "split": video.split}, f, sort_keys=True)
        f.write("\n")
    return app_index


def prepare(manifest, out_dir, cfg=None):
    """Run preparation for every manifest video; per-video failures are
    collected, not fatal. Returns {video name: "ok" | error message}."""
    cfg = cfg or PipelineConfig()
    report = {}
    for video in manifest.videos:
        try:
            prepare_video(video, out_dir, cfg, manifest.num_classes)
            report[video.name] = "ok"
        except Exception as exc:  # noqa: BLE001 - per-video error report
            report[video.name] = f"error: {exc}"
    return report


def transfer(appearance, source, models, bg, cfg=None, crop_records=None):
    """End-to-end inference: parsing generation, flow-guided foreground
    synthesis, restoration, and fusion.

    appearance: (frame, ParsingMap, pose keypoints), all in working-crop
    space. source: smoothed PoseSequence in working-crop coordinates.
    crop_records: per-frame (or single) CropRecord placing working crops in
    the full frame; defaults to a centered placement in bg.
    Returns a list of full-resolution frames, one per source frame.
    """
    cfg = cfg or PipelineConfig()
    app_frame, app_parsing, app_pose = appearance
    size = cfg.working_size
    if app_frame.shape[:2] != (size, size):
        raise ValueError(
            f"stage input: appearance frame must be {size}x{size}, "
            f"got {app_frame.shape[:2]}")
    if app_parsing.labels.shape != (size, size):
        raise ValueError("stage input: appearance parsing resolution mismatch")

    t_total = len(source)
    bg_h, bg_w = np.asarray(bg).shape[:2]
    if crop_records is None:
        side = min(bg_h, bg_w)
        rec = CropRecord((bg_h - side) // 2, (bg_w - side) // 2,
                         (bg_h - side) // 2 + side, (bg_w - side) // 2 + side,
                         0, 0, size / side, bg_h, bg_w)
        crop_records = [rec] * t_total
    elif isinstance(crop_records, CropRecord):
        crop_records = [crop_records] * t_total
    if len(crop_records) != t_total:
        raise ValueError("need one crop record per source frame")

    app_pose_map = rasterize_pose(app_pose, size, size, cfg.pose_sigma)

    fg_fulls, masks_full = [], []
    for t in range(t_total):
        pose_map = rasterize_pose(source.frames[t], size, size, cfg.pose_sigma)
        parsing_t = generate_parsing(models.parsing, app_parsing, pose_map)
        if cfg.no_flow:
            flow, vis = identity_flow(size, size)
        else:
            flow, vis = predict_flow(models.flow, app_pose_map, pose_map)
        fg = generate_foreground(models.foreground, app_frame, parsing_t, flow, vis)
        rec = crop_records[t]
        fg_fulls.append(restore_to_frame(fg, rec))
        masks_full.append(
            restore_mask_to_frame(parsing_t.foreground.astype(np.float32), rec))

    if cfg.no_fusion or t_total < 2:
        return [composite(fg, bg, m) for fg, m in zip(fg_fulls, masks_full)]
    return fuse_sequence(models.fusion, np.asarray(bg, dtype=np.float32),
                         fg_fulls, masks_full[0])

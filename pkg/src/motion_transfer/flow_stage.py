"""Appearance-flow subsystem.

Ground-truth flow and visibility come from a synthetic correspondence
oracle: source and target views of the same set of identified triangles,
rasterized with z-buffering. A pixel on the target view either maps to a
visible point on the source view (flow = displacement to it), is occluded
there (invisible, zero flow), or is uncovered (background, zero flow).

Flow convention is target->source sampling: warping gathers
output(p) = source(p + flow(p)).
"""

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from scipy.ndimage import map_coordinates

from .blocks import UNet
from .checkpoint import save_checkpoint
from .pose import POSE_MAP_CHANNELS

VIS_BACKGROUND = 0
VIS_VISIBLE = 1
VIS_INVISIBLE = 2

FLO_MAGIC = 202021.25


@dataclass
class Triangle:
    """A textured 2-D triangle with a face identity and constant depth."""

    face_id: int
    vertices: np.ndarray  # (3, 2) as (x, y)
    depth: float

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        if self.vertices.shape != (3, 2):
            raise ValueError("triangle needs three (x, y) vertices")
        if not np.isfinite(self.depth):
            raise ValueError("depth must be finite")


@dataclass
class CorrespondenceScene:
    """Source and target views of the same identified faces."""

    source_faces: list
    target_faces: list
    height: int
    width: int

    def __post_init__(self):
        src_ids = {t.face_id for t in self.source_faces}
        tgt_ids = {t.face_id for t in self.target_faces}
        if src_ids != tgt_ids:
            raise ValueError("source and target face identities differ")


def _rasterize(faces, height, width):
    """Z-buffer rasterization at pixel centers.

    Returns (face_index map into `faces` or -1, barycentric coords (H, W, 3),
    depth buffer). Nearest (smallest) depth wins.
    """
    face_idx = np.full((height, width), -1, dtype=np.int64)
    bary = np.zeros((height, width, 3), dtype=np.float64)
    zbuf = np.full((height, width), np.inf, dtype=np.float64)

    for i, tri in enumerate(faces):
        v = tri.vertices
        area2 = (v[1, 0] - v[0, 0]) * (v[2, 1] - v[0, 1]) - \
                (v[2, 0] - v[0, 0]) * (v[1, 1] - v[0, 1])
        if area2 == 0:
            warnings.warn(f"skipping degenerate triangle (face {tri.face_id})")
            continue
        x0 = max(0, int(np.floor(v[:, 0].min())))
        x1 = min(width - 1, int(np.ceil(v[:, 0].max())))
        y0 = max(0, int(np.floor(v[:, 1].min())))
        y1 = min(height - 1, int(np.ceil(v[:, 1].max())))
        if x1 < x0 or y1 < y0:
            continue
        xs, ys = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
        w0 = ((v[1, 0] - xs) * (v[2, 1] - ys) - (v[2, 0] - xs) * (v[1, 1] - ys)) / area2
        w1 = ((v[2, 0] - xs) * (v[0, 1] - ys) - (v[0, 0] - xs) * (v[2, 1] - ys)) / area2
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        closer = inside & (tri.depth < zbuf[y0:y1 + 1, x0:x1 + 1])
        sub = (slice(y0, y1 + 1), slice(x0, x1 + 1))
        zbuf[sub][closer] = tri.depth
        face_idx[sub][closer] = i
        bary[sub][closer] = np.stack([w0, w1, w2], axis=-1)[closer]
    return face_idx, bary, zbuf


def oracle_flow(scene):
    """Ground-truth (FlowField, VisibilityMap) for a correspondence scene.

    Flow is (H, W, 2) float32 as (dx, dy); visibility is (H, W) uint8 in
    {background, visible, invisible}.
    """
    h, w = scene.height, scene.width
    tgt_idx, tgt_bary, _ = _rasterize(scene.target_faces, h, w)
    src_by_id = {t.face_id: t for t in scene.source_faces}
    src_idx, _, _ = _rasterize(scene.source_faces, h, w)
    src_id_map = np.full((h, w), -1, dtype=np.int64)
    covered = src_idx >= 0
    src_ids = np.array([t.face_id for t in scene.source_faces], dtype=np.int64)
    src_id_map[covered] = src_ids[src_idx[covered]]

    flow = np.zeros((h, w, 2), dtype=np.float32)
    vis = np.zeros((h, w), dtype=np.uint8)

    ys, xs = np.nonzero(tgt_idx >= 0)
    for y, x in zip(ys, xs):
        tri = scene.target_faces[tgt_idx[y, x]]
        src_tri = src_by_id[tri.face_id]
        src_pt = tgt_bary[y, x] @ src_tri.vertices
        sx = int(round(src_pt[0]))
        sy = int(round(src_pt[1]))
        in_bounds = 0 <= sx < w and 0 <= sy < h
        if in_bounds and src_id_map[sy, sx] == tri.face_id:
            flow[y, x] = (src_pt[0] - x, src_pt[1] - y)
            vis[y, x] = VIS_VISIBLE
        else:
            vis[y, x] = VIS_INVISIBLE
    return flow, vis


def warp_by_flow(feat, flow, fill=0.0):
    """Gather-warp a (C, H, W) map: output(p) = bilinear(feat, p + flow(p)).

    Samples falling outside the map return `fill`.
    """
    feat = np.asarray(feat, dtype=np.float32)
    flow = np.asarray(flow, dtype=np.float32)
    if feat.ndim != 3:
        raise ValueError("feat must be (C, H, W)")
    if flow.shape != feat.shape[1:] + (2,):
        raise ValueError("flow resolution must match feature map")
    h, w = feat.shape[1:]
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float32),
                         np.arange(h, dtype=np.float32))
    sample_x = xs + flow[..., 0]
    sample_y = ys + flow[..., 1]
    coords = np.stack([sample_y, sample_x])
    out = np.stack([
        map_coordinates(ch, coords, order=1, mode="constant", cval=fill)
        for ch in feat
    ]).astype(np.float32)
    return out


def rescale_flow(flow, factor):
    """Resize a flow field by `factor`, scaling the displacements to match."""
    import cv2

    if factor <= 0:
        raise ValueError("factor must be positive")
    flow = np.asarray(flow, dtype=np.float32)
    h, w = flow.shape[:2]
    new_h = max(1, int(round(h * factor)))
    new_w = max(1, int(round(w * factor)))
    resized = cv2.resize(flow, (new_w, new_h), interpolation=cv2.INTER_LINEAR)
    return resized * np.float32(factor)


def flow_losses(pred_flow, pred_vis_logits, gt_flow, gt_vis):
    """(EPE over non-background ground-truth pixels, mean 3-class CE).

    pred_flow: (2, H, W); pred_vis_logits: (3, H, W); gt_flow: (H, W, 2);
    gt_vis: (H, W) labels. EPE is 0 when no non-background pixels exist.
    """
    if not torch.is_tensor(pred_flow):
        pred_flow = torch.as_tensor(pred_flow)
    if not torch.is_tensor(pred_vis_logits):
        pred_vis_logits = torch.as_tensor(pred_vis_logits)
    gt_flow_t = torch.as_tensor(np.asarray(gt_flow), dtype=pred_flow.dtype)
    gt_vis_t = torch.as_tensor(np.asarray(gt_vis), dtype=torch.long)
    if pred_flow.shape[0] != 2 or pred_flow.shape[1:] != gt_flow_t.shape[:2]:
        raise ValueError("flow shapes differ")
    if pred_vis_logits.shape[0] != 3 or pred_vis_logits.shape[1:] != gt_vis_t.shape:
        raise ValueError("visibility shapes differ")

    mask = gt_vis_t != VIS_BACKGROUND
    if mask.any():
        diff = pred_flow.permute(1, 2, 0) - gt_flow_t
        epe = torch.sqrt((diff**2).sum(dim=-1) + 1e-12)[mask].mean()
    else:
        epe = pred_flow.sum() * 0.0
    ce = F.cross_entropy(pred_vis_logits[None], gt_vis_t[None])
    return epe, ce


@dataclass
class FlowStageConfig:
    lr: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    epochs: int = 30
    image_size: int = 448
    pose_channels: int = POSE_MAP_CHANNELS
    base_width: int = 32
    depth: int = 5

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")


class FlowRegressor(torch.nn.Module):
    """U-Net over concatenated appearance/target pose maps with flow and
    visibility heads."""

    def __init__(self, cfg):
        super().__init__()
        self.pose_channels = cfg.pose_channels
        self.unet = UNet(2 * cfg.pose_channels, 5,
                         base_width=cfg.base_width, depth=cfg.depth)

    def forward(self, appearance_pose, target_pose):
        x = torch.cat([appearance_pose, target_pose], dim=1)
        out = self.unet(x)
        return out[:, :2], out[:, 2:]


def predict_flow(model, appearance_pose, target_pose):
    """Numpy inference wrapper: returns ((H, W, 2) flow, (H, W) labels)."""
    a = torch.from_numpy(np.asarray(appearance_pose, dtype=np.float32))[None]
    t = torch.from_numpy(np.asarray(target_pose, dtype=np.float32))[None]
    model.eval()
    with torch.no_grad():
        flow, vis_logits = model(a, t)
    flow_np = flow[0].permute(1, 2, 0).numpy().astype(np.float32)
    vis_np = np.argmax(vis_logits[0].numpy(), axis=0).astype(np.uint8)
    return flow_np, vis_np


def train_flow_stage(dataset, cfg, seed=0, steps=None, checkpoint_path=None):
    """Train on (appearance pose map, target pose map, gt flow, gt vis)
    samples; loss = EPE + CE. Returns (model, loss_curve)."""
    samples = list(dataset)
    if not samples:
        raise ValueError("empty dataset")
    torch.manual_seed(seed)
    model = FlowRegressor(cfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr,
                           betas=(cfg.adam_beta1, cfg.adam_beta2))

    tensors = []
    for app_pose, tgt_pose, gt_flow, gt_vis in samples:
        a = torch.from_numpy(np.asarray(app_pose, dtype=np.float32))[None]
        t = torch.from_numpy(np.asarray(tgt_pose, dtype=np.float32))[None]
        tensors.append((a, t, gt_flow, gt_vis))

    total_steps = steps if steps is not None else cfg.epochs * len(tensors)
    losses = []
    model.train()
    for step in range(total_steps):
        a, t, gt_flow, gt_vis = tensors[step % len(tensors)]
        opt.zero_grad()
        flow, vis_logits = model(a, t)
        epe, ce = flow_losses(flow[0], vis_logits[0], gt_flow, gt_vis)
        loss = epe + ce
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))

    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, {"flow_regressor": model.state_dict()}, cfg)
    return model, losses


def write_flo(flow, path):
    """Binary flow file: magic, int32 width/height, interleaved float32."""
    flow = np.asarray(flow, dtype=np.float32)
    h, w = flow.shape[:2]
    with open(path, "wb") as f:
        f.write(struct.pack("<fii", FLO_MAGIC, w, h))
        f.write(flow.astype("<f4").tobytes())


def read_flo(path):
    with open(path, "rb") as f:
        magic, w, h = struct.unpack("<fii", f.read(12))
        if abs(magic - FLO_MAGIC) > 1e-3:
            raise ValueError(f"{path}: bad flow-file magic {magic}")
        data = np.frombuffer(f.read(8 * w * h), dtype="<f4")
    return data.reshape(h, w, 2).copy()


def save_visibility(vis, path):
    Image.fromarray(np.asarray(vis, dtype=np.uint8), mode="L").save(path, format="PNG")


def load_visibility(path):
    vis = np.asarray(Image.open(path), dtype=np.uint8)
    if not np.isin(vis, [VIS_BACKGROUND, VIS_VISIBLE, VIS_INVISIBLE]).all():
        raise ValueError(f"{path}: visibility values outside {{0, 1, 2}}")
    return vis

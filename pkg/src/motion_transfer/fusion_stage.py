"""Stage 3: spatio-temporal fusion.

A residual network predicts a soft foreground mask from (background,
current foreground, previous output); the frame is the mask-weighted
composite of foreground over background. The first frame of a sequence is
always the direct overlay of the foreground using a parsing-derived binary
mask; every later frame feeds the previous output back in.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import ResidualBlock, conv_norm_relu
from .checkpoint import save_checkpoint
from .perceptual import RandomFeatureExtractor, perceptual_loss


@dataclass
class FusionStageConfig:
    lr: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    loss_weight_l1: float = 1.0
    loss_weight_per: float = 1.0
    batch_size: int = 1
    epochs: int = 5
    clip_length: int = 5
    base_width: int = 32
    n_blocks: int = 4
    downscale: int = 1  # internal processing downscale for desk-size runs

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.clip_length < 2:
            raise ValueError("clips need at least two frames")
        if self.downscale < 1:
            raise ValueError("downscale must be >= 1")


class FusionNetwork(nn.Module):
    """ResNet-like mask predictor over channel-concat(bg, fg, prev frame)."""

    def __init__(self, cfg):
        super().__init__()
        self.downscale = cfg.downscale
        w = cfg.base_width
        layers = [conv_norm_relu(9, w), conv_norm_relu(w, w, stride=2)]
        layers += [ResidualBlock(w) for _ in range(cfg.n_blocks)]
        layers += [
            nn.Upsample(scale_factor=2, mode="nearest"),
            conv_norm_relu(w, w),
            nn.Conv2d(w, 1, 3, padding=1),
        ]
        self.net = nn.Sequential(*layers)

    def forward(self, bg, fg, prev):
        """Inputs (B, 3, H, W); returns a (B, 1, H, W) mask in [0, 1]."""
        x = torch.cat([bg, fg, prev], dim=1)
        h, w = x.shape[2:]
        if self.downscale > 1:
            x = F.interpolate(x, scale_factor=1.0 / self.downscale,
                              mode="bilinear", align_corners=False)
        mask = torch.sigmoid(self.net(x))
        if mask.shape[2:] != (h, w):
            mask = F.interpolate(mask, size=(h, w), mode="bilinear",
                                 align_corners=False)
        return mask


def _to_tensor(frame):
    return torch.from_numpy(
        np.asarray(frame, dtype=np.float32).transpose(2, 0, 1))[None]


def fuse_step_tensors(net, bg, fg, prev):
    """Differentiable step on (B, 3, H, W) tensors: (frame, mask)."""
    if bg.shape != fg.shape or bg.shape != prev.shape:
        raise ValueError("background, foreground, and previous frame shapes differ")
    mask = net(bg, fg, prev)
    frame = fg * mask + bg * (1.0 - mask)
    return frame, mask


def fuse_step(net, bg, fg_t, prev_out):
    """Numpy single-step fusion: composite fg over bg with the predicted mask."""
    bg_t, fg_tt, prev_t = _to_tensor(bg), _to_tensor(fg_t), _to_tensor(prev_out)
    net.eval()
    with torch.no_grad():
        frame, mask = fuse_step_tensors(net, bg_t, fg_tt, prev_t)
    return (frame[0].permute(1, 2, 0).numpy().astype(np.float32),
            mask[0, 0].numpy().astype(np.float32))


def overlay(fg, bg, binary_mask):
    """Direct overlay used for the bootstrap frame and the "no fusion"
    ablation."""
    m = np.asarray(binary_mask, dtype=np.float32)
    return (np.asarray(fg, dtype=np.float32) * m[..., None]
            + np.asarray(bg, dtype=np.float32) * (1.0 - m[..., None]))


def fuse_sequence(net, bg, fgs, bootstrap_mask):
    """Fuse a foreground sequence over a fixed background.

    Frame 0 is the direct overlay of fgs[0] using the parsing-derived
    bootstrap mask; frame t >= 1 is fuse_step with the previous output.
    """
    fgs = list(fgs)
    if len(fgs) < 2:
        raise ValueError("need at least two foreground frames to fuse")
    out = [overlay(fgs[0], bg, bootstrap_mask).astype(np.float32)]
    for fg in fgs[1:]:
        frame, _ = fuse_step(net, bg, fg, out[-1])
        out.append(frame)
    return out


def clip_loss(net, bg, fgs, gts, bootstrap_mask, cfg, extractor):
    """Training loss for one clip; gradients flow through the recursion."""
    bg_t = _to_tensor(bg)
    prev = _to_tensor(overlay(fgs[0], bg, bootstrap_mask))
    loss = 0.0
    for fg, gt in zip(fgs[1:], gts[1:]):
        frame, _ = fuse_step_tensors(net, bg_t, _to_tensor(fg), prev)
        gt_t = _to_tensor(gt)
        loss = loss + cfg.loss_weight_l1 * (frame - gt_t).abs().mean()
        loss = loss + cfg.loss_weight_per * perceptual_loss(extractor, frame, gt_t)
        prev = frame
    return loss


def train_fusion_stage(clips, cfg, seed=0, steps=None, extractor=None,
                       checkpoint_path=None):
    """Train on clips of (bg, [fg frames], [gt frames], bootstrap_mask).

    Clips shorter than two frames are skipped with a warning. Returns
    (network, loss_curve).
    """
    usable = []
    for clip in clips:
        bg, fgs, gts, mask = clip
        if len(fgs) < 2 or len(gts) < 2:
            warnings.warn("skipping fusion clip shorter than two frames")
            continue
        usable.append((bg, list(fgs), list(gts), mask))
    if not usable:
        raise ValueError("no usable fusion clips")

    torch.manual_seed(seed)
    net = FusionNetwork(cfg)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr,
                           betas=(cfg.adam_beta1, cfg.adam_beta2))
    if extractor is None:
        extractor = RandomFeatureExtractor(seed=0)

    total_steps = steps if steps is not None else cfg.epochs * len(usable)
    losses = []
    net.train()
    for step in range(total_steps):
        bg, fgs, gts, mask = usable[step % len(usable)]
        opt.zero_grad()
        loss = clip_loss(net, bg, fgs, gts, mask, cfg, extractor)
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))

    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, {"fusion": net.state_dict()}, cfg)
    return net, losses

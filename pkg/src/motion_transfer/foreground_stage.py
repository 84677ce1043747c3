"""Stage 2: flow-guided foreground synthesis.

A dual-path generator encodes the target parsing and the appearance
foreground separately; appearance features are warped by the appearance
flow at every encoder scale, split into visible/invisible parts, and merged
through residual convolutions before feeding the shared decoder. Training
combines a patch-discriminator adversarial term, L1, and a perceptual term
weighted {0.01, 1.0, 1.0}.
"""

from dataclasses import dataclass

import cv2
import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import conv_norm_relu
from .checkpoint import save_checkpoint
from .flow_stage import VIS_INVISIBLE, VIS_VISIBLE, rescale_flow
from .perceptual import RandomFeatureExtractor, perceptual_loss

LOG_EPS = 1e-8


@dataclass
class ForegroundStageConfig:
    gen_lr: float = 2e-4
    disc_lr: float = 2e-5
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    lambda_adv: float = 0.01
    lambda_l1: float = 1.0
    lambda_per: float = 1.0
    batch_size: int = 8
    epochs: int = 40
    num_classes: int = 20
    image_size: int = 448
    base_width: int = 32
    depth: int = 3
    use_flow: bool = True  # False = "no flow" ablation: identity flow, all visible

    def __post_init__(self):
        if min(self.lambda_adv, self.lambda_l1, self.lambda_per) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.gen_lr < 0 or self.disc_lr < 0:
            raise ValueError("learning rates must be non-negative")


def flow_to_grid(flow, height, width):
    """(H, W, 2) pixel-displacement flow -> grid_sample sampling grid."""
    xs, ys = np.meshgrid(np.arange(width, dtype=np.float32),
                         np.arange(height, dtype=np.float32))
    sample_x = xs + flow[..., 0]
    sample_y = ys + flow[..., 1]
    gx = 2.0 * sample_x / max(width - 1, 1) - 1.0
    gy = 2.0 * sample_y / max(height - 1, 1) - 1.0
    grid = np.stack([gx, gy], axis=-1)
    return torch.from_numpy(grid)[None]


class WarpBlock(nn.Module):
    """Visibility-gated feature warping at one encoder scale.

    The warped features are split into visible and invisible parts, the
    concatenation is passed through two convolutions, and the result is
    added back to the warped features (residual path).
    """

    def __init__(self, channels):
        super().__init__()
        self.conv1 = nn.Conv2d(2 * channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def init_identity(self):
        """Zero the residual branch so the block returns its input."""
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)

    def forward(self, feat, grid, visible_mask, invisible_mask):
        warped = F.grid_sample(feat, grid.to(feat.dtype), mode="bilinear",
                               padding_mode="zeros", align_corners=True)
        vis_part = warped * visible_mask
        invis_part = warped * invisible_mask
        x = torch.cat([vis_part, invis_part], dim=1)
        return warped + self.conv2(torch.relu(self.conv1(x)))


class DualPathGenerator(nn.Module):
    """Parsing/appearance dual encoder with per-scale warping and a shared
    skip-connected decoder; output is 3-channel RGB in [0, 1]."""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        widths = [cfg.base_width * 2**i for i in range(cfg.depth)]
        self.widths = widths

        def encoder(in_ch):
            stages = nn.ModuleList()
            prev = in_ch
            for i, w in enumerate(widths):
                stride = 1 if i == 0 else 2
                stages.append(nn.Sequential(conv_norm_relu(prev, w, stride=stride),
                                            conv_norm_relu(w, w)))
                prev = w
            return stages

        self.parsing_encoder = encoder(cfg.num_classes)
        self.appearance_encoder = encoder(3)
        self.warp_blocks = nn.ModuleList([WarpBlock(w) for w in widths])

        self.decoder = nn.ModuleList()
        prev = 2 * widths[-1]
        for w in reversed(widths[:-1]):
            self.decoder.append(nn.Sequential(conv_norm_relu(prev + 2 * w, w),
                                              conv_norm_relu(w, w)))
            prev = w
        self.head = nn.Conv2d(prev, 3, 3, padding=1)

    def forward(self, appearance_fg, target_parsing_onehot, flow, vis):
        """appearance_fg: (B, 3, H, W); target_parsing_onehot: (B, C, H, W);
        flow: (H, W, 2) numpy; vis: (H, W) numpy labels."""
        h, w = appearance_fg.shape[2:]
        if target_parsing_onehot.shape[2:] != (h, w):
            raise ValueError("appearance and parsing resolutions differ")
        if flow.shape[:2] != (h, w) or vis.shape != (h, w):
            raise ValueError("flow/visibility resolution differs from images")

        p_feats, a_feats = [], []
        p, a = target_parsing_onehot, appearance_fg
        for p_stage, a_stage in zip(self.parsing_encoder, self.appearance_encoder):
            p = p_stage(p)
            a = a_stage(a)
            p_feats.append(p)
            a_feats.append(a)

        warped = []
        for i, block in enumerate(self.warp_blocks):
            sh, sw = a_feats[i].shape[2:]
            factor = sh / h
            scale_flow = flow if factor == 1.0 else rescale_flow(flow, factor)
            scale_vis = vis if factor == 1.0 else cv2.resize(
                vis, (sw, sh), interpolation=cv2.INTER_NEAREST)
            grid = flow_to_grid(scale_flow, sh, sw)
            vmask = torch.from_numpy(
                (scale_vis == VIS_VISIBLE).astype(np.float32))[None, None]
            imask = torch.from_numpy(
                (scale_vis == VIS_INVISIBLE).astype(np.float32))[None, None]
            warped.append(block(a_feats[i], grid, vmask, imask))

        x = torch.cat([p_feats[-1], warped[-1]], dim=1)
        for i, stage in enumerate(self.decoder):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            skip_idx = len(self.widths) - 2 - i
            x = stage(torch.cat([x, p_feats[skip_idx], warped[skip_idx]], dim=1))
        return torch.sigmoid(self.head(x))


class PatchDiscriminator(nn.Module):
    """Patch-level real/fake classifier over (appearance, parsing, candidate)
    channel concatenations; scores pass through a sigmoid."""

    def __init__(self, cfg):
        super().__init__()
        in_ch = 3 + cfg.num_classes + 3
        w = cfg.base_width
        self.net = nn.Sequential(
            nn.Conv2d(in_ch, w, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(w, 2 * w, 4, stride=2, padding=1),
            nn.InstanceNorm2d(2 * w),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(2 * w, 4 * w, 4, stride=2, padding=1),
            nn.InstanceNorm2d(4 * w),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(4 * w, 1, 4, padding=1),
        )

    def forward(self, appearance, parsing_onehot, candidate):
        x = torch.cat([appearance, parsing_onehot, candidate], dim=1)
        return torch.sigmoid(self.net(x))


def adversarial_losses(disc, real_tuple, fake_tuple):
    """Discriminator and non-saturating generator losses.

    d_loss = -mean log D(real) - mean log(1 - D(fake)), fake detached;
    g_loss = -mean log D(fake). Logs are eps-clipped.
    """
    d_real = disc(*real_tuple)
    d_fake_detached = disc(*(t.detach() for t in fake_tuple))
    d_loss = (-torch.log(d_real.clamp(min=LOG_EPS)).mean()
              - torch.log((1.0 - d_fake_detached).clamp(min=LOG_EPS)).mean())
    d_fake = disc(*fake_tuple)
    g_loss = -torch.log(d_fake.clamp(min=LOG_EPS)).mean()
    return d_loss, g_loss


def generate_foreground(gen, appearance_fg, target_parsing, flow, vis):
    """Numpy inference wrapper: returns an (H, W, 3) foreground in [0, 1]."""
    a = torch.from_numpy(
        np.asarray(appearance_fg, dtype=np.float32).transpose(2, 0, 1))[None]
    p = torch.from_numpy(target_parsing.one_hot())[None]
    gen.eval()
    with torch.no_grad():
        out = gen(a, p, np.asarray(flow, dtype=np.float32),
                  np.asarray(vis, dtype=np.uint8))
    return out[0].permute(1, 2, 0).numpy().astype(np.float32)


def identity_flow(height, width):
    """Zero flow + all-visible map for the "no flow" ablation."""
    flow = np.zeros((height, width, 2), dtype=np.float32)
    vis = np.full((height, width), VIS_VISIBLE, dtype=np.uint8)
    return flow, vis


def train_foreground_stage(dataset, cfg, seed=0, steps=None,
                           extractor=None, checkpoint_path=None):
    """Alternating G/D training over (appearance_fg, target ParsingMap,
    flow, vis, target_fg) samples.

    Generator loss = lambda_adv * adv + lambda_l1 * L1 + lambda_per *
    perceptual. Returns (generator, discriminator, loss curves dict).
    """
    samples = list(dataset)
    if not samples:
        raise ValueError("empty dataset")
    torch.manual_seed(seed)
    gen = DualPathGenerator(cfg)
    disc = PatchDiscriminator(cfg)
    if extractor is None:
        extractor = RandomFeatureExtractor(seed=0)
    g_opt = torch.optim.Adam(gen.parameters(), lr=cfg.gen_lr,
                             betas=(cfg.adam_beta1, cfg.adam_beta2))
    d_opt = torch.optim.Adam(disc.parameters(), lr=cfg.disc_lr,
                             betas=(cfg.adam_beta1, cfg.adam_beta2))

    tensors = []
    for app, parsing, flow, vis, target in samples:
        h, w = np.asarray(app).shape[:2]
        if not cfg.use_flow:
            flow, vis = identity_flow(h, w)
        tensors.append((
            torch.from_numpy(np.asarray(app, dtype=np.float32).transpose(2, 0, 1))[None],
            torch.from_numpy(parsing.one_hot())[None],
            np.asarray(flow, dtype=np.float32),
            np.asarray(vis, dtype=np.uint8),
            torch.from_numpy(np.asarray(target, dtype=np.float32).transpose(2, 0, 1))[None],
        ))

    total_steps = steps if steps is not None else cfg.epochs * len(tensors)
    curves = {"d": [], "g_adv": [], "g_l1": [], "g_per": [], "g_total": []}
    gen.train()
    disc.train()
    for step in range(total_steps):
        a, p, flow, vis, target = tensors[step % len(tensors)]
        fake = gen(a, p, flow, vis)
        d_loss, g_adv = adversarial_losses(disc, (a, p, target), (a, p, fake))

        l1 = (fake - target).abs().mean()
        per = perceptual_loss(extractor, fake, target)
        g_total = cfg.lambda_adv * g_adv + cfg.lambda_l1 * l1 + cfg.lambda_per * per
        g_opt.zero_grad()
        g_total.backward()
        g_opt.step()

        # d_loss sees only detached fakes, so the generator step above does
        # not invalidate its graph
        if cfg.lambda_adv > 0:
            d_opt.zero_grad()
            d_loss.backward()
            d_opt.step()

        curves["d"].append(float(d_loss.detach()))
        curves["g_adv"].append(float(g_adv.detach()))
        curves["g_l1"].append(float(l1.detach()))
        curves["g_per"].append(float(per.detach()))
        curves["g_total"].append(float(g_total.detach()))

    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path,
                        {"generator": gen.state_dict(),
                         "discriminator": disc.state_dict()}, cfg)
    return gen, disc, curves

"""Stage 1: pose-guided parsing generation.

A residual generator maps (one-hot appearance parsing, pose map) to target
parsing logits; training minimizes an L1 term plus a pixel-wise softmax
term, weighted 10.0 each.
"""

from dataclasses import dataclass, field

import numpy as np
import torch

from .blocks import ResnetTranslator
from .checkpoint import save_checkpoint
from .pose import POSE_MAP_CHANNELS
from .regions import ParsingMap

LOG_EPS = 1e-8


@dataclass
class ParsingStageConfig:
    lr: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    loss_weight_l1: float = 10.0
    loss_weight_par: float = 10.0
    epochs: int = 30
    num_classes: int = 20
    image_size: int = 448
    pose_channels: int = POSE_MAP_CHANNELS
    base_width: int = 64
    n_blocks: int = 9

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.loss_weight_l1 < 0 or self.loss_weight_par < 0:
            raise ValueError("loss weights must be non-negative")


class ParsingGenerator(ResnetTranslator):
    def __init__(self, cfg):
        super().__init__(
            in_channels=cfg.num_classes + cfg.pose_channels,
            out_channels=cfg.num_classes,
            base_width=cfg.base_width,
            n_blocks=cfg.n_blocks,
        )
        self.num_classes = cfg.num_classes
        self.pose_channels = cfg.pose_channels


def _stack_inputs(gen, appearance_parsing, source_pose):
    one_hot = appearance_parsing.one_hot()
    pose = np.asarray(source_pose, dtype=np.float32)
    if one_hot.shape[0] != gen.num_classes:
        raise ValueError(
            f"parsing has {one_hot.shape[0]} classes, generator expects {gen.num_classes}"
        )
    if pose.shape[0] != gen.pose_channels:
        raise ValueError(
            f"pose map has {pose.shape[0]} channels, generator expects {gen.pose_channels}"
        )
    if one_hot.shape[1:] != pose.shape[1:]:
        raise ValueError("parsing and pose spatial dims differ")
    return torch.from_numpy(np.concatenate([one_hot, pose], axis=0))


def generate_parsing(gen, appearance_parsing, source_pose):
    """Run the generator and return the argmax label map.

    Ties in the softmax argmax resolve to the lowest class index.
    """
    x = _stack_inputs(gen, appearance_parsing, source_pose)
    gen.eval()
    with torch.no_grad():
        logits = gen(x[None])[0]
    labels = np.argmax(logits.numpy(), axis=0).astype(np.int32)
    return ParsingMap(labels, gen.num_classes)


def parsing_losses(pred_probs, target):
    """Raw L1 and pixel-wise softmax sums against the one-hot target.

    pred_probs: (C, H, W) softmax probabilities (tensor or array).
    target: ParsingMap or (C, H, W) one-hot array.
    Returns unnormalized scalar tensors (l1, par); predictions are clipped
    to [1e-8, 1] inside the log.
    """
    if not torch.is_tensor(pred_probs):
        pred_probs = torch.as_tensor(pred_probs)
    if isinstance(target, ParsingMap):
        target = target.one_hot()
    target = torch.as_tensor(target, dtype=pred_probs.dtype)
    if target.shape != pred_probs.shape:
        raise ValueError("prediction and target shapes differ")
    l1 = (target - pred_probs).abs().sum()
    par = -(target * torch.log(pred_probs.clamp(min=LOG_EPS))).sum()
    return l1, par


def training_loss(logits, target_one_hot, cfg):
    """Weighted per-pixel-mean form of the stage-1 loss used by the optimizer."""
    probs = torch.softmax(logits, dim=1)
    l1 = (target_one_hot - probs).abs().mean()
    logp = torch.log_softmax(logits, dim=1)
    par = -(target_one_hot * logp).sum(dim=1).mean()
    return cfg.loss_weight_l1 * l1 + cfg.loss_weight_par * par


def train_parsing_stage(dataset, cfg, seed=0, steps=None, checkpoint_path=None):
    """Train on (appearance ParsingMap, pose map, target ParsingMap) triples.

    Iterates the dataset in order for cfg.epochs passes (or exactly `steps`
    single-sample updates when given). Returns (generator, loss_curve).
    """
    samples = list(dataset)
    if not samples:
        raise ValueError("empty dataset")
    torch.manual_seed(seed)
    gen = ParsingGenerator(cfg)
    opt = torch.optim.Adam(gen.parameters(), lr=cfg.lr,
                           betas=(cfg.adam_beta1, cfg.adam_beta2))

    tensors = []
    for app, pose, tgt in samples:
        x = _stack_inputs(gen, app, pose)
        y = torch.from_numpy(tgt.one_hot())
        tensors.append((x[None], y[None]))

    total_steps = steps if steps is not None else cfg.epochs * len(tensors)
    losses = []
    gen.train()
    for step in range(total_steps):
        x, y = tensors[step % len(tensors)]
        opt.zero_grad()
        loss = training_loss(gen(x), y, cfg)
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))

    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, {"generator": gen.state_dict()}, cfg)
    return gen, losses

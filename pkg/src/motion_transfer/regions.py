"""Foreground crops, coordinate restoration, and mask compositing.

Frames are float RGB arrays in [0, 1] of shape (H, W, 3). Parsing maps are
integer label images where label 0 is background.
"""

import json
from dataclasses import dataclass, asdict

import cv2
import numpy as np
from PIL import Image


class NoForegroundError(ValueError):
    """Raised when a parsing map contains no foreground pixels."""


@dataclass
class ParsingMap:
    """Per-pixel semantic labels over num_classes body-part classes."""

    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 2:
            raise ValueError("parsing labels must be a 2-D map")
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise ValueError("parsing labels must be integral")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    @property
    def foreground(self):
        return self.labels != 0

    def one_hot(self):
        """(num_classes, H, W) float32 one-hot encoding."""
        eye = np.eye(self.num_classes, dtype=np.float32)
        return np.transpose(eye[self.labels], (2, 0, 1))


@dataclass
class CropRecord:
    """Bookkeeping to map a square working crop back to source coordinates."""

    top: int
    left: int
    bottom: int
    right: int
    pad_top: int
    pad_left: int
    scale: float
    source_h: int
    source_w: int

    def __post_init__(self):
        if not (0 <= self.top < self.bottom <= self.source_h):
            raise ValueError("vertical crop bounds outside source frame")
        if not (0 <= self.left < self.right <= self.source_w):
            raise ValueError("horizontal crop bounds outside source frame")
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def check_frame(frame):
    frame = np.asarray(frame, dtype=np.float32)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ValueError("frame must have shape (H, W, 3)")
    if not np.all(np.isfinite(frame)):
        raise ValueError("frame values must be finite")
    if frame.min() < 0 or frame.max() > 1:
        raise ValueError("frame values must lie in [0, 1]")
    return frame


def resize_frame(frame, height, width):
    """Bilinear resize; clips to [0, 1] to absorb interpolation overshoot."""
    out = cv2.resize(
        np.asarray(frame, dtype=np.float32), (width, height),
        interpolation=cv2.INTER_LINEAR,
    )
    return np.clip(out, 0.0, 1.0)


def resize_labels(labels, height, width):
    """Nearest-neighbor resize keeping labels integral."""
    return cv2.resize(
        labels.astype(np.int32), (width, height), interpolation=cv2.INTER_NEAREST
    )


def crop_foreground(frame, parsing, margin=None, target=448):
    """Crop the tight foreground box, pad to square, and resize to target.

    The box is expanded by `margin` pixels on each side (default: 10% of the
    larger box dimension) and clipped to the frame. Padding is symmetric and
    black. Returns (cropped frame, cropped parsing, CropRecord); the record
    suffices to invert the transform with restore_to_frame.
    """
    frame = check_frame(frame)
    h, w = frame.shape[:2]
    if parsing.labels.shape != (h, w):
        raise ValueError("frame and parsing shapes differ")
    fg = parsing.foreground
    if not fg.any():
        raise NoForegroundError("parsing map has no foreground pixels")

    rows = np.flatnonzero(fg.any(axis=1))
    cols = np.flatnonzero(fg.any(axis=0))
    top, bottom = int(rows[0]), int(rows[-1]) + 1
    left, right = int(cols[0]), int(cols[-1]) + 1
    if margin is None:
        margin = int(round(0.1 * max(bottom - top, right - left)))
    if margin < 0:
        raise ValueError("margin must be non-negative")
    top = max(0, top - margin)
    left = max(0, left - margin)
    bottom = min(h, bottom + margin)
    right = min(w, right + margin)

    box_h, box_w = bottom - top, right - left
    side = max(box_h, box_w)
    pad_top = (side - box_h) // 2
    pad_left = (side - box_w) // 2

    frame_sq = np.zeros((side, side, 3), dtype=np.float32)
    frame_sq[pad_top:pad_top + box_h, pad_left:pad_left + box_w] = \
        frame[top:bottom, left:right]
    labels_sq = np.zeros((side, side), dtype=np.int32)
    labels_sq[pad_top:pad_top + box_h, pad_left:pad_left + box_w] = \
        parsing.labels[top:bottom, left:right]

    scale = target / side
    record = CropRecord(top, left, bottom, right, pad_top, pad_left,
                        scale, h, w)
    out_frame = resize_frame(frame_sq, target, target)
    out_parsing = ParsingMap(resize_labels(labels_sq, target, target),
                             parsing.num_classes)
    return out_frame, out_parsing, record


def restore_to_frame(cropped, rec):
    """Place a working-resolution crop back into a full-size zero canvas."""
    cropped = check_frame(cropped)
    target = cropped.shape[0]
    if cropped.shape[0] != cropped.shape[1]:
        raise ValueError("cropped frame must be square")
    side = int(round(target / rec.scale))
    unscaled = resize_frame(cropped, side, side)
    box_h = rec.bottom - rec.top
    box_w = rec.right - rec.left
    box = unscaled[rec.pad_top:rec.pad_top + box_h,
                   rec.pad_left:rec.pad_left + box_w]
    canvas = np.zeros((rec.source_h, rec.source_w, 3), dtype=np.float32)
    canvas[rec.top:rec.bottom, rec.left:rec.right] = box
    return canvas


def restore_mask_to_frame(mask, rec):
    """Same placement as restore_to_frame for a single-channel float mask."""
    mask = np.asarray(mask, dtype=np.float32)
    target = mask.shape[0]
    side = int(round(target / rec.scale))
    unscaled = np.clip(
        cv2.resize(mask, (side, side), interpolation=cv2.INTER_LINEAR), 0.0, 1.0
    )
    box = unscaled[rec.pad_top:rec.pad_top + (rec.bottom - rec.top),
                   rec.pad_left:rec.pad_left + (rec.right - rec.left)]
    canvas = np.zeros((rec.source_h, rec.source_w), dtype=np.float32)
    canvas[rec.top:rec.bottom, rec.left:rec.right] = box
    return canvas


def composite(fg, bg, mask):
    """Per-pixel convex combination: fg * mask + bg * (1 - mask)."""
    fg = np.asarray(fg, dtype=np.float32)
    bg = np.asarray(bg, dtype=np.float32)
    mask = np.asarray(mask, dtype=np.float32)
    if fg.shape != bg.shape or mask.shape != fg.shape[:2]:
        raise ValueError("foreground, background, and mask shapes must match")
    m = mask[..., None] if fg.ndim == 3 else mask
    return fg * m + bg * (1.0 - m)


def load_frame(path):
    """8-bit PNG -> float RGB in [0, 1]."""
    img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32)
    return img / 255.0


def save_frame(frame, path):
    frame = check_frame(frame)
    img = Image.fromarray(np.round(frame * 255.0).astype(np.uint8))
    img.save(path, format="PNG")


def load_parsing(path, num_classes):
    labels = np.asarray(Image.open(path), dtype=np.int32)
    return ParsingMap(labels, num_classes)


def save_parsing(parsing, path):
    if parsing.num_classes > 256:
        raise ValueError("8-bit parsing PNG supports at most 256 classes")
    Image.fromarray(parsing.labels.astype(np.uint8), mode="L").save(path, format="PNG")

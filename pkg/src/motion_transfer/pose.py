"""Keypoint sequences: loading, smoothing, appearance-frame selection, rasterization.

Keypoints follow the 18-joint OpenPose/COCO ordering. Each keypoint is an
(x, y, confidence) triple; confidence 0 marks an undetected joint.
"""

from dataclasses import dataclass, field

import numpy as np

N_JOINTS = 18

# (joint_a, joint_b) pairs in the fixed 18-joint ordering:
# 0 nose, 1 neck, 2-4 right arm, 5-7 left arm, 8-10 right leg,
# 11-13 left leg, 14/15 eyes, 16/17 ears.
LIMB_PAIRS = [
    (1, 2), (1, 5), (2, 3), (3, 4), (5, 6), (6, 7),
    (1, 8), (8, 9), (9, 10), (1, 11), (11, 12), (12, 13),
    (1, 0), (0, 14), (14, 16), (0, 15), (15, 17), (2, 16), (5, 17),
]
N_LIMBS = len(LIMB_PAIRS)
POSE_MAP_CHANNELS = N_JOINTS + N_LIMBS


@dataclass
class PoseSequence:
    """Ordered per-frame keypoint arrays of shape (T, N_JOINTS, 3)."""

    frames: np.ndarray
    fps: float = 30.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[1:] != (N_JOINTS, 3):
            raise ValueError(
                f"expected frames of shape (T, {N_JOINTS}, 3), got {self.frames.shape}"
            )
        if len(self.frames) < 1:
            raise ValueError("pose sequence must contain at least one frame")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("keypoints must be finite")
        conf = self.frames[:, :, 2]
        if conf.min() < 0 or conf.max() > 1:
            raise ValueError("confidences must lie in [0, 1]")

    def __len__(self):
        return len(self.frames)


def load_keypoints(path, fps=30.0):
    """Read a keypoint text file: one line per frame, 54 decimals (18 x,y,c)."""
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for ln, line in enumerate(f):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != N_JOINTS * 3:
                raise ValueError(
                    f"{path}:{ln + 1}: expected {N_JOINTS * 3} values, got {len(parts)}"
                )
            rows.append(np.array(parts, dtype=np.float64).reshape(N_JOINTS, 3))
    if not rows:
        raise ValueError(f"{path}: no keypoint records")
    return PoseSequence(np.stack(rows), fps=fps)


def save_keypoints(seq, path):
    with open(path, "w", encoding="utf-8") as f:
        for frame in seq.frames:
            f.write(" ".join(f"{v:.6f}" for v in frame.reshape(-1)) + "\n")


def _fit_window(t, values, valid, half, polyorder, n):
    """Least-squares polynomial value at t over the valid entries of a
    window clipped to the sequence bounds."""
    lo = max(0, t - half)
    hi = min(n, t + half + 1)
    idx = np.arange(lo, hi)[valid[lo:hi]]
    if len(idx) == 0:
        return values[t]
    order = min(polyorder, len(idx) - 1)
    # centered abscissa keeps the Vandermonde system well conditioned
    coeffs = np.polynomial.polynomial.polyfit(idx - t, values[idx], order)
    return coeffs[0]


def smooth_sequence(seq, window=11, polyorder=3):
    """Savitzky-Golay smoothing of each keypoint coordinate over time.

    Each (joint, coordinate) series is filtered independently; confidences
    pass through unchanged. Undetected entries (confidence 0) are excluded
    from the local fits and keep their original value. Near the sequence
    ends the window is truncated to the available one-sided samples.
    """
    if window % 2 == 0:
        raise ValueError("window must be odd")
    if window <= polyorder:
        raise ValueError("window must exceed polyorder")
    n = len(seq)
    if window > n:
        raise ValueError(f"window {window} exceeds sequence length {n}")

    half = window // 2
    out = seq.frames.copy()
    valid_all = seq.frames[:, :, 2] > 0
    for j in range(N_JOINTS):
        valid = valid_all[:, j]
        if not valid.any():
            continue
        for c in range(2):
            series = seq.frames[:, j, c]
            for t in range(n):
                if valid[t]:
                    out[t, j, c] = _fit_window(t, series, valid, half, polyorder, n)
    return PoseSequence(out, fps=seq.fps)


def select_appearance_frame(seq):
    """Index of the frame with the largest keypoint-confidence sum
    (ties broken by the lowest index)."""
    if len(seq) < 1:
        raise ValueError("empty pose sequence")
    sums = seq.frames[:, :, 2].sum(axis=1)
    return int(np.argmax(sums))


def _segment_distance(px, py, a, b):
    """Distance from pixel grid (px, py) to segment a-b."""
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0:
        return np.hypot(px - a[0], py - a[1])
    t = ((px - a[0]) * ab[0] + (py - a[1]) * ab[1]) / denom
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(px - (a[0] + t * ab[0]), py - (a[1] + t * ab[1]))


def rasterize_pose(frame, height, width, sigma=6.0, limb_width=3.0):
    """Rasterize one keypoint frame into joint heatmaps plus limb maps.

    Joint channel i is a unit-peak Gaussian of width sigma centered on the
    keypoint, or all zeros when the joint is undetected. Limb channels are
    anti-aliased segments drawn between detected joint pairs. Output shape
    is (N_JOINTS + N_LIMBS, height, width), values in [0, 1].
    """
    if height <= 0 or width <= 0:
        raise ValueError("height and width must be positive")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (N_JOINTS, 3):
        raise ValueError(f"expected pose frame of shape ({N_JOINTS}, 3)")

    px, py = np.meshgrid(np.arange(width), np.arange(height))
    out = np.zeros((POSE_MAP_CHANNELS, height, width), dtype=np.float32)
    for i, (x, y, c) in enumerate(frame):
        if c <= 0:
            continue
        d2 = (px - x) ** 2 + (py - y) ** 2
        out[i] = np.exp(-d2 / (2.0 * sigma**2))
    for k, (a, b) in enumerate(LIMB_PAIRS):
        if frame[a, 2] <= 0 or frame[b, 2] <= 0:
            continue
        dist = _segment_distance(px, py, frame[a, :2], frame[b, :2])
        out[N_JOINTS + k] = np.clip(1.0 - dist / limb_width, 0.0, 1.0)
    return out


def rasterize_sequence(seq, height, width, sigma=6.0):
    return np.stack([rasterize_pose(f, height, width, sigma) for f in seq.frames])

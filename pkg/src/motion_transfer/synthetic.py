"""Synthetic fixtures: correspondence scenes for flow supervision and small
rendered "person" videos for pipeline smoke tests.

The stand-in person is a textured rectangle driven by a tiny skeleton; it
gives every stage a consistent, fully synthetic ground truth.
"""

import json
from pathlib import Path

import numpy as np

from .flow_stage import CorrespondenceScene, Triangle, oracle_flow
from .pose import N_JOINTS, PoseSequence, rasterize_pose, save_keypoints
from .regions import ParsingMap, save_frame, save_parsing


def square_scene(height, width, size, src_xy, tgt_xy, depth=1.0, face_id=0):
    """One axis-aligned square (two triangles) moved between views."""
    def faces(x, y, base_id):
        a = np.array([[x, y], [x + size, y], [x, y + size]])
        b = np.array([[x + size, y], [x + size, y + size], [x, y + size]])
        return [Triangle(base_id, a, depth), Triangle(base_id + 1, b, depth)]

    return CorrespondenceScene(
        source_faces=faces(*src_xy, face_id),
        target_faces=faces(*tgt_xy, face_id),
        height=height, width=width,
    )


def occlusion_scene(height, width):
    """Target square whose source counterpart hides behind a nearer face."""
    back = square_scene(height, width, 12, (10, 10), (34, 34),
                        depth=2.0, face_id=0)
    # occluder: static nearer square covering the back square's source spot
    occ = square_scene(height, width, 20, (6, 6), (6, 6), depth=1.0, face_id=10)
    return CorrespondenceScene(
        source_faces=back.source_faces + occ.source_faces,
        target_faces=back.target_faces + occ.target_faces,
        height=height, width=width,
    )


def skeleton_keypoints(size, cx, cy, span, rng=None):
    """A compact 18-joint stick figure centered at (cx, cy)."""
    kp = np.zeros((N_JOINTS, 3))
    u = span
    layout = {
        0: (0, -1.8), 1: (0, -1.0), 2: (-0.7, -1.0), 3: (-1.0, -0.3),
        4: (-1.1, 0.4), 5: (0.7, -1.0), 6: (1.0, -0.3), 7: (1.1, 0.4),
        8: (-0.4, 0.2), 9: (-0.45, 1.0), 10: (-0.5, 1.8), 11: (0.4, 0.2),
        12: (0.45, 1.0), 13: (0.5, 1.8), 14: (-0.15, -1.95), 15: (0.15, -1.95),
        16: (-0.35, -1.85), 17: (0.35, -1.85),
    }
    for j, (dx, dy) in layout.items():
        kp[j] = (cx + dx * u, cy + dy * u, 1.0)
    if rng is not None:
        kp[:, :2] += rng.normal(scale=0.05 * u, size=(N_JOINTS, 2))
    kp[:, :2] = np.clip(kp[:, :2], 0, size - 1)
    return kp


def skeleton_scene(size, src_kp, tgt_kp):
    """Triangulated torso+limb quads shared between two skeleton poses."""
    # joint pairs approximating body segments; each yields a quad (2 faces)
    segments = [(1, 8), (1, 11), (2, 3), (3, 4), (5, 6), (6, 7),
                (8, 9), (9, 10), (11, 12), (12, 13), (0, 1)]

    def faces(kp, half_width):
        out = []
        for fid, (a, b) in enumerate(segments):
            pa, pb = kp[a, :2], kp[b, :2]
            d = pb - pa
            n = np.array([-d[1], d[0]])
            norm = np.hypot(*n)
            n = n / norm * half_width if norm > 0 else np.array([half_width, 0.0])
            q = [pa + n, pb + n, pb - n, pa - n]
            out.append(Triangle(2 * fid, np.array([q[0], q[1], q[2]]), 1.0))
            out.append(Triangle(2 * fid + 1, np.array([q[0], q[2], q[3]]), 1.0))
        return out

    half = size * 0.03 + 1.0
    return CorrespondenceScene(source_faces=faces(src_kp, half),
                               target_faces=faces(tgt_kp, half),
                               height=size, width=size)


def flow_training_samples(n, size=64, sigma=None, seed=0):
    """(appearance pose map, target pose map, gt flow, gt vis) samples from
    random skeleton pairs."""
    rng = np.random.default_rng(seed)
    sigma = sigma or max(2.0, size / 32)
    samples = []
    for _ in range(n):
        span = size * 0.18
        src_kp = skeleton_keypoints(size, size * 0.5 + rng.uniform(-4, 4),
                                    size * 0.5, span, rng)
        tgt_kp = skeleton_keypoints(size, size * 0.5 + rng.uniform(-4, 4),
                                    size * 0.5, span, rng)
        scene = skeleton_scene(size, src_kp, tgt_kp)
        flow, vis = oracle_flow(scene)
        samples.append((rasterize_pose(src_kp, size, size, sigma),
                        rasterize_pose(tgt_kp, size, size, sigma),
                        flow, vis))
    return samples


def render_person(size, kp, texture_seed=0):
    """(frame, ParsingMap) with a textured rectangle around the skeleton."""
    rng = np.random.default_rng(texture_seed)
    frame = np.zeros((size, size, 3), dtype=np.float32)
    labels = np.zeros((size, size), dtype=np.int32)
    xs = kp[:, 0]
    ys = kp[:, 1]
    x0, x1 = int(xs.min()), int(np.ceil(xs.max())) + 1
    y0, y1 = int(ys.min()), int(np.ceil(ys.max())) + 1
    x0, y0 = max(0, x0), max(0, y0)
    x1, y1 = min(size, x1), min(size, y1)
    h, w = y1 - y0, x1 - x0
    if h <= 0 or w <= 0:
        raise ValueError("skeleton out of canvas")
    tex = rng.uniform(0.2, 1.0, size=(8, 8, 3)).astype(np.float32)
    import cv2

    frame[y0:y1, x0:x1] = cv2.resize(tex, (w, h), interpolation=cv2.INTER_LINEAR)
    labels[y0:y1, x0:x1] = 1
    # split upper/lower body labels for a multi-class parsing map
    mid = (y0 + y1) // 2
    labels[mid:y1, x0:x1] = 2
    return np.clip(frame, 0, 1), labels


def make_synthetic_video(t_frames, size=64, num_classes=20, seed=0, feather=0.0):
    """A moving textured person: (frames, parsings, PoseSequence, bg).

    With feather > 0 the person is composited through a Gaussian-blurred
    soft mask, so ground-truth frames differ from a hard parsing overlay
    near the silhouette.
    """
    import cv2

    rng = np.random.default_rng(seed)
    frames, parsings, kps = [], [], []
    bg = np.full((size, size, 3), 0.1, dtype=np.float32)
    bg[:, :, 2] = 0.3
    span = size * 0.16
    for t in range(t_frames):
        cx = size * 0.35 + (size * 0.3) * t / max(t_frames - 1, 1)
        cy = size * 0.5 + 2.0 * np.sin(t)
        kp = skeleton_keypoints(size, cx, cy, span, rng)
        frame, labels = render_person(size, kp, texture_seed=seed)
        mask = (labels > 0).astype(np.float32)
        if feather > 0:
            mask = cv2.GaussianBlur(mask, (0, 0), feather)
        frames.append(np.clip(frame * mask[..., None]
                              + bg * (1.0 - mask[..., None]), 0, 1))
        parsings.append(ParsingMap(labels, num_classes))
        kps.append(kp)
    return frames, parsings, PoseSequence(np.stack(kps)), bg


def write_synthetic_dataset(root, n_videos=2, t_frames=10, size=64,
                            num_classes=20, seed=0):
    """Materialize videos + manifest.json in the on-disk dataset layout."""
    root = Path(root)
    entries = []
    for v in range(n_videos):
        name = f"video_{v:03d}"
        vdir = root / name
        (vdir / "frames").mkdir(parents=True, exist_ok=True)
        (vdir / "parsing").mkdir(exist_ok=True)
        frames, parsings, seq, bg = make_synthetic_video(
            t_frames, size, num_classes, seed=seed + v)
        for t, (frame, parsing) in enumerate(zip(frames, parsings)):
            save_frame(frame, vdir / "frames" / f"frame_{t:05d}.png")
            save_parsing(parsing, vdir / "parsing" / f"frame_{t:05d}.png")
        save_keypoints(seq, vdir / "keypoints.txt")
        save_frame(bg, vdir / "background.png")
        entries.append({
            "name": name,
            "frame_dir": f"{name}/frames",
            "keypoint_file": f"{name}/keypoints.txt",
            "parsing_dir": f"{name}/parsing",
            "background": f"{name}/background.png",
            "split": "train" if v % 2 == 0 else "test",
            "resolution": [size, size],
        })
    manifest = {"videos": entries, "num_classes": num_classes}
    with open(root / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return root / "manifest.json"

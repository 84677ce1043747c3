"""Fréchet video distance between real and generated clip sets.

Videos are lists/arrays of (H, W, 3) float frames. Each video contributes
one fixed-length clip (first `clip_len` frames); clips are embedded by a
pluggable embedder, a Gaussian is fitted per side, and the Fréchet
distance between the two Gaussians is returned.
"""

import warnings
from dataclasses import dataclass

import cv2
import numpy as np


class NumericalFailure(RuntimeError):
    """Raised when the covariance square root is strongly indefinite."""


NEG_EIG_TOLERANCE = 1e-6


@dataclass
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    n: int

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        d = self.mean.shape[0]
        if self.cov.shape != (d, d):
            raise ValueError("covariance shape does not match mean dimension")
        if np.abs(self.cov - self.cov.T).max() > 1e-8:
            raise ValueError("covariance must be symmetric")
        if self.n < 2:
            raise ValueError("need at least two samples")

    @classmethod
    def fit(cls, embeddings):
        emb = np.asarray(embeddings, dtype=np.float64)
        if emb.ndim != 2 or emb.shape[0] < 2:
            raise ValueError("need a (n >= 2, d) embedding matrix")
        mean = emb.mean(axis=0)
        cov = np.cov(emb, rowvar=False, ddof=1)
        cov = np.atleast_2d(cov)
        cov = 0.5 * (cov + cov.T)
        return cls(mean, cov, emb.shape[0])


class RandomProjectionEmbedder:
    """Deterministic test embedder: downscale frames, flatten, project.

    Frames are resized to thumb_size x thumb_size so the projection matrix
    is independent of video resolution.
    """

    def __init__(self, dim=64, clip_len=30, thumb_size=16, seed=0):
        self.dim = dim
        self.clip_len = clip_len
        self.thumb_size = thumb_size
        rng = np.random.default_rng(seed)
        in_dim = clip_len * thumb_size * thumb_size * 3
        self.projection = rng.standard_normal((in_dim, dim)) / np.sqrt(in_dim)

    def __call__(self, clip):
        if len(clip) != self.clip_len:
            raise ValueError(f"expected a {self.clip_len}-frame clip, got {len(clip)}")
        thumbs = [
            cv2.resize(np.asarray(f, dtype=np.float32),
                       (self.thumb_size, self.thumb_size),
                       interpolation=cv2.INTER_AREA)
            for f in clip
        ]
        flat = np.stack(thumbs).reshape(-1).astype(np.float64)
        return flat @ self.projection


class TorchScriptClipEmbedder:
    """Loader for pretrained clip-embedding networks (I3D-style weights).

    `weights_path` holds a TorchScript module mapping a (1, 3, T, H, W)
    float batch to a (1, d) embedding.
    """

    def __init__(self, weights_path, clip_len=30):
        import torch

        self.clip_len = clip_len
        self._torch = torch
        self.model = torch.jit.load(weights_path, map_location="cpu")
        self.model.eval()

    def __call__(self, clip):
        torch = self._torch
        if len(clip) != self.clip_len:
            raise ValueError(f"expected a {self.clip_len}-frame clip, got {len(clip)}")
        x = torch.from_numpy(
            np.stack(clip).astype(np.float32).transpose(3, 0, 1, 2))[None]
        with torch.no_grad():
            out = self.model(x)
        return np.asarray(out[0], dtype=np.float64)


def extract_clips(video, length=30):
    """At most one clip per video: frames [0, length). Too-short videos
    yield an empty list with a warning."""
    frames = list(video)
    if len(frames) < length:
        warnings.warn(f"video with {len(frames)} frames is shorter than "
                      f"clip length {length}; skipped")
        return []
    return [frames[:length]]


def _sqrtm_psd(mat):
    vals, vecs = np.linalg.eigh(mat)
    if vals.min() < -NEG_EIG_TOLERANCE:
        raise NumericalFailure(
            f"matrix strongly indefinite (min eigenvalue {vals.min():.3e})")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(a, b):
    """||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}).

    The cross term uses the symmetrized product sqrt(S_a)^T S_b sqrt(S_a),
    whose eigenvalues match those of S_a S_b; tiny negative eigenvalues
    (> -1e-6) are clamped to zero.
    """
    if a.mean.shape != b.mean.shape:
        raise ValueError("distribution dimensions differ")
    root_a = _sqrtm_psd(a.cov)
    inner = root_a @ b.cov @ root_a
    inner = 0.5 * (inner + inner.T)
    vals = np.linalg.eigvalsh(inner)
    if vals.min() < -NEG_EIG_TOLERANCE:
        raise NumericalFailure(
            f"product strongly indefinite (min eigenvalue {vals.min():.3e})")
    trace_sqrt = np.sqrt(np.clip(vals, 0.0, None)).sum()
    diff = a.mean - b.mean
    return float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * trace_sqrt)


def compute_fvd(real_videos, fake_videos, embedder, clip_len=30):
    """Fréchet distance between Gaussian fits of clip embeddings."""
    def stats(videos):
        embs = []
        for video in videos:
            for clip in extract_clips(video, clip_len):
                embs.append(embedder(clip))
        if len(embs) < 2:
            raise ValueError("need at least two usable clips per side")
        return GaussianStats.fit(np.stack(embs))

    return frechet_distance(stats(real_videos), stats(fake_videos))

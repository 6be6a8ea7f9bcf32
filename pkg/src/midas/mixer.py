"""Convex mixing of clip pairs and their soft labels.

Two clips are blended frame by frame with a coefficient drawn from a
symmetric Beta distribution, and their soft labels are blended with the
same coefficient. The mixed label is optionally renormalized through a
softmax so it reads as a probability assignment rather than a raw average.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import Clip, LabeledDataset, require_resolved
from .errors import EmptyDatasetError, InvalidInputError, ShapeMismatchError
from .labels import as_soft_label, renormalize_softmax

DEFAULT_ALPHA = 0.8


@dataclass(frozen=True)
class MixCoefficient:
    """A blend weight in [0, 1] and the Beta concentration that produced it."""

    lam: float
    alpha: float

    def __post_init__(self):
        if not np.isfinite(self.lam) or not 0.0 <= self.lam <= 1.0:
            raise InvalidInputError(f"lambda must lie in [0, 1], got {self.lam}")
        if not np.isfinite(self.alpha) or self.alpha <= 0.0:
            raise InvalidInputError(f"alpha must be positive, got {self.alpha}")


@dataclass(frozen=True, eq=False)
class MixSample:
    """One mixed training sample and the bookkeeping of how it was made."""

    clip: Clip
    label: np.ndarray
    lam: float
    source_i: str
    source_j: str
    normalized: bool = True


def sample_lambda(alpha: float, rng: np.random.Generator) -> MixCoefficient:
    """Draw a blend weight from Beta(alpha, alpha)."""
    if not np.isfinite(alpha) or alpha <= 0.0:
        raise InvalidInputError(f"alpha must be positive, got {alpha}")
    return MixCoefficient(lam=float(rng.beta(alpha, alpha)), alpha=alpha)


def mix_clips(a: Clip, b: Clip, lam: float, clip_id: str | None = None) -> Clip:
    """Blend two clips frame by frame: lam * a + (1 - lam) * b.

    At lam = 1 or lam = 0 the result reproduces the surviving clip's frames
    bit for bit.
    """
    if not np.isfinite(lam) or not 0.0 <= lam <= 1.0:
        raise InvalidInputError(f"lambda must lie in [0, 1], got {lam}")
    if a.shape != b.shape:
        raise ShapeMismatchError(f"clip shapes differ: {a.shape} vs {b.shape}")
    # f64 accumulation keeps the endpoints exact: 1.0*x + 0.0*y == x.
    mixed = lam * a.frames.astype(np.float64) + (1.0 - lam) * b.frames.astype(np.float64)
    frames = np.clip(mixed, 0.0, 1.0).astype(np.float32)
    if clip_id is None:
        clip_id = f"mix({a.clip_id},{b.clip_id})"
    return Clip(clip_id=clip_id, frames=frames)


def mix_labels(
    y_a: np.ndarray, y_b: np.ndarray, lam: float, normalize: bool = True
) -> np.ndarray:
    """Blend two soft labels with the same weight used for the clips.

    With ``normalize`` the convex combination is passed through a softmax;
    without it the raw combination (which already sums to 1) is returned.
    """
    if not np.isfinite(lam) or not 0.0 <= lam <= 1.0:
        raise InvalidInputError(f"lambda must lie in [0, 1], got {lam}")
    y_a = as_soft_label(y_a)
    y_b = as_soft_label(y_b, class_count=y_a.size)
    mixed = lam * y_a + (1.0 - lam) * y_b
    if normalize:
        return renormalize_softmax(mixed)
    return mixed


@dataclass(frozen=True, eq=False)
class MixedBatch:
    """A batch of mixed samples plus the stacked tensors views of it."""

    samples: tuple[MixSample, ...]
    clips: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)


def midas_batch(
    dataset: LabeledDataset,
    batch_size: int,
    alpha: float,
    rng: np.random.Generator,
    normalize: bool = True,
) -> MixedBatch:
    """Draw ``batch_size`` mixed samples from distinct-clip pairs.

    Pairs come from full passes over a seeded permutation: within each pass,
    sample i is matched with the entry a fixed nonzero offset further along
    the permutation, so a clip is never mixed with itself. Each pass uses a
    fresh permutation and offset, and every clip appears as a left operand
    exactly once per pass. A fresh blend weight is drawn per pair.
    """
    if len(dataset) < 2:
        raise EmptyDatasetError("mixing needs at least 2 clips")
    if batch_size < 1:
        raise InvalidInputError(f"batch_size must be >= 1, got {batch_size}")
    require_resolved(dataset)
    n = len(dataset)
    samples: list[MixSample] = []
    while len(samples) < batch_size:
        perm = rng.permutation(n)
        offset = int(rng.integers(0, n - 1))  # step in [1, n-1] below
        for k in range(n):
            if len(samples) >= batch_size:
                break
            i = int(perm[k])
            j = int(perm[(k + 1 + offset) % n])
            coeff = sample_lambda(alpha, rng)
            entry_i = dataset.entries[i]
            entry_j = dataset.entries[j]
            clip = mix_clips(entry_i.clip, entry_j.clip, coeff.lam)
            label = mix_labels(entry_i.soft, entry_j.soft, coeff.lam, normalize=normalize)
            samples.append(
                MixSample(
                    clip=clip,
                    label=label,
                    lam=coeff.lam,
                    source_i=entry_i.clip.clip_id,
                    source_j=entry_j.clip.clip_id,
                    normalized=normalize,
                )
            )
    clips = np.stack([s.clip.frames for s in samples])
    labels = np.stack([s.label for s in samples])
    return MixedBatch(samples=tuple(samples), clips=clips, labels=labels)

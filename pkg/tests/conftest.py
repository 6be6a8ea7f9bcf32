"""Shared builders and hypothesis strategies for the test suite."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import strategies as st

from midas.dataset import Clip, LabeledDataset, build_dataset
from midas.labels import VoteRecord

DEFAULT_SHAPE = (3, 4, 4, 1)


def make_clip(clip_id: str, value=None, shape=DEFAULT_SHAPE, rng=None) -> Clip:
    """Constant-valued clip, or a seeded random one when value is None."""
    if value is not None:
        frames = np.full(shape, value, dtype=np.float32)
    else:
        rng = rng or np.random.default_rng(abs(hash(clip_id)) % (2**32))
        frames = rng.random(shape, dtype=np.float32)
    return Clip(clip_id=clip_id, frames=frames)


def make_dataset(vote_rows, class_names=None, shape=DEFAULT_SHAPE, seed=0) -> LabeledDataset:
    """Dataset with random clips and the given per-clip vote count rows."""
    vote_rows = [np.asarray(v, dtype=np.int64) for v in vote_rows]
    class_count = vote_rows[0].size
    if class_names is None:
        class_names = tuple(f"class_{c}" for c in range(class_count))
    rng = np.random.default_rng(seed)
    clips = [
        Clip(clip_id=f"clip-{k:03d}", frames=rng.random(shape, dtype=np.float32))
        for k in range(len(vote_rows))
    ]
    return build_dataset(clips, [VoteRecord(v) for v in vote_rows], class_names=class_names)


def unanimous_rows(labels, total=10, class_count=None):
    """One all-votes-on-one-class row per requested label."""
    labels = list(labels)
    class_count = class_count or (max(labels) + 1)
    rows = []
    for lab in labels:
        row = np.zeros(class_count, dtype=np.int64)
        row[lab] = total
        rows.append(row)
    return rows


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@st.composite
def vote_count_rows(draw, class_count=7, max_votes=10):
    """A vote tally with at least one vote."""
    row = draw(
        st.lists(
            st.integers(min_value=0, max_value=max_votes),
            min_size=class_count,
            max_size=class_count,
        ).filter(lambda r: sum(r) >= 1)
    )
    return np.asarray(row, dtype=np.int64)


@st.composite
def soft_labels(draw, class_count=7):
    """A probability vector derived from votes, so it sums to 1 exactly enough."""
    counts = draw(vote_count_rows(class_count=class_count))
    return counts / counts.sum()


@st.composite
def unique_max_rows(draw, class_count=7, max_votes=10):
    """Vote tallies whose maximum is attained exactly once."""
    row = draw(vote_count_rows(class_count=class_count, max_votes=max_votes))
    if np.count_nonzero(row == row.max()) != 1:
        winner = draw(st.integers(min_value=0, max_value=class_count - 1))
        row = row.copy()
        row[winner] = row.max() + 1
    return row

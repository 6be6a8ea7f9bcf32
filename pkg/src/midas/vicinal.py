"""Risk estimators over mixed samples and the blend-weight reparameterization.

The mixed-label training objective can be rewritten so each mixed pair looks
like a partially trusted one-hot target: with S annotators of whom l picked
the true class of the left sample, the blend weight lam becomes
lam' = lam * l / S against a one-hot target, and everything else (the wrong
votes of the left sample plus the right sample's soft label) folds into a
virtual label carrying weight 1 - lam'. ``check_vicinal_identity`` verifies
the rewrite reproduces the plain label mixture to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import LabeledDataset
from .errors import DegenerateMixError, EmptyDatasetError, InvalidInputError
from .labels import LabelDecomposition, as_soft_label, one_hot
from .mixer import midas_batch

LABEL_MODES = ("soft", "hard")


@dataclass(frozen=True)
class RiskEstimate:
    """A mean loss in nats, its term count, and the standard error."""

    value: float
    num_terms: int
    stderr: float

    def __post_init__(self):
        if self.num_terms < 1:
            raise InvalidInputError(f"num_terms must be >= 1, got {self.num_terms}")
        if not np.isfinite(self.stderr) or self.stderr < 0.0:
            raise InvalidInputError(f"stderr must be >= 0, got {self.stderr}")


@dataclass(frozen=True)
class VicinalParams:
    """The reparameterized blend weight and its virtual label."""

    lambda_prime: float
    virtual_label: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.lambda_prime <= 1.0:
            raise InvalidInputError(
                f"lambda_prime must lie in [0, 1], got {self.lambda_prime}"
            )
        total = float(np.sum(self.virtual_label))
        if abs(total - 1.0) > 1e-9:
            raise InvalidInputError(f"virtual label sums to {total}, expected 1")


def cross_entropy(prediction: np.ndarray, label: np.ndarray) -> float:
    """Soft cross-entropy -sum(label * ln(prediction)) with clamped log input."""
    p = np.clip(np.asarray(prediction, dtype=np.float64), 1e-12, None)
    return float(-np.sum(np.asarray(label, dtype=np.float64) * np.log(p)))


def _estimate_from_losses(losses: np.ndarray) -> RiskEstimate:
    m = losses.size
    value = float(losses.mean())
    stderr = float(losses.std(ddof=1) / np.sqrt(m)) if m > 1 else 0.0
    return RiskEstimate(value=value, num_terms=m, stderr=stderr)


def empirical_risk(predictor, dataset: LabeledDataset, loss=cross_entropy) -> RiskEstimate:
    """Mean of loss(predictor(clip), soft label) over the dataset."""
    if not dataset.entries:
        raise EmptyDatasetError("cannot estimate risk on an empty dataset")
    losses = np.array(
        [loss(predictor(e.clip), e.soft) for e in dataset.entries], dtype=np.float64
    )
    return _estimate_from_losses(losses)


def vicinal_risk(
    predictor,
    dataset: LabeledDataset,
    alpha: float,
    draws: int,
    label_mode: str,
    rng: np.random.Generator,
    loss=cross_entropy,
) -> RiskEstimate:
    """Monte-Carlo mean of the loss over mixed clip pairs.

    ``label_mode`` selects the target of each mixed clip: "soft" blends the
    sources' soft labels, "hard" blends one-hot encodings of their hard
    labels. Either way the blend is the plain convex combination, without
    softmax renormalization. Deterministic given the generator state.
    """
    if draws < 1:
        raise InvalidInputError(f"draws must be >= 1, got {draws}")
    if label_mode not in LABEL_MODES:
        raise InvalidInputError(f"label_mode must be one of {LABEL_MODES}, got {label_mode!r}")
    batch = midas_batch(dataset, batch_size=draws, alpha=alpha, rng=rng, normalize=False)
    hard_by_id = {e.clip.clip_id: e.hard for e in dataset.entries}
    losses = np.empty(draws, dtype=np.float64)
    for k, s in enumerate(batch.samples):
        if label_mode == "soft":
            target = s.label
        else:
            c = dataset.class_count
            target = s.lam * one_hot(hard_by_id[s.source_i], c) + (1.0 - s.lam) * one_hot(
                hard_by_id[s.source_j], c
            )
        losses[k] = loss(predictor(s.clip), target)
    return _estimate_from_losses(losses)


def reparameterize(
    lam: float, decomposition: LabelDecomposition, qj: np.ndarray, annotators: int
) -> VicinalParams:
    """Rewrite a soft-label mixture as a scaled one-hot-plus-virtual-label pair.

    With l correct votes out of S annotators, lambda_prime = lam * l / S and
    the virtual label is
    (lam / (S - lam*l)) * (S * wrong_mass) + (S * (1 - lam) / (S - lam*l)) * qj.
    The denominator vanishes only at lam = 1 with a unanimous correct vote,
    where the rewrite is undefined.
    """
    if not np.isfinite(lam) or not 0.0 <= lam <= 1.0:
        raise InvalidInputError(f"lambda must lie in [0, 1], got {lam}")
    if annotators < 1:
        raise InvalidInputError(f"annotator count must be >= 1, got {annotators}")
    l = decomposition.correct_count
    if l > annotators:
        raise InvalidInputError(f"correct count {l} exceeds annotator count {annotators}")
    qj = as_soft_label(qj, class_count=decomposition.wrong_mass.size)
    s = float(annotators)
    denom = s - lam * l
    if denom <= 0.0:
        raise DegenerateMixError(
            "reparameterization undefined at lambda = 1 with unanimous correct votes"
        )
    virtual = (lam / denom) * (s * decomposition.wrong_mass) + (s * (1.0 - lam) / denom) * qj
    return VicinalParams(lambda_prime=lam * l / s, virtual_label=virtual)


def check_vicinal_identity(
    lam: float,
    qi: np.ndarray,
    qj: np.ndarray,
    decomposition: LabelDecomposition,
    true_class: int,
    annotators: int,
) -> float:
    """Max-abs residual between the rewritten pair and the plain mixture.

    Computes lambda_prime * onehot(true_class) + (1 - lambda_prime) * virtual
    minus lam * qi + (1 - lam) * qj; valid inputs keep this at <= 1e-12.
    """
    params = reparameterize(lam, decomposition, qj, annotators)
    c = decomposition.wrong_mass.size
    lhs = params.lambda_prime * one_hot(true_class, c) + (
        1.0 - params.lambda_prime
    ) * params.virtual_label
    rhs = lam * np.asarray(qi, dtype=np.float64) + (1.0 - lam) * np.asarray(
        qj, dtype=np.float64
    )
    return float(np.max(np.abs(lhs - rhs)))

"""Classification, chaos and contrastive objectives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from neurodyn import autodiff as ad
from neurodyn.errors import DimensionError, ParameterError


def _t(x):
    return x if isinstance(x, ad.Tensor) else ad.constant(x)


def nt_xent(Z, tau=0.5):
    """Normalized-temperature cross entropy over ``2N`` rows.

    Rows ``2i`` and ``2i + 1`` are the two views of sample ``i``. Rows are
    L2-normalized internally, so cosine similarity is a plain dot product.
    The result is the mean of the ``2N`` per-row terms.
    """
    if tau <= 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    Z = _t(Z)
    if Z.ndim != 2 or Z.shape[0] < 2 or Z.shape[0] % 2:
        raise DimensionError(f"nt_xent expects a 2N x D matrix, got {Z.shape}")
    n2 = Z.shape[0]
    z = ad.l2_normalize(Z, axis=1)
    logits = ad.scalar_mul(z @ ad.transpose(z), 1.0 / tau)
    # drop k == i by pushing the diagonal far below every other logit
    mask = np.where(np.eye(n2, dtype=bool), -1e9, 0.0)
    logp = ad.log_softmax(logits + mask, axis=1)
    partner = np.zeros((n2, n2))
    idx = np.arange(n2)
    partner[idx, idx ^ 1] = 1.0
    return ad.scalar_mul(ad.sum(logp * partner), -1.0 / n2)


def cross_entropy(logits, labels):
    """Mean softmax cross entropy with integer labels."""
    logits = _t(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy: logits {logits.shape}, labels {labels.shape}")
    onehot = np.zeros(logits.shape)
    onehot[np.arange(labels.size), labels] = 1.0
    return ad.scalar_mul(ad.sum(ad.log_softmax(logits, axis=1) * onehot), -1.0 / labels.size)


def bce_with_logits(logit, target):
    """Mean binary cross entropy in the overflow-free form ``softplus(x) - y x``."""
    logit = _t(logit)
    y = np.asarray(target, dtype=np.float64)
    if y.shape != logit.shape:
        raise DimensionError(f"bce: logits {logit.shape}, targets {y.shape}")
    softplus = ad.relu(logit) + ad.log(1.0 + ad.exp(-ad.abs(logit)))
    return ad.mean(softplus - logit * y)


@dataclass(frozen=True)
class LossWeights:
    classification: float = 1.0
    chaos: float = 0.6
    contrastive: float = 0.3

    def __post_init__(self):
        if min(self.classification, self.chaos, self.contrastive) < 0:
            raise ParameterError("loss weights must be non-negative")


def total_loss(outputs, labels, weights: LossWeights = LossWeights(), tau=0.5, proj_pairs=None):
    """Weighted multitask objective.

    ``outputs`` holds ``logits_mi`` and ``logit_chaos``; ``labels`` holds
    ``mi`` and ``chaos`` integer arrays. The contrastive term uses
    ``proj_pairs`` (2N x D, pairs interleaved), else ``outputs['proj']``.
    It is skipped entirely when its weight is 0. Returns ``(loss, parts)``
    with float components for logging.
    """
    ce = cross_entropy(outputs["logits_mi"], labels["mi"])
    bce = bce_with_logits(outputs["logit_chaos"], labels["chaos"])
    loss = ad.scalar_mul(ce, weights.classification) + ad.scalar_mul(bce, weights.chaos)
    parts = {"classification": ce.item(), "chaos": bce.item(), "contrastive": 0.0}
    if weights.contrastive > 0:
        Z = proj_pairs if proj_pairs is not None else outputs["proj"]
        con = nt_xent(Z, tau)
        loss = loss + ad.scalar_mul(con, weights.contrastive)
        parts["contrastive"] = con.item()
    parts["total"] = loss.item()
    return loss, parts

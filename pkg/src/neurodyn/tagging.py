"""Entropy-based chaos tagging and agreement between labelings.

Each epoch of a recording is mapped to a point (spectral entropy, permutation
entropy); the points are split by 2-means and the cluster with the lower mean
entropy is called chaotic. Pass ``invert=True`` for the opposite convention.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from neurodyn.errors import ContractError, DegenerateError, ParameterError
from neurodyn.sigproc import Recording, WindowSpec, segment_windows, welch_psd

CHAOTIC = "chaotic"
NON_CHAOTIC = "non_chaotic"


def spectral_entropy(power) -> float:
    """Shannon entropy of a normalized power spectrum, divided by ``log N_f``."""
    p = np.asarray(power, dtype=np.float64).reshape(-1)
    if p.size < 2:
        raise ParameterError("spectral entropy needs at least 2 frequency bins")
    if np.any(p < 0):
        raise ParameterError("power spectrum must be non-negative")
    total = p.sum()
    if total <= 0:
        raise DegenerateError("spectral entropy of a zero spectrum")
    n_bins = p.size
    p = p[p > 0] / total
    h = -float(np.sum(p * np.log(p))) / math.log(n_bins)
    return min(max(h, 0.0), 1.0) + 0.0


def ordinal_patterns(x, order=4, delay=1) -> np.ndarray:
    """Lehmer code of the stable argsort of each embedded vector.

    Ties are broken by index order, so a run of equal values counts as rising.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    span = (order - 1) * delay
    if order < 2 or delay < 1:
        raise ParameterError("order must be >= 2 and delay >= 1")
    if x.size < span + 2:
        raise ParameterError(f"series of length {x.size} too short for order {order}, delay {delay}")
    emb = sliding_window_view(x, span + 1)[:, ::delay]
    ranks = np.argsort(emb, axis=1, kind="stable")
    code = np.zeros(ranks.shape[0], dtype=np.int64)
    for i in range(order):
        smaller = np.sum(ranks[:, i + 1:] < ranks[:, i:i + 1], axis=1)
        code = code * (order - i) + smaller
    return code


def permutation_entropy(x, order=4, delay=1) -> float:
    """Normalized Shannon entropy of ordinal patterns, in [0, 1]."""
    codes = ordinal_patterns(x, order, delay)
    counts = np.bincount(codes)
    p = counts[counts > 0] / codes.size
    h = -float(np.sum(p * np.log(p))) / math.log(math.factorial(order))
    return min(max(h, 0.0), 1.0) + 0.0


@dataclass(frozen=True)
class EntropyFeatures:
    h_spec: float
    h_perm: float

    @property
    def mean(self) -> float:
        return 0.5 * (self.h_spec + self.h_perm)


def entropy_features(rec: Recording, order=4, delay=1, segment_len=256) -> EntropyFeatures:
    """Channel-averaged spectral and permutation entropy of one recording/epoch."""
    seg = min(segment_len, rec.n_samples)
    psd = welch_psd(rec, segment_len=seg)
    hs = [spectral_entropy(psd.power[c]) for c in range(rec.n_channels)]
    hp = [permutation_entropy(rec.data[c], order, delay) for c in range(rec.n_channels)]
    return EntropyFeatures(float(np.mean(hs)), float(np.mean(hp)))


def _two_means(X, max_iter=100):
    sums = X.sum(axis=1)
    # order-independent extremal seeds: by entropy sum, ties by coordinates
    key = np.lexsort((X[:, 1], X[:, 0], sums))
    lo, hi = X[key[0]].copy(), X[key[-1]].copy()
    if np.array_equal(lo, hi):
        raise DegenerateError("all feature points are identical")
    centers = np.stack([lo, hi])
    assign = None
    for _ in range(max_iter):
        d = ((X[:, None, :] - centers[None]) ** 2).sum(axis=2)
        new = (d[:, 1] < d[:, 0]).astype(int)
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        for k in (0, 1):
            if np.any(assign == k):
                centers[k] = X[assign == k].mean(axis=0)
    return assign, centers


def cluster_tags(features, invert=False):
    """2-means labels for a list of EntropyFeatures.

    Returns ``(labels, centers)`` where ``centers[0]`` is the chaotic cluster.
    The lower-mean-entropy cluster is chaotic unless ``invert``.
    """
    X = np.array([[f.h_spec, f.h_perm] for f in features], dtype=np.float64)
    if X.shape[0] < 2:
        raise ParameterError("cluster_tags needs at least 2 feature points")
    assign, centers = _two_means(X)
    means = centers.mean(axis=1)
    chaotic = int(means[1] < means[0])
    if invert:
        chaotic = 1 - chaotic
    labels = [CHAOTIC if a == chaotic else NON_CHAOTIC for a in assign]
    return labels, centers[[chaotic, 1 - chaotic]]


def majority_vote(labels) -> str:
    """Majority label; an exact tie resolves to non_chaotic."""
    labels = list(labels)
    if not labels:
        raise ParameterError("majority_vote needs at least one label")
    n_chaotic = sum(1 for x in labels if x == CHAOTIC)
    return CHAOTIC if 2 * n_chaotic > len(labels) else NON_CHAOTIC


@dataclass(frozen=True)
class TagReport:
    epoch_labels: tuple
    file_label: str
    centers: tuple
    epoch_seconds: float
    features: tuple = field(default=(), compare=False)

    def to_dict(self):
        return {"epoch_labels": list(self.epoch_labels), "file_label": self.file_label,
                "centers": [list(c) for c in self.centers], "epoch_seconds": self.epoch_seconds,
                "features": [[f.h_spec, f.h_perm] for f in self.features]}


def epoch_features(rec: Recording, epoch_seconds=3.0, order=4, delay=1):
    n = int(round(epoch_seconds * rec.sample_rate_hz))
    if n < 2:
        raise ParameterError("epoch shorter than two samples")
    if n > rec.n_samples:
        raise ParameterError(f"recording of {rec.n_samples} samples is shorter than one {epoch_seconds} s epoch")
    return [entropy_features(w, order, delay) for w in segment_windows(rec, WindowSpec(n, 0.0))]


def tag_recordings(recordings: dict, epoch_seconds=3.0, order=4, delay=1, invert=False) -> dict:
    """Tag every file by clustering all epochs jointly, then voting per file."""
    names = list(recordings)
    per_file = {name: epoch_features(recordings[name], epoch_seconds, order, delay) for name in names}
    flat = [f for name in names for f in per_file[name]]
    labels, centers = cluster_tags(flat, invert)
    out, i = {}, 0
    cen = tuple(tuple(float(v) for v in c) for c in centers)
    for name in names:
        k = len(per_file[name])
        ep = tuple(labels[i:i + k])
        i += k
        out[name] = TagReport(ep, majority_vote(ep), cen, float(epoch_seconds), tuple(per_file[name]))
    return out


# -- agreement ----------------------------------------------------------------

def cohens_kappa(a, b) -> float:
    """Chance-corrected agreement; defined as 1 when chance agreement is 1."""
    a, b = list(a), list(b)
    if len(a) != len(b):
        raise ContractError(f"label lists differ in length ({len(a)} vs {len(b)})")
    if not a:
        raise ContractError("cohens_kappa needs at least one label")
    # integer form of (p_o - p_e) / (1 - p_e): exact and symmetric in a, b
    n = len(a)
    agree = sum(x == y for x, y in zip(a, b))
    ca, cb = Counter(a), Counter(b)
    chance = sum(ca[k] * cb[k] for k in ca)
    if chance == n * n:
        return 1.0
    return (n * agree - chance) / (n * n - chance)


def f1_score(reference, predicted, positive=CHAOTIC):
    """F1 of ``predicted`` against ``reference``; None when neither has a positive."""
    tp = sum(r == positive and p == positive for r, p in zip(reference, predicted))
    fp = sum(r != positive and p == positive for r, p in zip(reference, predicted))
    fn = sum(r == positive and p != positive for r, p in zip(reference, predicted))
    if 2 * tp + fp + fn == 0:
        return None
    return 2 * tp / (2 * tp + fp + fn)


@dataclass(frozen=True)
class AgreementReport:
    kappa: float
    f1: float | None
    counts: tuple  # ((both positive, ref only), (pred only, both negative))

    @property
    def n(self):
        return sum(sum(row) for row in self.counts)

    def to_dict(self):
        return {"kappa": self.kappa, "f1": self.f1, "counts": [list(r) for r in self.counts], "n": self.n}


def agreement(reference, predicted, positive=CHAOTIC) -> AgreementReport:
    reference, predicted = list(reference), list(predicted)
    kappa = cohens_kappa(reference, predicted)
    pos_r = [r == positive for r in reference]
    pos_p = [p == positive for p in predicted]
    tp = sum(r and p for r, p in zip(pos_r, pos_p))
    fn = sum(r and not p for r, p in zip(pos_r, pos_p))
    fp = sum(p and not r for r, p in zip(pos_r, pos_p))
    tn = len(reference) - tp - fn - fp
    return AgreementReport(kappa, f1_score(reference, predicted, positive), ((tp, fn), (fp, tn)))

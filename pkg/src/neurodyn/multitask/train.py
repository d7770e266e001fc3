"""Joint training, evaluation and the linear probe."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from neurodyn import autodiff as ad
from neurodyn.errors import DegenerateError, DomainError, ParameterError, TrainingError
from neurodyn.multitask.augment import augment_batch
from neurodyn.multitask.losses import cross_entropy, total_loss
from neurodyn.multitask.model import MtlConfig, MtlParams, forward_tensors, init_mtl, mtl_forward
from neurodyn.optim import AdamW, clip_grad_norm
from neurodyn.synth import MI_CLASSES


def corpus_arrays(corpus):
    """``(X, y_mi, y_chaos)`` from a list of trials or an ``(X, y_mi, y_chaos)`` tuple.

    Positive classes are "imagery" and "chaotic".
    """
    if isinstance(corpus, tuple):
        X, y_mi, y_chaos = corpus
        return (np.asarray(X, dtype=np.float64), np.asarray(y_mi, dtype=np.int64),
                np.asarray(y_chaos, dtype=np.int64))
    corpus = list(corpus)
    if not corpus:
        raise ParameterError("empty corpus")
    X = np.stack([tr.recording.data for tr in corpus])
    y_mi = np.array([MI_CLASSES.index(tr.mi_label) for tr in corpus], dtype=np.int64)
    y_chaos = np.array([tr.chaos_label == "chaotic" for tr in corpus], dtype=np.int64)
    return X, y_mi, y_chaos


@dataclass(frozen=True)
class MtlReport:
    losses: tuple          # mean total loss per epoch
    components: tuple      # per epoch: (classification, chaos, contrastive)
    train_acc_mi: tuple
    train_acc_chaos: tuple
    seed: int
    wall_time_s: float = field(default=0.0, compare=False)

    def to_dict(self):
        return {"losses": list(self.losses), "components": [list(c) for c in self.components],
                "train_acc_mi": list(self.train_acc_mi), "train_acc_chaos": list(self.train_acc_chaos),
                "seed": self.seed, "wall_time_s": self.wall_time_s}


def mtl_train(corpus, cfg: MtlConfig = MtlConfig.toy(), init: MtlParams | None = None,
              track_accuracy=True):
    """Algorithm-2 style joint training.

    Each batch feeds the raw windows to the supervised heads and, when the
    contrastive weight is positive, two augmented views of every window to
    the projection head. Shuffling, augmentation and dropout draw from
    separate streams of one seed, so switching the contrastive term off
    leaves the other streams untouched.
    """
    X, y_mi, y_chaos = corpus_arrays(corpus)
    if X.ndim != 3 or X.shape[0] == 0:
        raise ParameterError(f"corpus must be a non-empty B x C x T stack, got {X.shape}")
    if len(set(y_mi.tolist())) < 2 or len(set(y_chaos.tolist())) < 2:
        raise ParameterError("both label kinds need two classes present")
    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    shuffle_rng, aug_rng, drop_rng, init_rng = (np.random.default_rng(s) for s in seeds)
    params = init_mtl(X.shape[1], cfg, init_rng) if init is None else init
    meta = params.meta()
    arrays = dict(params.arrays)
    opt = AdamW(lr=cfg.lr, weight_decay=cfg.weight_decay)
    w = cfg.weights
    losses, comps, acc_mi, acc_ch = [], [], [], []
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr * cfg.lr_decay ** (epoch // cfg.lr_step_epochs)
        order = shuffle_rng.permutation(X.shape[0])
        sums = np.zeros(4)
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            xb = X[idx]
            n = len(idx)
            contrastive = w.contrastive > 0
            if contrastive:
                v1 = augment_batch(xb, cfg.augment, aug_rng)
                v2 = augment_batch(xb, cfg.augment, aug_rng)
                views = np.empty((2 * n,) + xb.shape[1:])
                views[0::2], views[1::2] = v1, v2
                inputs = np.concatenate([xb, views])
            else:
                inputs = xb
            try:
                with ad.Tape() as tape:
                    p = {k: tape.watch(v) for k, v in arrays.items()}
                    out = forward_tensors(p, inputs, meta, cfg, drop_rng)
                    sup = {"logits_mi": out["logits_mi"][:n], "logit_chaos": out["logit_chaos"][:n]}
                    pairs = out["proj"][n:] if contrastive else None
                    loss, parts = total_loss(sup, {"mi": y_mi[idx], "chaos": y_chaos[idx]},
                                             w, cfg.tau, proj_pairs=pairs)
                    if not math.isfinite(parts["total"]):
                        raise TrainingError("non-finite loss", epoch=epoch)
                    grads = tape.gradient(loss, [p[k] for k in arrays])
                grads, _ = clip_grad_norm(dict(zip(arrays, grads)), cfg.grad_clip)
                arrays = opt.step(arrays, grads)
            except (DomainError, FloatingPointError) as exc:
                raise TrainingError(f"MTL training diverged in epoch {epoch}: {exc}", epoch=epoch) from exc
            except TrainingError as exc:
                exc.epoch = epoch
                raise
            sums += n * np.array([parts["total"], parts["classification"], parts["chaos"], parts["contrastive"]])
        means = sums / X.shape[0]
        losses.append(float(means[0]))
        comps.append(tuple(float(v) for v in means[1:]))
        if track_accuracy:
            m = evaluate(params.with_arrays(arrays), (X, y_mi, y_chaos), cfg)
            acc_mi.append(m["acc_mi"])
            acc_ch.append(m["acc_chaos"])
    report = MtlReport(tuple(losses), tuple(comps), tuple(acc_mi), tuple(acc_ch), cfg.seed,
                       time.perf_counter() - t0)
    return params.with_arrays(arrays), report


def binary_f1(labels, preds):
    """F1 for the positive class 1; None when the labels hold a single class."""
    labels, preds = np.asarray(labels), np.asarray(preds)
    if len(np.unique(labels)) < 2:
        return None
    tp = int(np.sum((labels == 1) & (preds == 1)))
    fp = int(np.sum((labels == 0) & (preds == 1)))
    fn = int(np.sum((labels == 1) & (preds == 0)))
    return 2 * tp / (2 * tp + fp + fn)


def predict(params: MtlParams, X, cfg: MtlConfig, batch_size=256):
    mi, ch = [], []
    for s in range(0, len(X), batch_size):
        out = mtl_forward(params, X[s:s + batch_size], cfg)
        mi.append(np.argmax(out["logits_mi"], axis=1))
        ch.append((out["logit_chaos"] > 0).astype(np.int64))  # sigmoid > 0.5
    return np.concatenate(mi), np.concatenate(ch)


def evaluate(params: MtlParams, corpus, cfg: MtlConfig = MtlConfig.toy()) -> dict:
    X, y_mi, y_chaos = corpus_arrays(corpus)
    p_mi, p_ch = predict(params, X, cfg)
    return {"acc_mi": float(np.mean(p_mi == y_mi)), "f1_mi": binary_f1(y_mi, p_mi),
            "acc_chaos": float(np.mean(p_ch == y_chaos)), "f1_chaos": binary_f1(y_chaos, p_ch)}


def linear_probe(embeddings, labels, lr=1e-2, epochs=200, holdout=0.3, seed=0) -> float:
    """Holdout accuracy of a softmax-regression probe on frozen embeddings.

    The split is stratified; features are standardized with training
    statistics. Raises DegenerateError when either split lacks a class.
    """
    E = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if E.ndim != 2 or y.shape != (E.shape[0],):
        raise ParameterError(f"embeddings {E.shape} and labels {y.shape} disagree")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == c))
        k = int(round(holdout * idx.size))
        test.extend(idx[:k])
        train.extend(idx[k:])
    train, test = np.array(sorted(train)), np.array(sorted(test))
    if train.size == 0 or test.size == 0 or len(np.unique(y[train])) < 2:
        raise DegenerateError("linear probe split needs at least two classes in training and a non-empty holdout")
    classes = np.unique(y)
    yi = np.searchsorted(classes, y)
    mu, sd = E[train].mean(axis=0), E[train].std(axis=0)
    sd[sd == 0] = 1.0
    Z = (E - mu) / sd
    arrays = {"w": np.zeros((E.shape[1], classes.size)), "b": np.zeros(classes.size)}
    opt = AdamW(lr=lr)
    for _ in range(epochs):
        with ad.Tape() as tape:
            p = {k: tape.watch(v) for k, v in arrays.items()}
            loss = cross_entropy(ad.constant(Z[train]) @ p["w"] + p["b"], yi[train])
            gw, gb = tape.gradient(loss, [p["w"], p["b"]])
        arrays = opt.step(arrays, {"w": gw, "b": gb})
    pred = np.argmax(Z[test] @ arrays["w"] + arrays["b"], axis=1)
    return float(np.mean(pred == yi[test]))

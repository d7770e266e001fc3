"""Toy-scale multitask model: motor-imagery class, chaos label and contrastive embedding."""

from neurodyn.multitask.augment import AugmentConfig, augment, augment_batch
from neurodyn.multitask.losses import LossWeights, bce_with_logits, cross_entropy, nt_xent, total_loss
from neurodyn.multitask.model import MtlConfig, MtlParams, attention, embed, init_mtl, mtl_forward
from neurodyn.multitask.train import MtlReport, binary_f1, corpus_arrays, evaluate, linear_probe, mtl_train

__all__ = [
    "AugmentConfig", "augment", "augment_batch",
    "LossWeights", "bce_with_logits", "cross_entropy", "nt_xent", "total_loss",
    "MtlConfig", "MtlParams", "attention", "embed", "init_mtl", "mtl_forward",
    "MtlReport", "binary_f1", "corpus_arrays", "evaluate", "linear_probe", "mtl_train",
]

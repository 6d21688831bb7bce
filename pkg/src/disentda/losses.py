"""The three training objectives and their weighted combination.

l_task supervises the source-labeled recombinations (within-domain shuffle
and cross-domain swap) with cross-entropy plus an L1 penalty on the source
mask. l_agree asks the two target recombinations to assign the same
probability to the sample's own pseudo class, measured by an L1 distance
over non-parametric bank-softmax predictions, plus the target-mask penalty.
l_neighbor pulls each target embedding toward the affinity mass of its
top-k bank neighbors. The total is

    total = l_task + lambda1 * l_neighbor + lambda2 * l_agree

Bank anchors are constants inside all loss gradients: the bank is updated
by its own moving-average rule, never by backpropagation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .membank import MemoryBank
from .util import ConfigError

CSV_FIELDS = (
    "step",
    "l_task",
    "l_agree",
    "l_neighbor",
    "mask_l1_S",
    "mask_l1_T",
    "total",
    "mean_mask_S",
    "mean_mask_T",
)


@dataclass
class LossConfig:
    """Weights shared by the loss terms.

    w scales the mask L1 penalties, lambda1/lambda2 weight the neighbor and
    agreement terms in the total, tau is the bank softmax temperature and k
    the neighbor count used when building the neighbor sets.
    """

    w: float = 1e-4
    lambda1: float = 0.8
    lambda2: float = 1.0
    tau: float = 0.05
    k: int = 6

    def validate(self) -> "LossConfig":
        if not self.w > 0:
            raise ConfigError(f"w must be positive, got {self.w}")
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.k < 1:
            raise ConfigError(f"k must be at least 1, got {self.k}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError(
                f"lambda weights must be nonnegative, got {self.lambda1}, {self.lambda2}"
            )
        return self


@dataclass
class LossBreakdown:
    """Scalar values of one step's losses, as written to the loss CSV."""

    l_task: float
    l_agree: float
    l_neighbor: float
    mask_l1_S: float
    mask_l1_T: float
    total: float
    mean_mask_S: float = 0.0
    mean_mask_T: float = 0.0

    def csv_row(self, step: int) -> str:
        vals = (
            self.l_task,
            self.l_agree,
            self.l_neighbor,
            self.mask_l1_S,
            self.mask_l1_T,
            self.total,
            self.mean_mask_S,
            self.mean_mask_T,
        )
        return ",".join([str(step)] + [repr(float(v)) for v in vals])


def mask_l1(mask: Tensor) -> Tensor:
    """Per-batch mean over samples of the per-sample mask L1 norm.

    Averaging over the batch keeps the penalty magnitude independent of
    batch size.
    """
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-d, got shape {mask.shape}")
    return ad.scale(ad.l1_norm(mask), 1.0 / mask.shape[0])


def l_task(
    r_ss_logits: Tensor,
    r_st_logits: Tensor,
    labels,
    mask_S: Tensor,
    w: float,
) -> Tensor:
    """Cross-entropy on both source-labeled recombinations plus w * mask L1."""
    ce_ss = ad.softmax_cross_entropy(r_ss_logits, labels)
    ce_st = ad.softmax_cross_entropy(r_st_logits, labels)
    return ad.add(ad.add(ce_ss, ce_st), ad.scale(mask_l1(mask_S), w))


def _bank_constant(bank: MemoryBank) -> Tensor:
    return Tensor(bank.anchors.T, requires_grad=False)


def bank_affinity(emb: Tensor, bank: MemoryBank) -> Tensor:
    """B x N softmax over cosine similarity to every anchor, at temperature tau.

    Embeddings and anchors are unit rows, so the matmul is exactly the
    cosine similarity matrix. Gradients flow into emb only.
    """
    if emb.ndim != 2:
        raise ValueError(f"embeddings must be 2-d, got shape {emb.shape}")
    sims = ad.matmul(emb, _bank_constant(bank))
    return ad.row_softmax(ad.scale(sims, 1.0 / bank.tau))


def cosine_affinity(emb_i: Tensor, bank: MemoryBank) -> Tensor:
    """Affinity vector d_i over the N anchors for a single embedding row."""
    if emb_i.ndim == 1:
        emb_i = ad.reshape(emb_i, (1, emb_i.shape[0]))
    elif emb_i.ndim != 2 or emb_i.shape[0] != 1:
        raise ValueError(f"expected a single embedding row, got shape {emb_i.shape}")
    return ad.reshape(bank_affinity(emb_i, bank), (bank.n,))


def pseudo_class_prob(embedding: Tensor, bank: MemoryBank, indices) -> Tensor:
    """Each row's bank-softmax probability at its own pseudo-class index."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1 or idx.shape[0] != embedding.shape[0]:
        raise ValueError("need exactly one pseudo-class index per embedding row")
    if idx.size and (idx.min() < 0 or idx.max() >= bank.n):
        raise ValueError(f"pseudo-class index out of range [0, {bank.n})")
    probs = bank_affinity(embedding, bank)
    return ad.select_sum_rows(probs, [[int(i)] for i in idx])


def l_agree(
    emb_ts: Tensor,
    emb_tt: Tensor,
    pseudo_labels,
    bank: MemoryBank,
    mask_T: Tensor,
    w: float,
) -> Tensor:
    """Summed L1 gap between the two recombinations' pseudo-class probabilities."""
    p = pseudo_class_prob(emb_ts, bank, pseudo_labels)
    q = pseudo_class_prob(emb_tt, bank, pseudo_labels)
    gap = ad.l1_norm(ad.sub(p, q))
    return ad.add(gap, ad.scale(mask_l1(mask_T), w))


def l_neighbor(emb_tt: Tensor, bank: MemoryBank, neighbor_sets) -> Tensor:
    """Negative summed log affinity mass over each row's neighbor set."""
    if len(neighbor_sets) != emb_tt.shape[0]:
        raise ValueError(
            f"need one neighbor set per row, got {len(neighbor_sets)} for {emb_tt.shape[0]}"
        )
    aff = bank_affinity(emb_tt, bank)
    mass = ad.select_sum_rows(aff, neighbor_sets)
    return ad.scale(ad.sum_all(ad.log(mass)), -1.0)


def total_loss(task: Tensor, neighbor: Tensor, agree: Tensor, lambda1: float, lambda2: float) -> Tensor:
    """Weighted combination driving a single backward pass."""
    return ad.add(task, ad.add(ad.scale(neighbor, lambda1), ad.scale(agree, lambda2)))

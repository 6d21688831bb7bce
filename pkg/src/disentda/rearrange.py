"""Shuffle, swap and recombine the mask-split features across a domain pair.

Task-irrelevant parts are shuffled within a domain (breaking their tie to
the ground truth) or swapped across domains, then added back onto the
task-relevant parts. Labels always follow the task-relevant half, so the
four recombinations of a batch are:

    r_ss = h_tr_source + shuffled h_ti_source   (source labels)
    r_st = h_tr_source + h_ti_target            (source labels)
    r_ts = h_tr_target + h_ti_source            (target pseudo labels)
    r_tt = h_tr_target + shuffled h_ti_target   (target pseudo labels)

Cross-domain swaps pair rows positionally and use the unshuffled
task-irrelevant features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import DisentangledPair


def _validate_permutation(perm: np.ndarray, n: int) -> np.ndarray:
    perm = np.asarray(perm, dtype=np.intp)
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise ValueError(f"not a permutation of [0, {n}): {perm.tolist()}")
    return perm


def shuffle_within_domain(h_ti: Tensor, perm) -> Tensor:
    """Row i of the output is row perm[i] of the input; perm must be a bijection."""
    perm = _validate_permutation(perm, h_ti.shape[0])
    return ad.gather_rows(h_ti, perm)


def swap_between_domains(h_ti_s: Tensor, h_ti_t: Tensor) -> tuple[Tensor, Tensor]:
    """Exchange the task-irrelevant features of the two domains, positionally."""
    if h_ti_s.shape[0] != h_ti_t.shape[0]:
        raise ValueError(f"batch-size mismatch {h_ti_s.shape[0]} vs {h_ti_t.shape[0]}")
    return h_ti_t, h_ti_s


def combine(h_tr: Tensor, h_ti: Tensor) -> Tensor:
    """Elementwise addition of a task-relevant and a task-irrelevant part."""
    return ad.add(h_tr, h_ti)


def draw_permutation(rng: np.random.Generator, n: int, require_derangement: bool = False) -> np.ndarray:
    """Uniform permutation of [0, n); optionally resampled until fixed-point free."""
    perm = rng.permutation(n)
    if require_derangement and n > 1:
        while (perm == np.arange(n)).any():
            perm = rng.permutation(n)
    return perm


@dataclass
class RearrangedBatch:
    r_ss: Tensor
    r_st: Tensor
    r_ts: Tensor
    r_tt: Tensor
    labels_source: np.ndarray
    pseudo_labels_target: np.ndarray
    perm_source: np.ndarray
    perm_target: np.ndarray


def build_rearranged_batch(
    pair_s: DisentangledPair,
    labels_s,
    pair_t: DisentangledPair,
    pseudo_labels_t,
    rng: np.random.Generator,
    require_derangement: bool = False,
) -> RearrangedBatch:
    """All four recombinations of a paired batch.

    Draws the source permutation first, then the target permutation, from
    `rng`. Only the within-domain combinations use shuffled features; the
    swapped ones stay aligned so each row still carries sample i's
    task-relevant half and therefore sample i's (pseudo) label.
    """
    b = pair_s.h_tr.shape[0]
    if pair_t.h_tr.shape[0] != b:
        raise ValueError(f"batch-size mismatch {b} vs {pair_t.h_tr.shape[0]}")
    labels_s = np.asarray(labels_s)
    pseudo_labels_t = np.asarray(pseudo_labels_t)
    if labels_s.shape != (b,) or pseudo_labels_t.shape != (b,):
        raise ValueError("need one label per source row and one pseudo label per target row")

    perm_s = draw_permutation(rng, b, require_derangement)
    perm_t = draw_permutation(rng, b, require_derangement)
    ti_swapped_for_s, ti_swapped_for_t = swap_between_domains(pair_s.h_ti, pair_t.h_ti)

    return RearrangedBatch(
        r_ss=combine(pair_s.h_tr, shuffle_within_domain(pair_s.h_ti, perm_s)),
        r_st=combine(pair_s.h_tr, ti_swapped_for_s),
        r_ts=combine(pair_t.h_tr, ti_swapped_for_t),
        r_tt=combine(pair_t.h_tr, shuffle_within_domain(pair_t.h_ti, perm_t)),
        labels_source=labels_s.copy(),
        pseudo_labels_target=pseudo_labels_t.copy(),
        perm_source=perm_s,
        perm_target=perm_t,
    )

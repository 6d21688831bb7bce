"""Retrieval (CMC, mAP), classification and open-set evaluation.

Retrieval ranks the gallery by cosine similarity, descending, with ties
broken toward the lower gallery index; queries are never excluded from the
gallery (synthetic data has no camera ids, so no same-camera filtering —
numbers are not directly comparable to benchmark tables). Open-set
prediction thresholds the max softmax probability: below the threshold the
sample is called "unknown", which is class index C (one past the last
known class); OS is the macro average over known classes plus unknown, OS*
over known classes only, in both cases skipping classes absent from the
ground truth.

This module is the only place allowed to read a dataset's sealed
ground-truth labels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .data import Dataset
from .model import Network

DEFAULT_KS = (1, 5, 10, 20)


def _as_array(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


@dataclass
class RetrievalResult:
    rank_k: dict[int, float]
    mAP: float


@dataclass
class OpenSetResult:
    os: float
    os_star: float
    threshold: float


def _ranked_gallery(query_emb, query_ids, gallery_emb, gallery_ids):
    q = _as_array(query_emb)
    g = _as_array(gallery_emb)
    qid = np.asarray(query_ids)
    gid = np.asarray(gallery_ids)
    if q.ndim != 2 or g.ndim != 2 or q.shape[1] != g.shape[1]:
        raise ValueError(f"embedding shape mismatch: {q.shape} vs {g.shape}")
    if qid.shape != (q.shape[0],) or gid.shape != (g.shape[0],):
        raise ValueError("need one id per embedding row")
    missing = set(qid.tolist()) - set(gid.tolist())
    if missing:
        raise ValueError(f"query ids absent from gallery: {sorted(missing)}")
    sims = q @ g.T
    order = np.argsort(-sims, axis=1, kind="stable")
    return order, qid, gid


def cmc_rank_k(query_emb, query_ids, gallery_emb, gallery_ids, ks=DEFAULT_KS) -> dict[int, float]:
    """Fraction of queries with a matching id in the top-k ranked gallery."""
    order, qid, gid = _ranked_gallery(query_emb, query_ids, gallery_emb, gallery_ids)
    ranked_ids = gid[order]
    hits = ranked_ids == qid[:, None]
    out = {}
    for k in ks:
        if not 1 <= k:
            raise ValueError(f"rank cutoff must be >= 1, got {k}")
        kk = min(int(k), ranked_ids.shape[1])
        out[int(k)] = float(hits[:, :kk].any(axis=1).mean())
    return out


def mean_average_precision(query_emb, query_ids, gallery_emb, gallery_ids) -> float:
    """Mean over queries of average precision over the full ranking."""
    order, qid, gid = _ranked_gallery(query_emb, query_ids, gallery_emb, gallery_ids)
    ranked_ids = gid[order]
    aps = []
    for i in range(order.shape[0]):
        rel = ranked_ids[i] == qid[i]
        n_rel = int(rel.sum())
        positions = np.flatnonzero(rel)
        precision_at_hits = np.cumsum(rel)[positions] / (positions + 1.0)
        aps.append(precision_at_hits.sum() / n_rel)
    return float(np.mean(aps))


def retrieval_metrics(query_emb, query_ids, gallery_emb, gallery_ids, ks=DEFAULT_KS) -> RetrievalResult:
    return RetrievalResult(
        rank_k=cmc_rank_k(query_emb, query_ids, gallery_emb, gallery_ids, ks),
        mAP=mean_average_precision(query_emb, query_ids, gallery_emb, gallery_ids),
    )


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def openset_accuracy(logits, true_labels_with_unknown, threshold: float) -> OpenSetResult:
    """Macro OS / OS* accuracy with an unknown class at index C.

    A sample is predicted unknown when its maximum softmax probability
    falls below the threshold. Ground-truth labels >= C all count as the
    unknown class. Classes with no ground-truth samples are skipped by the
    macro average.
    """
    z = _as_array(logits)
    if z.ndim != 2:
        raise ValueError(f"logits must be (B, C), got shape {z.shape}")
    if not 0.0 <= threshold < 1.0:
        raise ValueError(f"threshold must lie in [0, 1), got {threshold}")
    truths = np.asarray(true_labels_with_unknown, dtype=np.intp)
    if truths.shape != (z.shape[0],):
        raise ValueError("need one ground-truth label per row")
    if truths.size and truths.min() < 0:
        raise ValueError("negative ground-truth label")
    c = z.shape[1]
    probs = _softmax_rows(z)
    pred = probs.argmax(axis=1)
    pred[probs.max(axis=1) < threshold] = c
    truths = np.minimum(truths, c)  # any label beyond the known classes is "unknown"

    def macro(classes) -> float:
        accs = [
            float((pred[truths == cls] == cls).mean())
            for cls in classes
            if (truths == cls).any()
        ]
        if not accs:
            raise ValueError("no ground-truth samples in the requested classes")
        return float(np.mean(accs))

    return OpenSetResult(
        os=macro(range(c + 1)),
        os_star=macro(range(c)),
        threshold=float(threshold),
    )


def classification_accuracy(logits, labels) -> float:
    """Fraction of argmax hits; ties resolve to the lower class index."""
    z = _as_array(logits)
    y = np.asarray(labels, dtype=np.intp)
    if z.ndim != 2 or y.shape != (z.shape[0],):
        raise ValueError("logits must be (B, C) with one label per row")
    if y.size and (y.min() < 0 or y.max() >= z.shape[1]):
        raise ValueError(f"label out of range [0, {z.shape[1]})")
    return float((z.argmax(axis=1) == y).mean())


def embed_dataset(
    network: Network,
    dataset: Dataset,
    chunk: int = 256,
    fixed_mask: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Unit-norm embeddings and logits for every image, in index order."""
    embs, logits = [], []
    images = dataset.images
    for start in range(0, len(dataset), chunk):
        e, z = network.infer(Tensor(images[start : start + chunk]), fixed_mask)
        embs.append(e.data)
        logits.append(z.data)
    return np.concatenate(embs, axis=0), np.concatenate(logits, axis=0)


def eval_labels(dataset: Dataset) -> np.ndarray:
    """The sealed accessor: ground truth for metric computation only."""
    return dataset.sealed_labels()

"""Independent reference implementations used to cross-check the package.

Everything here favors clarity over speed: explicit Python loops, direct
summation, no code shared with the package under test. Loss oracles take
plain numpy arrays; the gradient checker drives any scalar-valued function
of numpy arrays by central differences.
"""

from __future__ import annotations

import math

import numpy as np


# ---------------------------------------------------------------------------
# gradients


def central_diff_grads(f, arrays, eps: float = 1e-6) -> list[np.ndarray]:
    """Numeric gradient of scalar f(*arrays) w.r.t. every array entry."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a, dtype=np.float64)
        it = np.nditer(a, flags=["multi_index"])
        while not it.finished:
            ix = it.multi_index
            orig = a[ix]
            a[ix] = orig + eps
            hi = float(f(*arrays))
            a[ix] = orig - eps
            lo = float(f(*arrays))
            a[ix] = orig
            g[ix] = (hi - lo) / (2.0 * eps)
            it.iternext()
        grads.append(g)
    return grads


def max_rel_error(analytic, numeric) -> float:
    """max |a - n| / max(1, |a|, |n|) over all entries of all arrays."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


# ---------------------------------------------------------------------------
# dense ops


def matmul_loops(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def conv3x3_loops(x: np.ndarray, w: np.ndarray, b: np.ndarray | None) -> np.ndarray:
    """Direct 3x3 same-padding convolution over (B, C, H, W)."""
    bs, cin, h, wd = x.shape
    cout = w.shape[0]
    pad = np.zeros((bs, cin, h + 2, wd + 2))
    pad[:, :, 1:-1, 1:-1] = x
    out = np.zeros((bs, cout, h, wd))
    for n in range(bs):
        for o in range(cout):
            for i in range(h):
                for j in range(wd):
                    s = 0.0
                    for c in range(cin):
                        for di in range(3):
                            for dj in range(3):
                                s += pad[n, c, i + di, j + dj] * w[o, c, di, dj]
                    out[n, o, i, j] = s + (b[o] if b is not None else 0.0)
    return out


def avgpool2_loops(x: np.ndarray) -> np.ndarray:
    bs, c, h, w = x.shape
    out = np.zeros((bs, c, h // 2, w // 2))
    for n in range(bs):
        for ch in range(c):
            for i in range(h // 2):
                for j in range(w // 2):
                    block = x[n, ch, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2]
                    out[n, ch, i, j] = block.sum() / 4.0
    return out


def softmax_rows_loops(z: np.ndarray) -> np.ndarray:
    out = np.zeros_like(z, dtype=np.float64)
    for i in range(z.shape[0]):
        m = max(z[i])
        e = [math.exp(v - m) for v in z[i]]
        s = sum(e)
        out[i] = [v / s for v in e]
    return out


def cross_entropy_mean_loops(logits: np.ndarray, labels) -> float:
    p = softmax_rows_loops(logits)
    total = 0.0
    for i, y in enumerate(labels):
        total += -math.log(p[i, int(y)])
    return total / len(labels)


# ---------------------------------------------------------------------------
# losses


def bank_affinity_loops(emb: np.ndarray, anchors: np.ndarray, tau: float) -> np.ndarray:
    """Row-wise softmax over cosine similarities to every anchor."""
    b, n = emb.shape[0], anchors.shape[0]
    out = np.zeros((b, n))
    for i in range(b):
        sims = [float(np.dot(emb[i], anchors[j])) / tau for j in range(n)]
        m = max(sims)
        e = [math.exp(s - m) for s in sims]
        tot = sum(e)
        out[i] = [v / tot for v in e]
    return out


def l_task_loops(r_ss_logits, r_st_logits, labels, mask_s, w) -> float:
    m = np.asarray(mask_s)
    return (
        cross_entropy_mean_loops(np.asarray(r_ss_logits), labels)
        + cross_entropy_mean_loops(np.asarray(r_st_logits), labels)
        + w * float(np.abs(m).sum() / m.shape[0])
    )


def l_agree_loops(emb_ts, emb_tt, pseudo_labels, anchors, tau, mask_t, w) -> float:
    p = bank_affinity_loops(np.asarray(emb_ts), anchors, tau)
    q = bank_affinity_loops(np.asarray(emb_tt), anchors, tau)
    total = 0.0
    for i, idx in enumerate(pseudo_labels):
        total += abs(p[i, int(idx)] - q[i, int(idx)])
    m = np.asarray(mask_t)
    return total + w * float(np.abs(m).sum() / m.shape[0])


def l_neighbor_loops(emb_tt, anchors, tau, neighbor_sets) -> float:
    aff = bank_affinity_loops(np.asarray(emb_tt), anchors, tau)
    total = 0.0
    for i, k_set in enumerate(neighbor_sets):
        mass = sum(aff[i, int(j)] for j in k_set)
        total += -math.log(mass)
    return total


# ---------------------------------------------------------------------------
# memory bank


def topk_by_cosine_loops(anchors: np.ndarray, i: int, k: int, labels=None) -> list[int]:
    """Top-k rows most similar to row i, self excluded, ties to lower index.

    With `labels`, candidates are restricted to rows sharing row i's label,
    falling back to the unrestricted ranking when no other row shares it.
    """
    n = anchors.shape[0]
    candidates = [j for j in range(n) if j != i]
    if labels is not None:
        same = [j for j in candidates if labels[j] == labels[i]]
        if same:
            candidates = same
    sims = [(-float(np.dot(anchors[i], anchors[j])), j) for j in candidates]
    sims.sort()
    return [j for _, j in sims[:k]]


# ---------------------------------------------------------------------------
# retrieval and open-set metrics


def rank_gallery_loops(q: np.ndarray, g: np.ndarray) -> list[list[int]]:
    """Descending similarity order per query, ties toward lower index."""
    orders = []
    for i in range(q.shape[0]):
        sims = [(-float(np.dot(q[i], g[j])), j) for j in range(g.shape[0])]
        sims.sort()
        orders.append([j for _, j in sims])
    return orders


def cmc_loops(q, qid, g, gid, k: int) -> float:
    orders = rank_gallery_loops(np.asarray(q), np.asarray(g))
    hits = 0
    for i, order in enumerate(orders):
        top = [gid[j] for j in order[: min(k, len(order))]]
        hits += int(qid[i] in top)
    return hits / len(orders)


def average_precision_loops(ranked_relevance) -> float:
    """AP over one ranked list of 0/1 relevance flags."""
    n_rel = sum(ranked_relevance)
    hits = 0
    total = 0.0
    for pos, rel in enumerate(ranked_relevance, start=1):
        if rel:
            hits += 1
            total += hits / pos
    return total / n_rel


def map_loops(q, qid, g, gid) -> float:
    orders = rank_gallery_loops(np.asarray(q), np.asarray(g))
    aps = []
    for i, order in enumerate(orders):
        aps.append(average_precision_loops([int(gid[j] == qid[i]) for j in order]))
    return sum(aps) / len(aps)


def openset_loops(logits: np.ndarray, truths, threshold: float) -> tuple[float, float]:
    """(OS, OS*) macro accuracies with unknown = class C, skipping absent classes."""
    probs = softmax_rows_loops(np.asarray(logits, dtype=np.float64))
    c = probs.shape[1]
    preds = []
    for row in probs:
        best = int(np.argmax(row))
        preds.append(best if row[best] >= threshold else c)
    capped = [min(int(t), c) for t in truths]
    per_class = {}
    for p, t in zip(preds, capped):
        per_class.setdefault(t, []).append(int(p == t))
    os_classes = [cls for cls in range(c + 1) if cls in per_class]
    star_classes = [cls for cls in range(c) if cls in per_class]
    os_val = sum(sum(per_class[cls]) / len(per_class[cls]) for cls in os_classes) / len(os_classes)
    star = sum(sum(per_class[cls]) / len(per_class[cls]) for cls in star_classes) / len(star_classes)
    return os_val, star


# ---------------------------------------------------------------------------
# clipped-noise statistics


def _phi(x: float) -> float:
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def _cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def clipped_normal_moments(mu: float, sigma: float, lo: float = 0.0, hi: float = 1.0) -> tuple[float, float]:
    """Mean and variance of clip(X, lo, hi) for X ~ N(mu, sigma^2).

    Mass outside [lo, hi] piles up on the bounds (censoring, not
    truncation), which is what np.clip does to additive noise.
    """
    a = (lo - mu) / sigma
    b = (hi - mu) / sigma
    p_lo, p_hi = _cdf(a), 1.0 - _cdf(b)
    mid = _cdf(b) - _cdf(a)
    # E[X | a < Z < b] pieces via the standard truncated-normal identities
    mean_mid = mu * mid - sigma * (_phi(b) - _phi(a))
    mean = lo * p_lo + hi * p_hi + mean_mid
    # E[X^2] for the middle piece
    second_mid = (mu * mu + sigma * sigma) * mid - sigma * (
        (hi + mu) * _phi(b) - (lo + mu) * _phi(a)
    )
    second = lo * lo * p_lo + hi * hi * p_hi + second_mid
    return mean, second - mean * mean

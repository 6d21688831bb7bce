"""Target-domain anchor memory: an N x D matrix of unit-norm embeddings.

Each target sample owns one row, addressed by its dataset index (which is
also its pseudo label). Rows are refreshed by an exponential moving average
toward freshly computed embeddings and re-normalized after every update so
cosine similarity keeps a fixed temperature scale.
"""

from __future__ import annotations

import numpy as np

from .util import RNG_BANK, seeded_rng


class MemoryBank:
    """N x D anchor matrix with update rate eta and softmax temperature tau."""

    def __init__(self, n: int, d_emb: int, eta: float, tau: float, seed: int):
        if n < 1 or d_emb < 1:
            raise ValueError(f"bank needs n, d_emb >= 1, got {n}, {d_emb}")
        if not 0.0 <= eta <= 1.0:
            raise ValueError(f"update rate must be in [0, 1], got {eta}")
        if tau <= 0.0:
            raise ValueError(f"temperature must be positive, got {tau}")
        self.n = int(n)
        self.d_emb = int(d_emb)
        self.eta = float(eta)
        self.tau = float(tau)
        rows = seeded_rng(seed, RNG_BANK).standard_normal((self.n, self.d_emb))
        self.anchors = rows / np.linalg.norm(rows, axis=1, keepdims=True)

    def update_row(self, i: int, feature: np.ndarray) -> None:
        """Move row i toward `feature` by the update rate, then re-normalize.

        `feature` is expected to be L2-normalized already; no other row is
        touched.
        """
        if not 0 <= i < self.n:
            raise IndexError(f"row index {i} out of range [0, {self.n})")
        feature = np.asarray(feature, dtype=np.float64)
        if feature.shape != (self.d_emb,):
            raise ValueError(f"feature must have shape ({self.d_emb},), got {feature.shape}")
        row = (1.0 - self.eta) * self.anchors[i] + self.eta * feature
        self.anchors[i] = row / np.linalg.norm(row)

    def pseudo_label(self, dataset_index: int) -> int:
        """Each target image is its own class: the label is the index itself."""
        if not 0 <= dataset_index < self.n:
            raise IndexError(f"index {dataset_index} out of range [0, {self.n})")
        return int(dataset_index)

    def _top_by_cosine(self, i: int, candidates: np.ndarray, k: int) -> list[int]:
        """Highest-cosine candidates for row i, ties toward the lower index.

        `candidates` must be in ascending index order so the stable sort on
        descending similarity resolves ties toward the lower index.
        """
        sims = self.anchors[candidates] @ self.anchors[i]
        order = np.argsort(-sims, kind="stable")
        return [int(j) for j in candidates[order[:k]]]

    def topk_neighbors_openset(self, i: int, k: int) -> list[int]:
        """The k rows most cosine-similar to row i, self excluded.

        Ties break toward the lower index.
        """
        if not 0 <= i < self.n:
            raise IndexError(f"row index {i} out of range [0, {self.n})")
        if not 1 <= k <= self.n - 1:
            raise ValueError(f"k must be in [1, {self.n - 1}], got {k}")
        candidates = np.concatenate([np.arange(i), np.arange(i + 1, self.n)])
        return self._top_by_cosine(i, candidates, k)

    def topk_neighbors_closeset(self, i: int, k: int, predicted_labels) -> list[int]:
        """Top-k restricted to rows sharing row i's predicted label.

        When fewer than k same-label rows exist all of them are returned;
        when row i's label is a singleton the search falls back to the
        unrestricted top-k so the result is never empty.
        """
        labels = np.asarray(predicted_labels)
        if labels.shape != (self.n,):
            raise ValueError(f"need a predicted label per row, got shape {labels.shape}")
        if not 1 <= k <= self.n - 1:
            raise ValueError(f"k must be in [1, {self.n - 1}], got {k}")
        same = np.flatnonzero(labels == labels[i])
        same = same[same != i]
        if same.size == 0:
            return self.topk_neighbors_openset(i, k)
        return self._top_by_cosine(i, same, k)


def init_bank(n: int, d_emb: int, eta: float, tau: float, seed: int) -> MemoryBank:
    """Bank with rows drawn standard-normal then L2-normalized."""
    return MemoryBank(n, d_emb, eta=eta, tau=tau, seed=seed)


def pseudo_label(dataset_index: int, n: int) -> int:
    """Index-as-label assignment over a target set of size n."""
    if not 0 <= dataset_index < n:
        raise IndexError(f"index {dataset_index} out of range [0, {n})")
    return int(dataset_index)

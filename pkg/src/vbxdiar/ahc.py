"""Average-linkage agglomerative clustering on cosine similarities.

Used to produce the initial speaker assignment for VBx.  The threshold is
meant to be set high enough to under-cluster: VBx can only drop speakers,
never add them.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from ._validation import check_matrix, check_nonzero_rows, relabel_by_first_occurrence
from .exceptions import EmptyInputError, InputError

DEFAULT_THRESHOLD = 0.6


@dataclass(frozen=True)
class AHCConfig:
    threshold: float = DEFAULT_THRESHOLD
    linkage: str = "average"

    def __post_init__(self):
        if not -1.0 <= self.threshold <= 1.0:
            # cluster() itself accepts any threshold; > 1 means never merge
            raise InputError(f"threshold must lie in [-1, 1], got {self.threshold}")
        if self.linkage != "average":
            raise InputError(f"unsupported linkage {self.linkage!r}")


def cosine_similarity_matrix(vectors):
    X = check_matrix(vectors, "vectors")
    norms = check_nonzero_rows(X, "vectors")
    U = X / norms[:, None]
    sim = U @ U.T
    sim = 0.5 * (sim + sim.T)
    np.fill_diagonal(sim, 1.0)
    return np.clip(sim, -1.0, 1.0)


def cluster(sim, threshold=DEFAULT_THRESHOLD, n_clusters=None):
    """Merge clusters greedily by average pairwise similarity.

    Merging stops when the best available average similarity falls below
    ``threshold`` or, if ``n_clusters`` is given, once that many clusters
    remain (whichever comes first).  A cluster is identified by its lowest
    member index; among equally similar pairs the lexicographically lowest
    ``(i, j)`` is merged.  Returns 0-based labels numbered by first
    occurrence.
    """
    sim = np.array(sim, dtype=np.float64)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise InputError(f"similarity matrix must be square, got {sim.shape}")
    n = sim.shape[0]
    if n == 0:
        raise EmptyInputError("cannot cluster zero items")
    if not np.allclose(sim, sim.T, atol=1e-10):
        raise InputError("similarity matrix must be symmetric")
    if n_clusters is not None and n_clusters < 1:
        raise InputError("n_clusters must be positive")

    target = 1 if n_clusters is None else n_clusters
    owner = np.arange(n)
    sizes = np.ones(n)
    avg = sim.copy()
    np.fill_diagonal(avg, -np.inf)
    # only the upper triangle is searched, so argmax scans pairs i < j in
    # row-major order and the first maximum is the lowest (i, j)
    avg[np.tril_indices(n)] = -np.inf
    alive = np.ones(n, dtype=bool)
    n_alive = n

    while n_alive > target:
        flat = int(np.argmax(avg))
        i, j = divmod(flat, n)
        best = avg[i, j]
        if best < threshold or not np.isfinite(best):
            break
        # Lance-Williams update for average linkage, kept on the full
        # symmetric view and then re-masked to the upper triangle
        row_i = np.where(np.arange(n) < i, avg[:, i], avg[i, :])
        row_j = np.where(np.arange(n) < j, avg[:, j], avg[j, :])
        merged = (sizes[i] * row_i + sizes[j] * row_j) / (sizes[i] + sizes[j])
        sizes[i] += sizes[j]
        alive[j] = False
        n_alive -= 1
        owner[owner == j] = i
        avg[j, :] = -np.inf
        avg[:, j] = -np.inf
        merged[~alive] = -np.inf
        merged[i] = -np.inf
        lower = np.arange(n) < i
        avg[lower, i] = merged[lower]
        avg[i, ~lower] = merged[~lower]
        avg[i, i] = -np.inf

    return relabel_by_first_occurrence(owner)


class CosineAHC(ClusterMixin, BaseEstimator):
    """Agglomerative clustering of embeddings by average cosine similarity.

    Parameters
    ----------
    threshold : float, default=0.6
        Stop merging once the best average similarity is below this value.
    n_clusters : int or None, default=None
        Optionally stop earlier, as soon as this many clusters remain.

    Attributes
    ----------
    labels_ : ndarray of shape (n_samples,)
    n_clusters_ : int
    """

    def __init__(self, threshold=DEFAULT_THRESHOLD, n_clusters=None):
        self.threshold = threshold
        self.n_clusters = n_clusters

    def fit(self, X, y=None):
        AHCConfig(self.threshold)
        X = check_matrix(X, "X")
        self.labels_ = cluster(cosine_similarity_matrix(X), self.threshold, self.n_clusters)
        self.n_clusters_ = int(self.labels_.max()) + 1
        self.n_features_in_ = X.shape[1]
        return self

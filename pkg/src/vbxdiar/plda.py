"""Two-covariance PLDA model and the diagonalizing transform used by VBx.

Raw embeddings ``x_hat`` are modelled as ``x_hat = m_s + e`` with speaker means
``m_s ~ N(mean, between_cov)`` and residuals ``e ~ N(0, within_cov)``.  The
transform ``E`` solving ``between_cov E = within_cov E diag(phi)`` maps the
data into a space where the within-speaker covariance is the identity and the
between-speaker covariance is ``diag(phi)``.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_matrix, check_nonzero_rows, check_vector
from .exceptions import EstimationError, InputError, ModelError

EIG_FLOOR = 1e-10
RIDGE_SCALE = 1e-6


@dataclass(frozen=True)
class PLDAModel:
    mean: np.ndarray
    within_cov: np.ndarray
    between_cov: np.ndarray

    def __post_init__(self):
        mean = check_vector(self.mean, "mean")
        d = mean.shape[0]
        for name in ("within_cov", "between_cov"):
            cov = np.asarray(getattr(self, name), dtype=np.float64)
            if cov.shape != (d, d):
                raise ModelError(f"{name} has shape {cov.shape}, expected {(d, d)}")
            if not np.all(np.isfinite(cov)):
                raise ModelError(f"{name} contains non-finite values")
            object.__setattr__(self, name, cov)
        object.__setattr__(self, "mean", mean)

    @property
    def dim(self):
        return self.mean.shape[0]

    def validate(self, tol=1e-8):
        """Check symmetry, SPD ``within_cov`` and PSD ``between_cov``."""
        for name in ("within_cov", "between_cov"):
            cov = getattr(self, name)
            scale = max(1.0, np.abs(cov).max())
            if np.abs(cov - cov.T).max() > tol * scale:
                raise ModelError(f"{name} is not symmetric")
        try:
            linalg.cholesky(self.within_cov, lower=True)
        except linalg.LinAlgError as exc:
            raise ModelError("within_cov is not positive definite") from exc
        eig_min = linalg.eigvalsh(self.between_cov).min()
        if eig_min < -tol * max(1.0, np.abs(self.between_cov).max()):
            raise ModelError(f"between_cov is not PSD (min eigenvalue {eig_min:.3g})")
        return self


@dataclass(frozen=True)
class DiarSpace:
    """Projection into the VBx working space.

    ``projection`` is ``E`` (D x R); ``phi`` holds the between-speaker
    variances in the projected space, sorted in descending order.
    """

    mean: np.ndarray
    projection: np.ndarray
    phi: np.ndarray
    n_clamped: int = 0

    def __post_init__(self):
        mean = check_vector(self.mean, "mean")
        proj = np.asarray(self.projection, dtype=np.float64)
        if proj.ndim != 2 or proj.shape[0] != mean.shape[0]:
            raise ModelError(f"projection shape {proj.shape} does not match mean")
        phi = check_vector(self.phi, "phi", size=proj.shape[1])
        if np.any(phi <= 0):
            raise ModelError("phi must be strictly positive")
        if np.any(np.diff(phi) > 0):
            raise ModelError("phi must be sorted in descending order")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "projection", proj)
        object.__setattr__(self, "phi", phi)

    @property
    def source_dim(self):
        return self.projection.shape[0]

    @property
    def dim(self):
        return self.projection.shape[1]

    @classmethod
    def identity(cls, phi):
        """Space for data that is already projected (used with synthetic data)."""
        phi = np.asarray(phi, dtype=np.float64)
        r = phi.shape[0]
        return cls(np.zeros(r), np.eye(r), phi)


def _ridge(cov):
    d = cov.shape[0]
    trace = np.trace(cov)
    eps = RIDGE_SCALE * trace / d if trace > 0 else RIDGE_SCALE
    return cov + eps * np.eye(d)


def _is_singular(cov):
    eig = linalg.eigvalsh(cov)
    return eig.min() <= 1e-12 * max(eig.max(), 0.0) or eig.max() <= 0


def estimate_plda(vectors, speaker_ids):
    """Moment estimate of a two-covariance model from labelled embeddings.

    The within-speaker covariance is the maximum-likelihood scatter around
    speaker means (divided by the number of vectors), the between-speaker
    covariance is the scatter of speaker means around the grand mean (divided
    by the number of speakers).  A ridge of ``1e-6 * trace / D`` keeps a
    singular within-speaker covariance invertible.
    """
    X = check_matrix(vectors, "vectors")
    ids = np.asarray(speaker_ids)
    if ids.shape != (X.shape[0],):
        raise InputError(f"got {ids.shape[0] if ids.ndim else 0} speaker ids for {X.shape[0]} vectors")
    speakers, inverse = np.unique(ids, return_inverse=True)
    if speakers.size < 2:
        raise EstimationError(f"need at least 2 speakers, got {speakers.size}")

    mean = X.mean(axis=0)
    counts = np.bincount(inverse)
    spk_means = np.zeros((speakers.size, X.shape[1]))
    np.add.at(spk_means, inverse, X)
    spk_means /= counts[:, None]

    resid = X - spk_means[inverse]
    within = resid.T @ resid / X.shape[0]
    centered = spk_means - mean
    between = centered.T @ centered / speakers.size
    within = 0.5 * (within + within.T)
    between = 0.5 * (between + between.T)
    if _is_singular(within):
        within = _ridge(within)
    return PLDAModel(mean, within, between)


def derive_space(model, r):
    """Solve the generalized eigenproblem and keep the ``r`` leading directions.

    Uses the Cholesky factor ``L`` of ``within_cov`` to reduce the problem to
    a symmetric one, ``L^-1 between_cov L^-T = U diag(phi) U^T``, and returns
    ``E = L^-T U``.  Eigenvalues below ``1e-10`` are clamped; the number of
    clamped values is stored on the result.
    """
    if not isinstance(r, (int, np.integer)) or not 1 <= r <= model.dim:
        raise InputError(f"r must be an integer in [1, {model.dim}], got {r!r}")
    try:
        chol = linalg.cholesky(model.within_cov, lower=True)
    except linalg.LinAlgError as exc:
        raise ModelError("within_cov is not positive definite") from exc

    tmp = linalg.solve_triangular(chol, model.between_cov, lower=True)
    reduced = linalg.solve_triangular(chol, tmp.T, lower=True)
    reduced = 0.5 * (reduced + reduced.T)
    eigval, eigvec = linalg.eigh(reduced)
    order = np.argsort(eigval, kind="stable")[::-1][:r]
    eigval, eigvec = eigval[order], eigvec[:, order]

    # deterministic sign: largest-magnitude entry of each eigenvector positive
    pivot = np.argmax(np.abs(eigvec), axis=0)
    signs = np.sign(eigvec[pivot, np.arange(r)])
    signs[signs == 0] = 1.0
    eigvec = eigvec * signs

    projection = linalg.solve_triangular(chol.T, eigvec, lower=False)
    n_clamped = int(np.sum(eigval < EIG_FLOOR))
    phi = np.maximum(eigval, EIG_FLOOR)
    return DiarSpace(model.mean.copy(), projection, phi, n_clamped)


def project(space, raw):
    """Center and project raw embeddings: ``(raw - mean) @ E``."""
    X = check_matrix(raw, "raw", n_cols=space.source_dim)
    return (X - space.mean) @ space.projection


def length_normalize(vectors):
    """Scale every row to Euclidean norm ``sqrt(K)``, K being the row dimension."""
    X = check_matrix(vectors, "vectors")
    norms = check_nonzero_rows(X, "vectors")
    return X * (np.sqrt(X.shape[1]) / norms)[:, None]


class PLDATransformer(TransformerMixin, BaseEstimator):
    """Estimate PLDA from labelled embeddings and project into the VBx space.

    Parameters
    ----------
    n_components : int, default=128
        Dimension ``R`` of the output space (capped at the input dimension).
    length_norm : bool, default=True
        Length-normalize projected vectors to norm ``sqrt(R)``.

    Attributes
    ----------
    plda_ : PLDAModel
    space_ : DiarSpace
    phi_ : ndarray of shape (n_components,)
    """

    def __init__(self, n_components=128, length_norm=True):
        self.n_components = n_components
        self.length_norm = length_norm

    def fit(self, X, y):
        X = check_matrix(X, "X")
        self.plda_ = estimate_plda(X, y)
        r = min(self.n_components, X.shape[1])
        self.space_ = derive_space(self.plda_, r)
        self.phi_ = self.space_.phi
        self.n_features_in_ = X.shape[1]
        return self

    @classmethod
    def from_space(cls, space, length_norm=True):
        """Wrap an already-derived space without refitting."""
        est = cls(n_components=space.dim, length_norm=length_norm)
        est.space_ = space
        est.phi_ = space.phi
        est.n_features_in_ = space.source_dim
        return est

    def transform(self, X):
        check_is_fitted(self, "space_")
        Z = project(self.space_, X)
        return length_normalize(Z) if self.length_norm else Z

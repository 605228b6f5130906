"""Variational Bayes inference in the VBx Bayesian HMM.

Every HMM state is a speaker ``s`` with latent vector ``y_s ~ N(0, I)`` and
emission ``x_t ~ N(sqrt(phi) * y_s, I)``.  The mean-field posterior keeps a
diagonal Gaussian ``q(y_s) = N(alpha_s, diag(lambda_s))`` per speaker and
per-step responsibilities ``gamma[t, s] = q(z_t = s)``.  Transitions are
``p(s | s') = (1 - loop_p) * pi[s] + [s == s'] * loop_p``, with ``pi`` also
serving as the initial-state distribution.

All HMM recursions are carried out in the log domain.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.exceptions import ConvergenceWarning

from ._validation import check_labels, check_matrix, check_vector, relabel_by_first_occurrence
from .exceptions import EmptyInputError, InputError, NumericalError

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class VBxConfig:
    fa: float = 0.3
    fb: float = 17.0
    loop_p: float = 0.99
    max_iters: int = 40
    elbo_tol: float = 1e-6
    prune_pi: float = 1e-4

    def __post_init__(self):
        if not (self.fa > 0 and self.fb > 0):
            raise InputError(f"fa and fb must be positive, got fa={self.fa}, fb={self.fb}")
        if not 0 < self.loop_p < 1:
            raise InputError(f"loop_p must lie in (0, 1), got {self.loop_p}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise InputError(f"max_iters must be a positive integer, got {self.max_iters}")
        if not self.elbo_tol > 0:
            raise InputError(f"elbo_tol must be positive, got {self.elbo_tol}")
        if not self.prune_pi >= 0:
            raise InputError(f"prune_pi must be non-negative, got {self.prune_pi}")


@dataclass
class VBxState:
    """Posterior statistics for one recording.

    Arrays are indexed by the original speaker slots; deactivated speakers
    keep a zero ``gamma`` column, zero ``pi`` and the prior ``alpha = 0``,
    ``lam = 1``.
    """

    gamma: np.ndarray
    alpha: np.ndarray
    lam: np.ndarray
    pi: np.ndarray
    elbo_trace: list = field(default_factory=list)
    active: np.ndarray = None
    n_iter: int = 0
    converged: bool = False

    def __post_init__(self):
        if self.active is None:
            self.active = np.ones(self.pi.shape[0], dtype=bool)

    @property
    def n_active(self):
        return int(self.active.sum())

    @property
    def labels(self):
        """Hard assignment per step; ties go to the lowest speaker index."""
        return np.argmax(self.gamma, axis=1)


def transition_prob(pi, loop_p, src, dst):
    """Probability of moving from speaker ``src`` to speaker ``dst``."""
    return (1.0 - loop_p) * pi[dst] + (loop_p if src == dst else 0.0)


def transition_matrix(pi, loop_p):
    pi = np.asarray(pi, dtype=np.float64)
    return (1.0 - loop_p) * np.tile(pi, (pi.shape[0], 1)) + loop_p * np.eye(pi.shape[0])


def init_state(labels, n_speakers, dim):
    """One-hot responsibilities from hard labels, uniform ``pi``, prior ``q(y)``."""
    labels = check_labels(labels, n_classes=n_speakers)
    gamma = np.zeros((labels.shape[0], n_speakers))
    gamma[np.arange(labels.shape[0]), labels] = 1.0
    return VBxState(
        gamma=gamma,
        alpha=np.zeros((n_speakers, dim)),
        lam=np.ones((n_speakers, dim)),
        pi=np.full(n_speakers, 1.0 / n_speakers),
    )


def update_qy(x, gamma, phi, fa, fb):
    """Closed-form ``q(y_s)`` given responsibilities.

    Returns ``alpha`` (S x R) and ``lam`` (S x R), the diagonal of the
    posterior covariance ``L_s^-1`` with ``L_s = 1 + (fa/fb) n_s phi``.
    """
    ratio = fa / fb
    occupancy = gamma.sum(axis=0)
    lam = 1.0 / (1.0 + ratio * occupancy[:, None] * phi[None, :])
    rho = x * np.sqrt(phi)
    alpha = ratio * lam * (gamma.T @ rho)
    return alpha, lam


def emission_loglik(x, alpha, lam, phi, fa, constants=True):
    """Expected log-likelihood of ``x_t`` under ``q(y_s)``, scaled by ``fa``.

    Works on single vectors (returns a scalar) or on ``x`` (T x R) against
    ``alpha``/``lam`` (S x R), returning a T x S matrix.  With
    ``constants=False`` the speaker-independent terms
    ``-(R/2) ln 2pi - |x_t|^2 / 2`` are left out; they cancel in the
    responsibilities but are needed for the ELBO.
    """
    x = np.asarray(x, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    rho = x * np.sqrt(phi)
    value = rho @ alpha.T - 0.5 * ((lam + alpha**2) @ phi)
    if constants:
        r = x.shape[-1]
        const = -0.5 * r * LOG_2PI - 0.5 * np.sum(x**2, axis=-1)
        value = value + (const[..., None] if value.ndim == 2 else const)
    return fa * value


def _log(a):
    with np.errstate(divide="ignore"):
        return np.log(a)


def forward_backward(loglik, pi, loop_p):
    """Forward-backward over the speaker HMM.

    Returns ``(gamma, log_px, log_A, log_B)`` where ``log_A[t]`` and
    ``log_B[t]`` are the log forward/backward probabilities of step ``t``
    and ``log_px`` is the log of the total forward probability.
    """
    loglik = np.asarray(loglik, dtype=np.float64)
    if loglik.ndim != 2:
        raise InputError(f"loglik must be 2-D, got shape {loglik.shape}")
    n_steps, n_spk = loglik.shape
    if n_steps == 0:
        raise EmptyInputError("forward_backward needs at least one step")
    log_pi = _log(np.asarray(pi, dtype=np.float64))
    log_switch = np.log1p(-loop_p)
    log_loop = np.log(loop_p)

    log_A = np.empty_like(loglik)
    log_B = np.empty_like(loglik)
    log_A[0] = log_pi + loglik[0]
    for t in range(1, n_steps):
        prev = log_A[t - 1]
        log_A[t] = loglik[t] + np.logaddexp(
            log_switch + log_pi + logsumexp(prev), log_loop + prev
        )
    log_B[-1] = 0.0
    for t in range(n_steps - 2, -1, -1):
        nxt = log_B[t + 1] + loglik[t + 1]
        log_B[t] = np.logaddexp(log_switch + logsumexp(log_pi + nxt), log_loop + nxt)

    log_px = float(logsumexp(log_A[-1]))
    gamma = np.exp(log_A + log_B - log_px)
    gamma /= gamma.sum(axis=1, keepdims=True)
    return gamma, log_px, log_A, log_B


def update_pi(loglik, log_A, log_B, log_px, pi, loop_p):
    """Type-II ML update of the speaker priors.

    ``pi[s]`` becomes proportional to the expected number of times speaker
    ``s`` is entered through the speaker-change node: once at the start,
    plus every switch (including a switch back to the same speaker).
    """
    log_pi = _log(np.asarray(pi, dtype=np.float64))
    first = np.exp(log_A[0] + log_B[0] - log_px)
    if loglik.shape[0] > 1:
        log_prev = logsumexp(log_A[:-1], axis=1)
        log_switch = np.log1p(-loop_p) + log_pi + logsumexp(
            log_prev[:, None] + loglik[1:] + log_B[1:], axis=0
        ) - log_px
        counts = first + np.exp(log_switch)
    else:
        counts = first
    return counts / counts.sum()


def elbo(log_px, alpha, lam, fb):
    """Evidence lower bound evaluated right after the ``q(Z)`` update.

    ``log_px`` must include the constant emission terms.  The correction is
    ``-fb * KL(q(Y) || p(Y))`` for diagonal Gaussians.
    """
    alpha = np.atleast_2d(alpha)
    lam = np.atleast_2d(lam)
    r = alpha.shape[1]
    kl_terms = r + np.log(lam).sum(axis=1) - lam.sum(axis=1) - (alpha**2).sum(axis=1)
    return float(log_px + 0.5 * fb * kl_terms.sum())


def _prune(gamma, pi, threshold):
    keep = pi >= threshold
    if not keep.any():
        keep = pi == pi.max()
    if keep.all():
        return gamma, pi, keep
    gamma = gamma[:, keep]
    row = gamma.sum(axis=1, keepdims=True)
    # a step whose whole mass sat on pruned speakers falls back to uniform
    empty = row[:, 0] <= 0
    gamma[empty] = 1.0
    row[empty] = gamma.shape[1]
    return gamma / row, pi[keep] / pi[keep].sum(), keep


def run(x, init_labels, phi, cfg=None, n_speakers=None):
    """Iterate ``q(Y)``, ``q(Z)`` and ``pi`` updates until the ELBO settles.

    Convergence is declared when the relative ELBO change drops to
    ``cfg.elbo_tol``; running out of iterations leaves ``converged=False``
    rather than raising.  Speakers whose prior falls below ``cfg.prune_pi``
    are removed between iterations.
    """
    cfg = cfg or VBxConfig()
    x = check_matrix(x, "x")
    n_steps, dim = x.shape
    phi = check_vector(phi, "phi", size=dim)
    labels = check_labels(init_labels, n_samples=n_steps)
    if n_speakers is None:
        n_speakers = int(labels.max()) + 1
    state = init_state(labels, n_speakers, dim)

    slots = np.arange(n_speakers)
    gamma, pi = state.gamma, state.pi
    trace = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            alpha, lam = update_qy(x, gamma, phi, cfg.fa, cfg.fb)
            loglik = emission_loglik(x, alpha, lam, phi, cfg.fa)
        if not np.all(np.isfinite(loglik)):
            raise NumericalError(f"non-finite emission log-likelihood at iteration {it}")
        gamma, log_px, log_A, log_B = forward_backward(loglik, pi, cfg.loop_p)
        pi = update_pi(loglik, log_A, log_B, log_px, pi, cfg.loop_p)
        value = elbo(log_px, alpha, lam, cfg.fb)
        if not (np.isfinite(value) and np.all(np.isfinite(gamma))):
            raise NumericalError(f"non-finite ELBO or responsibilities at iteration {it}")
        trace.append(value)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= cfg.elbo_tol * abs(value):
            converged = True
        gamma, pi, keep = _prune(gamma, pi, cfg.prune_pi)
        slots = slots[keep]
        if converged:
            break

    alpha, lam = update_qy(x, gamma, phi, cfg.fa, cfg.fb)
    state.gamma = np.zeros((n_steps, n_speakers))
    state.gamma[:, slots] = gamma
    state.pi = np.zeros(n_speakers)
    state.pi[slots] = pi
    state.alpha = np.zeros((n_speakers, dim))
    state.alpha[slots] = alpha
    state.lam = np.ones((n_speakers, dim))
    state.lam[slots] = lam
    state.active = np.zeros(n_speakers, dtype=bool)
    state.active[slots] = True
    state.elbo_trace = trace
    state.n_iter = it
    state.converged = converged
    return state


class VBx(ClusterMixin, BaseEstimator):
    """Bayesian-HMM clustering of an embedding sequence.

    ``X`` rows must live in the projected space described by ``phi`` (the
    between-speaker variances).  When no initial labels are passed to
    :meth:`fit`, cosine AHC with ``ahc_threshold`` provides them.

    Attributes
    ----------
    labels_ : ndarray of shape (n_samples,)
        Hard speaker assignment, renumbered by first occurrence.
    responsibilities_ : ndarray of shape (n_samples, n_speakers_)
    state_ : VBxState
    n_speakers_ : int
        Number of speakers still active after inference.
    """

    def __init__(self, phi=None, fa=0.3, fb=17.0, loop_p=0.99, max_iters=40,
                 elbo_tol=1e-6, prune_pi=1e-4, ahc_threshold=0.6):
        self.phi = phi
        self.fa = fa
        self.fb = fb
        self.loop_p = loop_p
        self.max_iters = max_iters
        self.elbo_tol = elbo_tol
        self.prune_pi = prune_pi
        self.ahc_threshold = ahc_threshold

    def _config(self):
        return VBxConfig(self.fa, self.fb, self.loop_p, self.max_iters,
                         self.elbo_tol, self.prune_pi)

    def fit(self, X, y=None, init_labels=None):
        from .ahc import CosineAHC

        cfg = self._config()
        X = check_matrix(X, "X")
        if self.phi is None:
            raise InputError("phi (between-speaker variances) must be provided")
        if init_labels is None:
            init_labels = CosineAHC(threshold=self.ahc_threshold).fit(X).labels_
        self.state_ = run(X, init_labels, self.phi, cfg)
        if not self.state_.converged:
            warnings.warn(
                f"VBx did not converge in {cfg.max_iters} iterations", ConvergenceWarning
            )
        self.labels_ = relabel_by_first_occurrence(self.state_.labels)
        self.responsibilities_ = self.state_.gamma[:, self.state_.active]
        self.n_speakers_ = self.state_.n_active
        self.elbo_trace_ = list(self.state_.elbo_trace)
        self.n_iter_ = self.state_.n_iter
        self.n_features_in_ = X.shape[1]
        return self

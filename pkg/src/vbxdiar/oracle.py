"""Slow exact references for checking the inference engine.

Nothing here is used by the diarization path.  The functions deliberately
avoid the engine's recursions: path posteriors come from enumerating every
speaker sequence, the single-speaker evidence from the closed-form Gaussian
marginal, and ELBO gradients from central differences of the ELBO written
out term by term.
"""

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .exceptions import InstanceTooLargeError

MAX_PATHS = 10**6
LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class SmallProblem:
    x: np.ndarray
    phi: np.ndarray
    pi: np.ndarray
    loop_p: float
    fa: float = 1.0
    fb: float = 1.0

    @property
    def n_paths(self):
        return self.pi.shape[0] ** self.x.shape[0]


def random_problem(rng, max_steps=6, max_speakers=3, max_dim=3):
    n_steps = int(rng.integers(1, max_steps + 1))
    n_spk = int(rng.integers(1, max_speakers + 1))
    dim = int(rng.integers(1, max_dim + 1))
    return SmallProblem(
        x=rng.normal(scale=2.0, size=(n_steps, dim)),
        phi=rng.uniform(0.2, 5.0, size=dim),
        pi=rng.dirichlet(np.ones(n_spk)),
        loop_p=float(rng.uniform(0.05, 0.95)),
        fa=float(rng.uniform(0.2, 2.0)),
        fb=float(rng.uniform(0.5, 5.0)),
    )


def _paths(n_steps, n_spk):
    n = n_spk**n_steps
    if n > MAX_PATHS:
        raise InstanceTooLargeError(f"{n_spk}^{n_steps} = {n} paths exceeds {MAX_PATHS}")
    return np.array(list(itertools.product(range(n_spk), repeat=n_steps)), dtype=np.int64)


def _path_log_weights(loglik, pi, loop_p, paths):
    n_steps = loglik.shape[0]
    with np.errstate(divide="ignore"):
        log_pi = np.log(pi)
        lw = log_pi[paths[:, 0]] + loglik[0, paths[:, 0]]
        for t in range(1, n_steps):
            prev, cur = paths[:, t - 1], paths[:, t]
            trans = (1.0 - loop_p) * pi[cur] + loop_p * (prev == cur)
            lw = lw + np.log(trans) + loglik[t, cur]
    return lw


def enumerate_paths(loglik, pi, loop_p):
    """Exact posterior statistics by summing over all ``S**T`` sequences.

    Returns ``(gamma, log_total, entries)``: per-step marginals, the log of
    the summed path weight, and the posterior expected number of entries
    into each speaker through the speaker-change node (the initial step
    counts as one entry).
    """
    loglik = np.asarray(loglik, dtype=np.float64)
    pi = np.asarray(pi, dtype=np.float64)
    n_steps, n_spk = loglik.shape
    paths = _paths(n_steps, n_spk)
    lw = _path_log_weights(loglik, pi, loop_p, paths)
    log_total = logsumexp(lw)
    post = np.exp(lw - log_total)

    gamma = np.zeros((n_steps, n_spk))
    entries = np.zeros(n_spk)
    np.add.at(entries, paths[:, 0], post)
    for t in range(n_steps):
        np.add.at(gamma[t], paths[:, t], post)
        if t:
            prev, cur = paths[:, t - 1], paths[:, t]
            via_switch = (1.0 - loop_p) * pi[cur]
            share = via_switch / (via_switch + loop_p * (prev == cur))
            np.add.at(entries, cur, post * share)
    return gamma, float(log_total), entries


def enumerate_path_posterior(loglik, pi, loop_p):
    return enumerate_paths(loglik, pi, loop_p)[0]


def enumerate_pi_update(loglik, pi, loop_p):
    """Normalized expected entry counts, i.e. the exact prior update."""
    entries = enumerate_paths(loglik, pi, loop_p)[2]
    return entries / entries.sum()


def single_speaker_logml(x, phi):
    """Exact log marginal likelihood of ``x`` when one speaker produced it all.

    Each dimension ``r`` is jointly Gaussian over time with covariance
    ``I + phi_r * 1 1^T``; determinant and inverse use the rank-one
    identities.
    """
    x = np.asarray(x, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    n = x.shape[0]
    total = 0.0
    for r in range(x.shape[1]):
        col = x[:, r]
        denom = 1.0 + n * phi[r]
        quad = col @ col - phi[r] * col.sum() ** 2 / denom
        total += -0.5 * (n * LOG_2PI + np.log(denom) + quad)
    return float(total)


def explicit_elbo(x, gamma, alpha, lam, phi, fa, fb):
    """ELBO terms that depend on ``q(Y)``, written out directly.

    ``fa * sum_ts gamma_ts E[ln N(x_t; sqrt(phi) y_s, I)] - fb * sum_s KL``.
    The ``q(Z)`` terms are omitted because they do not involve ``alpha``.
    """
    x = np.asarray(x, dtype=np.float64)
    sd = np.sqrt(phi)
    dim = x.shape[1]
    loglik = np.empty((x.shape[0], alpha.shape[0]))
    for s in range(alpha.shape[0]):
        resid = x - sd * alpha[s]
        loglik[:, s] = -0.5 * dim * LOG_2PI - 0.5 * (np.sum(resid**2, axis=1) + phi @ lam[s])
    kl = 0.5 * np.sum(lam + alpha**2 - 1.0 - np.log(lam), axis=1)
    return float(fa * np.sum(gamma * loglik) - fb * kl.sum())


def elbo_fd_gradient(x, gamma, alpha, lam, phi, fa, fb, delta=1e-5):
    """Central-difference gradient of :func:`explicit_elbo` w.r.t. ``alpha``."""
    grad = np.zeros_like(alpha)
    for idx in np.ndindex(*alpha.shape):
        up = alpha.copy()
        down = alpha.copy()
        up[idx] += delta
        down[idx] -= delta
        grad[idx] = (explicit_elbo(x, gamma, up, lam, phi, fa, fb)
                     - explicit_elbo(x, gamma, down, lam, phi, fa, fb)) / (2 * delta)
    return grad


def compare_engine(n_instances=200, seed=0):
    """Run engine-vs-oracle checks on random small problems.

    Returns a dict of worst-case deltas over all instances.
    """
    from . import vbx

    rng = np.random.default_rng(seed)
    worst = {"gamma": 0.0, "log_px_rel": 0.0, "pi": 0.0, "single_speaker_elbo": 0.0,
             "qy_gradient": 0.0}
    for _ in range(n_instances):
        p = random_problem(rng)
        n_spk = p.pi.shape[0]
        alpha = rng.normal(size=(n_spk, p.x.shape[1]))
        lam = rng.uniform(0.1, 1.0, size=(n_spk, p.x.shape[1]))
        ll = vbx.emission_loglik(p.x, alpha, lam, p.phi, p.fa)
        g_ref, lt_ref, _ = enumerate_paths(ll, p.pi, p.loop_p)
        g, lt, la, lb = vbx.forward_backward(ll, p.pi, p.loop_p)
        worst["gamma"] = max(worst["gamma"], float(np.abs(g - g_ref).max()))
        worst["log_px_rel"] = max(worst["log_px_rel"], abs(lt - lt_ref) / max(abs(lt_ref), 1e-300))
        pi_new = vbx.update_pi(ll, la, lb, lt, p.pi, p.loop_p)
        worst["pi"] = max(worst["pi"], float(np.abs(pi_new - enumerate_pi_update(ll, p.pi, p.loop_p)).max()))

        state = vbx.run(p.x, np.zeros(p.x.shape[0], dtype=int), p.phi,
                        vbx.VBxConfig(fa=1.0, fb=1.0, max_iters=5))
        worst["single_speaker_elbo"] = max(
            worst["single_speaker_elbo"],
            abs(state.elbo_trace[-1] - single_speaker_logml(p.x, p.phi)),
        )
        a, l = vbx.update_qy(p.x, g, p.phi, p.fa, p.fb)
        grad = elbo_fd_gradient(p.x, g, a, l, p.phi, p.fa, p.fb)
        worst["qy_gradient"] = max(worst["qy_gradient"], float(np.abs(grad).max()))
    return worst


def format_comparison(worst, n_instances):
    lines = [f"engine vs oracle over {n_instances} random instances (worst case)"]
    labels = {
        "gamma": "max |gamma - enumeration|",
        "log_px_rel": "rel |log p(X) - enumeration|",
        "pi": "max |pi update - enumeration|",
        "single_speaker_elbo": "|ELBO - exact log ML| (S=1)",
        "qy_gradient": "max |dELBO/dalpha| at q(Y) update",
    }
    for key, label in labels.items():
        lines.append(f"  {label:<38} {worst[key]:.3e}")
    return "\n".join(lines) + "\n"

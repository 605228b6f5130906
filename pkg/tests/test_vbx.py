import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone
from sklearn.exceptions import ConvergenceWarning

from vbxdiar import oracle, vbx
from vbxdiar.exceptions import EmptyInputError, InputError, NumericalError
from vbxdiar.synth import SynthConfig, sample_conversation


def random_run_problem(rng):
    n_steps = int(rng.integers(1, 120))
    dim = int(rng.integers(1, 8))
    n_init = int(rng.integers(1, 9))
    x = rng.normal(scale=rng.uniform(0.5, 4.0), size=(n_steps, dim))
    phi = rng.uniform(0.1, 50.0, size=dim)
    labels = rng.integers(0, n_init, size=n_steps)
    cfg = vbx.VBxConfig(fa=float(rng.uniform(0.05, 2.0)), fb=float(rng.uniform(0.5, 30.0)),
                        loop_p=float(rng.uniform(0.3, 0.999)), max_iters=30)
    return x, labels, phi, cfg


def assert_state_invariants(state, x, phi, cfg):
    g = state.gamma[:, state.active]
    assert np.all((state.gamma >= 0) & (state.gamma <= 1))
    np.testing.assert_allclose(g.sum(axis=1), 1.0, atol=1e-10)
    assert abs(state.pi.sum() - 1.0) <= 1e-12
    assert np.all(state.pi >= 0)
    assert np.all((state.lam > 0) & (state.lam <= 1))
    occ = g.sum(axis=0)
    expected = 1.0 / (1.0 + (cfg.fa / cfg.fb) * occ[:, None] * phi[None, :])
    np.testing.assert_allclose(state.lam[state.active], expected, rtol=1e-12)
    trace = np.asarray(state.elbo_trace)
    assert np.all(np.diff(trace) >= -1e-8 * np.abs(trace[1:]))


class TestConfig:
    @pytest.mark.parametrize("kw", [{"fa": 0}, {"fb": -1}, {"loop_p": 0}, {"loop_p": 1},
                                    {"max_iters": 0}, {"elbo_tol": 0}, {"prune_pi": -1}])
    def test_rejects(self, kw):
        with pytest.raises(InputError):
            vbx.VBxConfig(**kw)


class TestTransitions:
    def test_values(self):
        pi = np.array([0.5, 0.5])
        assert vbx.transition_prob(pi, 0.9, 0, 0) == pytest.approx(0.95)
        assert vbx.transition_prob(pi, 0.9, 0, 1) == pytest.approx(0.05)

    def test_half_loop(self):
        assert vbx.transition_prob(np.array([1.0, 0.0]), 0.5, 1, 0) == pytest.approx(0.5)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 10), st.floats(0.01, 0.99), st.integers(0, 10_000))
    def test_rows_sum_to_one(self, n, loop_p, seed):
        pi = np.random.default_rng(seed).dirichlet(np.ones(n))
        m = vbx.transition_matrix(pi, loop_p)
        np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-14)
        assert m[n - 1, 0] == vbx.transition_prob(pi, loop_p, n - 1, 0)


class TestInitState:
    def test_one_hot(self):
        s = vbx.init_state([0, 0, 1], 2, 3)
        np.testing.assert_array_equal(s.gamma, [[1, 0], [1, 0], [0, 1]])
        np.testing.assert_array_equal(s.pi, [0.5, 0.5])
        assert s.alpha.shape == (2, 3) and np.all(s.lam == 1)

    def test_single_speaker(self):
        np.testing.assert_array_equal(vbx.init_state([0, 0, 0], 1, 2).gamma, np.ones((3, 1)))

    def test_label_out_of_range(self):
        with pytest.raises(InputError):
            vbx.init_state([0, 2], 2, 1)


class TestUpdateQY:
    def test_empty_speaker_keeps_prior(self):
        x = np.array([[1.0, 2.0]])
        alpha, lam = vbx.update_qy(x, np.array([[1.0, 0.0]]), np.ones(2), 0.5, 2.0)
        np.testing.assert_array_equal(alpha[1], 0)
        np.testing.assert_array_equal(lam[1], 1)

    def test_scalar_case(self):
        alpha, lam = vbx.update_qy(np.array([[2.0]]), np.ones((1, 1)), np.ones(1), 1.0, 1.0)
        assert lam[0, 0] == pytest.approx(0.5)
        assert alpha[0, 0] == pytest.approx(1.0)

    @pytest.mark.parametrize("c", [0.1, 3.0, 17.0])
    def test_only_ratio_matters(self, c):
        rng = np.random.default_rng(4)
        x, g = rng.normal(size=(7, 3)), rng.dirichlet(np.ones(2), size=7)
        phi = rng.uniform(1, 5, size=3)
        a1, l1 = vbx.update_qy(x, g, phi, 0.3, 2.0)
        a2, l2 = vbx.update_qy(x, g, phi, 0.3 * c, 2.0 * c)
        np.testing.assert_allclose(a1, a2, rtol=1e-13)
        np.testing.assert_allclose(l1, l2, rtol=1e-13)

    def test_stationary_point(self):
        rng = np.random.default_rng(9)
        x, g = rng.normal(size=(10, 2)), rng.dirichlet(np.ones(3), size=10)
        phi = np.array([3.0, 0.5])
        a, l = vbx.update_qy(x, g, phi, 0.4, 3.0)
        grad = oracle.elbo_fd_gradient(x, g, a, l, phi, 0.4, 3.0)
        assert np.abs(grad).max() < 1e-5


class TestEmission:
    def test_hand_value(self):
        v = vbx.emission_loglik(np.array([2.0]), np.array([1.0]), np.array([0.5]), np.ones(1), 1.0)
        assert v == pytest.approx(2 - 0.75 - 0.5 * np.log(2 * np.pi) - 2, abs=1e-12)
        assert v == pytest.approx(-1.668938, abs=1e-6)

    def test_prior_center(self):
        x = np.array([0.3, -1.2, 2.0])
        phi = np.array([1.0, 2.0, 0.5])
        v = vbx.emission_loglik(x, np.zeros(3), np.ones(3), phi, 1.0)
        assert v == pytest.approx(-0.5 * phi.sum() - 1.5 * np.log(2 * np.pi) - 0.5 * x @ x)

    def test_matrix_matches_scalar(self):
        rng = np.random.default_rng(2)
        x, a = rng.normal(size=(4, 3)), rng.normal(size=(2, 3))
        lam, phi = rng.uniform(0.1, 1, (2, 3)), rng.uniform(1, 4, 3)
        m = vbx.emission_loglik(x, a, lam, phi, 0.7)
        assert m.shape == (4, 2)
        assert m[3, 1] == pytest.approx(vbx.emission_loglik(x[3], a[1], lam[1], phi, 0.7))

    def test_constants_cancel_in_gamma(self):
        rng = np.random.default_rng(3)
        x, a = rng.normal(size=(30, 3)), rng.normal(size=(3, 3))
        lam, phi = rng.uniform(0.1, 1, (3, 3)), rng.uniform(1, 4, 3)
        pi = np.array([0.2, 0.3, 0.5])
        g1 = vbx.forward_backward(vbx.emission_loglik(x, a, lam, phi, 0.5), pi, 0.9)[0]
        g2 = vbx.forward_backward(vbx.emission_loglik(x, a, lam, phi, 0.5, constants=False), pi, 0.9)[0]
        np.testing.assert_allclose(g1, g2, atol=1e-12, rtol=0)


class TestForwardBackward:
    def test_worked_two_step(self):
        ll = np.log([[0.9, 0.1], [0.9, 0.1]])
        g, log_px, _, _ = vbx.forward_backward(ll, np.array([0.5, 0.5]), 0.8)
        assert np.exp(log_px) == pytest.approx(0.378, abs=1e-12)
        np.testing.assert_allclose(g[:, 0], 0.369 / 0.378, atol=1e-12)

    def test_single_state(self):
        ll = np.array([[-1.0], [-2.5], [0.3]])
        g, log_px, _, _ = vbx.forward_backward(ll, np.ones(1), 0.9)
        np.testing.assert_array_equal(g, np.ones((3, 1)))
        assert log_px == pytest.approx(ll.sum(), abs=1e-12)

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            vbx.forward_backward(np.zeros((0, 2)), np.array([0.5, 0.5]), 0.9)

    def test_long_sequence_no_underflow(self):
        rng = np.random.default_rng(0)
        ll = rng.normal(-200.0, 30.0, size=(5000, 4))
        g, log_px, _, _ = vbx.forward_backward(ll, np.full(4, 0.25), 0.99)
        assert np.isfinite(log_px) and np.all(np.isfinite(g))
        np.testing.assert_allclose(g.sum(axis=1), 1.0, atol=1e-10)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31))
    def test_matches_enumeration(self, seed):
        p = oracle.random_problem(np.random.default_rng(seed), max_steps=6, max_speakers=3)
        rng = np.random.default_rng(seed + 1)
        ll = rng.normal(scale=3.0, size=(p.x.shape[0], p.pi.size))
        g, log_px, _, _ = vbx.forward_backward(ll, p.pi, p.loop_p)
        g_ref, lt_ref, _ = oracle.enumerate_paths(ll, p.pi, p.loop_p)
        np.testing.assert_allclose(g, g_ref, atol=1e-9, rtol=0)
        assert abs(log_px - lt_ref) <= 1e-12 * max(1.0, abs(lt_ref))


class TestUpdatePi:
    def test_single_speaker(self):
        ll = np.array([[-1.0], [-2.0]])
        g, lp, la, lb = vbx.forward_backward(ll, np.ones(1), 0.9)
        np.testing.assert_array_equal(vbx.update_pi(ll, la, lb, lp, np.ones(1), 0.9), [1.0])

    def test_symmetric_problem(self):
        # swapping the speakers leaves emissions and prior unchanged
        ll = np.repeat(np.log([[0.9], [0.2], [0.4], [0.7]]), 2, axis=1)
        pi = np.array([0.5, 0.5])
        g, lp, la, lb = vbx.forward_backward(ll, pi, 0.7)
        np.testing.assert_allclose(vbx.update_pi(ll, la, lb, lp, pi, 0.7), [0.5, 0.5], atol=1e-14)

    @pytest.mark.parametrize("seed", range(25))
    def test_matches_enumeration(self, seed):
        rng = np.random.default_rng(100 + seed)
        p = oracle.random_problem(rng)
        ll = rng.normal(scale=2.0, size=(p.x.shape[0], p.pi.size))
        _, lp, la, lb = vbx.forward_backward(ll, p.pi, p.loop_p)
        new = vbx.update_pi(ll, la, lb, lp, p.pi, p.loop_p)
        np.testing.assert_allclose(new, oracle.enumerate_pi_update(ll, p.pi, p.loop_p), atol=1e-9)
        assert abs(new.sum() - 1) <= 1e-12


class TestElbo:
    def test_prior_posterior_gives_log_px(self):
        assert vbx.elbo(-12.5, np.zeros((2, 3)), np.ones((2, 3)), 7.0) == -12.5

    @pytest.mark.parametrize("seed", range(10))
    def test_single_speaker_exact(self, seed):
        rng = np.random.default_rng(seed)
        n, d = int(rng.integers(1, 60)), int(rng.integers(1, 6))
        x, phi = rng.normal(scale=3, size=(n, d)), rng.uniform(0.1, 20, size=d)
        state = vbx.run(x, np.zeros(n, dtype=int), phi, vbx.VBxConfig(fa=1.0, fb=1.0))
        assert state.elbo_trace[-1] == pytest.approx(oracle.single_speaker_logml(x, phi), abs=1e-6)


class TestRun:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31))
    def test_state_invariants(self, seed):
        x, labels, phi, cfg = random_run_problem(np.random.default_rng(seed))
        state = vbx.run(x, labels, phi, cfg)
        assert_state_invariants(state, x, phi, cfg)

    def test_recovers_two_speakers_from_four(self):
        cfg = SynthConfig(speakers=2, duration_steps=300, phi=np.linspace(200, 100, 16),
                          loop_p=0.97, seed=5)
        x, z, _ = sample_conversation(cfg)
        init = np.arange(300) % 4
        state = vbx.run(x, init, np.asarray(cfg.phi), vbx.VBxConfig(fa=1.0, fb=1.0))
        assert state.n_active == 2
        assert len({(a, b) for a, b in zip(z, state.labels)}) == 2

    def test_one_initial_cluster_stays_one(self):
        cfg = SynthConfig(speakers=3, duration_steps=200, phi=np.full(8, 150.0), seed=1)
        x, _, _ = sample_conversation(cfg)
        state = vbx.run(x, np.zeros(200, dtype=int), np.asarray(cfg.phi))
        assert state.n_active == 1 and np.all(state.labels == 0)

    def test_single_step(self):
        state = vbx.run(np.array([[1.0, -1.0]]), [0], np.ones(2))
        assert state.n_active == 1 and state.labels.tolist() == [0]

    def test_renumbering_invariance(self):
        cfg = SynthConfig(speakers=3, duration_steps=150, phi=np.full(6, 30.0), loop_p=0.95, seed=2)
        x, _, _ = sample_conversation(cfg)
        init = np.random.default_rng(0).integers(0, 4, size=150)
        perm = np.array([2, 0, 3, 1])
        a = vbx.run(x, init, np.asarray(cfg.phi)).labels
        b = vbx.run(x, perm[init], np.asarray(cfg.phi)).labels
        assert len(set(zip(a, b))) == len(set(a)) == len(set(b))

    def test_pruned_slots_reset(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(80, 3)) + np.array([8.0, 0, 0])
        state = vbx.run(x, np.arange(80) % 5, np.full(3, 50.0), vbx.VBxConfig(fa=1, fb=1))
        off = ~state.active
        assert off.any()
        assert np.all(state.pi[off] == 0) and np.all(state.gamma[:, off] == 0)
        assert np.all(state.alpha[off] == 0) and np.all(state.lam[off] == 1)

    def test_non_convergence_is_flag(self):
        x, labels, phi, _ = random_run_problem(np.random.default_rng(3))
        state = vbx.run(x, labels, phi, vbx.VBxConfig(max_iters=1))
        assert state.n_iter == 1 and not state.converged

    def test_non_finite_reports_iteration(self):
        with pytest.raises(NumericalError, match="iteration 1"):
            vbx.run(np.array([[1e200], [-1e200]]), [0, 1], np.array([1e200]))


class TestEstimator:
    def test_fit_with_ahc_init(self):
        cfg = SynthConfig(speakers=2, duration_steps=200, phi=np.full(10, 150.0), seed=4, loop_p=0.95)
        x, z, _ = sample_conversation(cfg)
        est = vbx.VBx(phi=np.asarray(cfg.phi)).fit(x)
        assert est.labels_[0] == 0
        assert len(set(zip(z, est.labels_))) == est.n_speakers_ == len(set(z))
        assert est.responsibilities_.shape == (200, est.n_speakers_)

    def test_convergence_warning(self):
        x = np.random.default_rng(0).normal(size=(20, 2))
        with pytest.warns(ConvergenceWarning):
            vbx.VBx(phi=np.ones(2), max_iters=1).fit(x, init_labels=np.arange(20) % 2)

    def test_requires_phi(self):
        with pytest.raises(InputError):
            vbx.VBx().fit(np.ones((3, 2)))

    def test_clone(self):
        est = vbx.VBx(phi=np.ones(2), fa=0.5)
        params = clone(est).get_params()
        assert params["fa"] == 0.5 and params["loop_p"] == 0.99

    def test_threads_independent(self):
        from concurrent.futures import ThreadPoolExecutor

        problems = [random_run_problem(np.random.default_rng(s)) for s in range(6)]
        serial = [vbx.run(*p[:3], p[3]).gamma for p in problems]
        with warnings.catch_warnings(), ThreadPoolExecutor(3) as pool:
            parallel = list(pool.map(lambda p: vbx.run(*p[:3], p[3]).gamma, problems))
        for a, b in zip(serial, parallel):
            np.testing.assert_array_equal(a, b)

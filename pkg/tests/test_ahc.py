import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vbxdiar.ahc import AHCConfig, CosineAHC, cluster, cosine_similarity_matrix
from vbxdiar.exceptions import DegenerateInputError, EmptyInputError, InputError
from vbxdiar.synth import SynthConfig, sample_conversation


def partition(labels):
    groups = {}
    for i, l in enumerate(labels):
        groups.setdefault(l, set()).add(i)
    return sorted(map(frozenset, groups.values()), key=min)


def brute_force_average_linkage(sim, threshold):
    """Reference AHC recomputing every cluster average from the raw matrix."""
    clusters = [[i] for i in range(sim.shape[0])]
    while len(clusters) > 1:
        best, pair = -np.inf, None
        order = sorted(range(len(clusters)), key=lambda k: min(clusters[k]))
        for a_pos, a in enumerate(order):
            for b in order[a_pos + 1:]:
                v = sim[np.ix_(clusters[a], clusters[b])].mean()
                if v > best + 1e-12:
                    best, pair = v, (a, b)
        if best < threshold:
            break
        a, b = pair
        clusters[a] = clusters[a] + clusters[b]
        del clusters[b]
    labels = np.empty(sim.shape[0], dtype=int)
    for k, members in enumerate(clusters):
        labels[members] = k
    return labels


class TestCosine:
    def test_identical_rows(self):
        np.testing.assert_allclose(cosine_similarity_matrix(np.ones((3, 2))), np.ones((3, 3)))

    def test_orthogonal_rows(self):
        np.testing.assert_allclose(cosine_similarity_matrix(np.eye(3)), np.eye(3))

    def test_diagonal_vector(self):
        sim = cosine_similarity_matrix([[1.0, 0.0], [1.0, 1.0]])
        assert sim[0, 1] == pytest.approx(1 / np.sqrt(2))

    def test_zero_row(self):
        with pytest.raises(DegenerateInputError):
            cosine_similarity_matrix([[1.0, 0.0], [0.0, 0.0]])


class TestCluster:
    def test_singleton(self):
        np.testing.assert_array_equal(cluster(np.ones((1, 1))), [0])

    def test_two_pairs(self):
        x = np.array([[1.0, 0], [1, 0], [0, 1], [0, 1]])
        np.testing.assert_array_equal(cluster(cosine_similarity_matrix(x), 0.5), [0, 0, 1, 1])

    def test_boundary_thresholds(self):
        rng = np.random.default_rng(0)
        sim = cosine_similarity_matrix(rng.standard_normal((9, 4)))
        assert cluster(sim, -1.0).max() == 0
        np.testing.assert_array_equal(cluster(sim, 1.01), np.arange(9))

    def test_first_occurrence_labels(self):
        x = np.array([[0.0, 1], [1, 0], [0, 1], [1, 0.01]])
        np.testing.assert_array_equal(cluster(cosine_similarity_matrix(x), 0.5), [0, 1, 0, 1])

    def test_tie_breaks_to_lowest_pair(self):
        # every pair equally similar: (0,1) merges first, then (0..1, 2) ...
        sim = np.full((3, 3), 0.5)
        np.fill_diagonal(sim, 1.0)
        np.testing.assert_array_equal(cluster(sim, 0.5, n_clusters=2), [0, 0, 1])

    def test_n_clusters_stops_early(self):
        rng = np.random.default_rng(2)
        sim = cosine_similarity_matrix(rng.standard_normal((12, 3)))
        assert cluster(sim, -1.0, n_clusters=4).max() == 3

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            cluster(np.zeros((0, 0)))

    def test_asymmetric(self):
        with pytest.raises(InputError):
            cluster(np.array([[1.0, 0.2], [0.3, 1.0]]))

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        sim = cosine_similarity_matrix(rng.standard_normal((int(rng.integers(2, 14)), 3)))
        thr = float(rng.uniform(-0.5, 0.9))
        assert partition(cluster(sim, thr)) == partition(brute_force_average_linkage(sim, thr))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 15))
    def test_count_monotone_in_threshold(self, seed, n):
        rng = np.random.default_rng(seed)
        sim = cosine_similarity_matrix(rng.standard_normal((n, 3)))
        counts = [cluster(sim, t).max() + 1 for t in np.linspace(1.0, -1.0, 9)]
        assert all(a >= b for a, b in zip(counts, counts[1:]))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 15))
    def test_permutation_invariant(self, seed, n):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((n, 4))
        perm = rng.permutation(n)
        a = cluster(cosine_similarity_matrix(x), 0.3)
        b = cluster(cosine_similarity_matrix(x[perm]), 0.3)
        back = np.empty_like(b)
        back[perm] = b
        assert partition(a) == partition(back)

    def test_under_clusters_separated_data(self):
        over = 0
        for seed in range(20):
            cfg = SynthConfig(speakers=3, duration_steps=200, phi=np.linspace(200, 100, 16),
                              loop_p=0.95, seed=seed)
            x, z, _ = sample_conversation(cfg)
            n = cluster(cosine_similarity_matrix(x), AHCConfig().threshold).max() + 1
            over += n >= len(set(z))
        assert over >= 19


class TestEstimator:
    def test_fit_predict(self):
        x = np.array([[1.0, 0], [1, 0.1], [0, 1], [0.1, 1]])
        np.testing.assert_array_equal(CosineAHC(threshold=0.5).fit_predict(x), [0, 0, 1, 1])

    def test_bad_threshold(self):
        with pytest.raises(InputError):
            CosineAHC(threshold=2.0).fit(np.eye(2))

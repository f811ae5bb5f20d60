import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pnml.metric import euclidean_pairs, mahalanobis_pairs
from pnml.prototypes import (ClusteringConfig, LabelPrototypes, PrototypeSet,
                             adaptive_prototypes, distance_threshold,
                             export_prototypes, single_prototype, soft_assign)


class TestSinglePrototype:
    def test_mean_of_two(self):
        np.testing.assert_allclose(single_prototype([[0.0, 2.0], [2.0, 0.0]]), [1.0, 1.0])

    def test_identity_on_singleton(self):
        v = np.array([3.0, -1.0, 2.0])
        np.testing.assert_array_equal(single_prototype([v]), v)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(0)
        e = rng.normal(size=(7, 3))
        perm = rng.permutation(7)
        np.testing.assert_allclose(single_prototype(e), single_prototype(e[perm]), rtol=1e-14)

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            single_prototype(np.empty((0, 3)))


class TestDistanceThreshold:
    def test_alpha_one_rho_zero(self):
        assert distance_threshold(ClusteringConfig(alpha=1.0, rho=0.0), 7) == pytest.approx(0.0, abs=1e-15)

    def test_collapsed_denominator(self):
        lam = distance_threshold(ClusteringConfig(alpha=0.5, sigma=1.0, rho=0.0), 5)
        assert lam == pytest.approx(2 * np.log(2), abs=1e-12)

    def test_hand_evaluated(self):
        lam = distance_threshold(ClusteringConfig(alpha=0.1, sigma=1.0, rho=1.0), 2)
        assert lam == pytest.approx(5.991464547107982, abs=1e-12)

    def test_monotone_in_alpha_and_rho(self):
        for sigma in (0.5, 1.0, 2.0):
            for m in (2, 8, 32):
                lams = [distance_threshold(ClusteringConfig(alpha=a, sigma=sigma, rho=1.0), m)
                        for a in (0.001, 0.01, 0.1, 0.5, 1.0)]
                assert all(x > y for x, y in zip(lams, lams[1:]))
                lams_rho = [distance_threshold(ClusteringConfig(alpha=0.1, sigma=sigma, rho=r), m)
                            for r in (0.1, 0.5, 1.0, 2.0)]
                assert all(x < y for x, y in zip(lams_rho, lams_rho[1:]))

    def test_negative_for_large_alpha(self):
        # alpha above the denominator makes the raw threshold negative
        assert distance_threshold(ClusteringConfig(alpha=5.0, rho=0.0), 3) < 0


class TestAdaptivePrototypes:
    def test_identical_embeddings_single_cluster(self):
        e = np.full((6, 2), 1.5)
        mu = adaptive_prototypes(e, ClusteringConfig(), euclidean_pairs)
        assert mu.shape == (1, 2)
        np.testing.assert_array_equal(mu[0], e[0])

    def test_two_point_hand_trace(self):
        mu = adaptive_prototypes(np.array([[0.0], [10.0]]),
                                 ClusteringConfig(ite_clustering=1),
                                 euclidean_pairs, threshold=1.0)
        got = sorted(float(v) for v in mu[:, 0])
        assert len(got) == 2
        assert got[0] == pytest.approx(0.0, abs=1e-6)
        assert got[1] == pytest.approx(10.0, abs=1e-6)

    def test_singleton_input(self):
        v = np.array([[2.0, -1.0]])
        mu = adaptive_prototypes(v, ClusteringConfig(), euclidean_pairs)
        np.testing.assert_array_equal(mu, v)

    def test_infinite_threshold_is_single_prototype_bitwise(self):
        rng = np.random.default_rng(99)
        e = rng.normal(size=(23, 4))
        mu = adaptive_prototypes(e, ClusteringConfig(ite_clustering=3),
                                 euclidean_pairs, threshold=np.inf)
        assert mu.shape == (1, 4)
        assert np.array_equal(mu[0], single_prototype(e))

    def test_prototypes_are_convex_combinations(self):
        rng = np.random.default_rng(5)
        e = rng.normal(size=(30, 3)) * 2.0
        u = np.eye(3) + 0.1 * rng.normal(size=(3, 3))
        mu, w = adaptive_prototypes(e, ClusteringConfig(alpha=0.3), mahalanobis_pairs(u),
                                    return_weights=True)
        assert (w >= 0).all()
        np.testing.assert_allclose(w.sum(axis=0), 1.0, atol=1e-12)
        np.testing.assert_allclose(w.T @ e, mu, atol=1e-10)

    def test_accelerated_matches_plain_loop(self):
        rng = np.random.default_rng(17)
        for _ in range(10):
            n = int(rng.integers(2, 25))
            m = int(rng.integers(1, 5))
            e = rng.normal(scale=rng.uniform(0.5, 3.0), size=(n, m))
            cfg = ClusteringConfig(alpha=float(rng.choice([1e-3, 0.1, 1.0])),
                                   sigma=float(rng.uniform(0.5, 2.0)),
                                   ite_clustering=int(rng.integers(1, 4)))
            fast = adaptive_prototypes(e, cfg, euclidean_pairs)
            slow = adaptive_prototypes(e, cfg, euclidean_pairs, _accelerated=False)
            assert fast.shape == slow.shape
            np.testing.assert_allclose(fast, slow, rtol=1e-10, atol=1e-12)

    def test_nonpositive_threshold_clamped_with_warning(self, caplog):
        e = np.array([[0.0, 0.0], [0.1, 0.0]])
        cfg = ClusteringConfig(alpha=5.0, rho=1e-12, lambda_floor=1e-6,
                               ite_clustering=3)
        with caplog.at_level(logging.WARNING, logger="pnml.prototypes"):
            mu = adaptive_prototypes(e, cfg, euclidean_pairs)
        assert "clamping" in caplog.text
        # creation is bounded per scan even in the degenerate regime
        assert 2 <= len(mu) <= 1 + len(e) * cfg.ite_clustering
        assert np.isfinite(mu).all()

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            adaptive_prototypes(np.empty((0, 2)), ClusteringConfig(), euclidean_pairs)


class TestSoftAssign:
    def test_equidistant_pair(self):
        z = soft_assign(np.zeros(2), np.array([[1.0, 0.0], [-1.0, 0.0]]), euclidean_pairs)
        np.testing.assert_allclose(z, [0.5, 0.5])

    def test_single_prototype_prob_one(self):
        z = soft_assign(np.ones(2), np.array([[5.0, 5.0]]), euclidean_pairs)
        assert z.tolist() == [1.0]

    def test_log3_distances(self):
        dist = lambda p, c: np.array([[0.0, np.log(3.0)]])
        z = soft_assign(np.zeros(1), np.zeros((2, 1)), dist)
        np.testing.assert_allclose(z, [0.75, 0.25], atol=1e-12)

    @given(st.integers(0, 2 ** 31), st.floats(-50, 50))
    @settings(max_examples=40, deadline=None)
    def test_normalized_and_shift_invariant(self, seed, shift):
        rng = np.random.default_rng(seed)
        d = rng.uniform(0, 30, size=(1, 5))
        base = lambda p, c: d
        shifted = lambda p, c: d + shift
        z1 = soft_assign(np.zeros(1), np.zeros((5, 1)), base)
        z2 = soft_assign(np.zeros(1), np.zeros((5, 1)), shifted)
        assert z1.sum() == pytest.approx(1.0, abs=1e-9)
        np.testing.assert_allclose(z1, z2, atol=1e-9)

    def test_empty_prototypes(self):
        with pytest.raises(ValueError):
            soft_assign(np.zeros(2), np.empty((0, 2)), euclidean_pairs)


class TestExport:
    def test_rows_and_warning_column(self, tmp_path):
        protos = PrototypeSet([
            LabelPrototypes(np.array([[1.0, 2.0]]), np.array([[0.0, 0.0], [1.0, 1.0]])),
            LabelPrototypes(None, np.array([[3.0, 4.0]])),
        ])
        path = tmp_path / "protos.tsv"
        export_prototypes(path, protos, label_names=["a", "b"])
        lines = path.read_text().strip().split("\n")
        assert len(lines) == 4
        cols = [l.split("\t") for l in lines]
        assert cols[0][:3] == ["0", "a", "pos"] and cols[0][-1] == ""
        assert cols[3][:3] == ["1", "b", "neg"] and cols[3][-1] == "no-positive-prototypes"
        # coordinates round-trip
        assert float(cols[0][3]) == 1.0 and float(cols[0][4]) == 2.0

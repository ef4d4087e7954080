import tempfile
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.test import SimpleTestCase
from scipy import linalg

from core.exceptions import DegenerateInputError, DimensionMismatchError, EmptyInputError, RankError
from core.services.matrix_io import write_labels, write_matrix
from services.distributions.services import softmax
from services.taxonomy.services import classical_mds, distance_matrix, make_registry, save_embedding, build_graph
from services.whitening.services import fit_whitening_matrix, save_whitening
from .models import ClassMeanMatrix
from .services import (
    center_semantic,
    class_mean_matrix,
    fit_cca,
    l1_normalize_columns,
    load_cca,
    pca_features,
    random_semi_orthogonal,
    save_cca,
    view_covariance,
    visual_class_matrix,
)


def _oracle_correlations(X1, X2):
    """Square roots of the eigenvalues of C11^-1 C12 C22^-1 C21 (dense generalized solver)"""
    C11, C22 = view_covariance(X1), view_covariance(X2)
    X1c = X1 - X1.mean(axis=1)[:, None]
    X2c = X2 - X2.mean(axis=1)[:, None]
    C12 = X1c @ X2c.T / X1.shape[1]
    values = linalg.eigh(C12 @ np.linalg.solve(C22, C12.T), C11, eigvals_only=True)
    return np.sqrt(np.clip(np.sort(values)[::-1], 0.0, None))


def _shared_latent_views(seed, n=400, noise=0.5):
    rng = np.random.default_rng(seed)
    latents = rng.normal(size=(3, n))
    X1 = rng.normal(size=(5, 3)) @ latents + noise * rng.normal(size=(5, n))
    X2 = rng.normal(size=(5, 3)) @ latents + noise * rng.normal(size=(5, n))
    return X1, X2


class NormalizationTest(SimpleTestCase):
    """Test cases for f() and semantic centering"""

    def test_l1_columns(self):
        """Test l1 columns"""
        np.testing.assert_array_equal(l1_normalize_columns([[2.0, -1.0], [2.0, 3.0]]), [[0.5, -0.25], [0.5, 0.75]])

    def test_zero_column(self):
        """Test zero column"""
        with self.assertRaisesMessage(DegenerateInputError, 'Column 1'):
            l1_normalize_columns([[1.0, 0.0], [1.0, 0.0]])

    def test_idempotent_and_scale_invariant(self):
        """Test idempotent and scale invariant"""
        X = np.random.default_rng(0).normal(size=(4, 6))
        once = l1_normalize_columns(X)
        np.testing.assert_allclose(l1_normalize_columns(once), once, atol=1e-15)
        np.testing.assert_allclose(l1_normalize_columns(X * np.arange(1, 7)), once, atol=1e-15)

    def test_center_semantic(self):
        """Test center semantic"""
        W2c, W3c, mean = center_semantic([[1.0, 3.0], [0.0, 0.0]], [[2.0], [2.0]])
        np.testing.assert_array_equal(mean, [2.0, 0.0])
        np.testing.assert_array_equal(W2c, [[-1.0, 1.0], [0.0, 0.0]])
        np.testing.assert_array_equal(W3c, [[0.0], [2.0]])

    def test_center_is_idempotent(self):
        """Test center is idempotent"""
        W2c, _, _ = center_semantic(np.random.default_rng(1).normal(size=(3, 5)))
        again, _, _ = center_semantic(W2c)
        np.testing.assert_allclose(again, W2c, atol=1e-12)

    def test_single_seen_class(self):
        """Test single seen class"""
        W2c, W3c, _ = center_semantic([[4.0], [5.0]])
        np.testing.assert_array_equal(W2c, [[0.0], [0.0]])
        self.assertEqual(W3c.shape, (2, 0))

    def test_center_dimension_mismatch(self):
        """Test center dimension mismatch"""
        with self.assertRaises(DimensionMismatchError):
            center_semantic(np.zeros((3, 2)), np.zeros((2, 1)))


class VisualFeaturesTest(SimpleTestCase):
    """Test cases for visual class features"""

    def test_identity_class_means(self):
        """Test identity class means"""
        W1 = np.random.default_rng(2).normal(size=(3, 7))
        F, fbar = visual_class_matrix(W1)
        np.testing.assert_array_equal(F, l1_normalize_columns(W1))
        np.testing.assert_allclose(fbar, F.mean(axis=1))

    def test_scalar_example(self):
        """Test scalar example"""
        F, fbar = visual_class_matrix(np.array([[2.0, -2.0]]))
        np.testing.assert_array_equal(F, [[1.0, -1.0]])
        np.testing.assert_array_equal(fbar, [0.0])

    def test_zero_column(self):
        """Test zero column"""
        with self.assertRaises(DegenerateInputError):
            visual_class_matrix(np.array([[1.0, 0.0], [2.0, 0.0]]))

    def test_class_mean_matrix(self):
        """Test class mean matrix"""
        X = np.array([[0.8, 0.2], [0.6, 0.4], [0.1, 0.9]])
        M = class_mean_matrix(X, [0, 0, 1], 2).matrix
        np.testing.assert_allclose(M, [[0.7, 0.1], [0.3, 0.9]])
        np.testing.assert_allclose(M.sum(axis=0), [1.0, 1.0])
        F, _ = visual_class_matrix(np.eye(2), ClassMeanMatrix(M))
        np.testing.assert_allclose(F, M)

    def test_class_mean_needs_every_class(self):
        """Test class mean needs every class"""
        with self.assertRaises(EmptyInputError):
            class_mean_matrix(np.ones((2, 3)), [0, 0], 3)

    def test_random_semi_orthogonal(self):
        """Test random semi orthogonal"""
        W = random_semi_orthogonal(4, 9, seed=3)
        self.assertEqual(W.shape, (4, 9))
        self.assertLess(np.abs(W @ W.T - np.eye(4)).max(), 1e-10)
        np.testing.assert_array_equal(W, random_semi_orthogonal(4, 9, seed=3))
        with self.assertRaises(RankError):
            random_semi_orthogonal(10, 9, seed=3)

    def test_pca_features_have_unit_rows(self):
        """Test pca features have unit rows"""
        whitening = fit_whitening_matrix(np.random.default_rng(4).normal(size=(300, 6)), d=4)
        W1 = pca_features(whitening).matrix
        self.assertEqual(W1.shape, (4, 6))
        np.testing.assert_allclose(np.linalg.norm(W1, axis=1), np.ones(4), atol=1e-12)


class CcaTest(SimpleTestCase):
    """Test cases for the CCA fit"""

    def test_identical_views(self):
        """Test identical views"""
        X = np.random.default_rng(5).normal(size=(4, 50))
        model = fit_cca(X, X, ridge=0.0)
        np.testing.assert_allclose(model.correlations, np.ones(4), atol=1e-8)

    def test_independent_views(self):
        """Test independent views"""
        rng = np.random.default_rng(6)
        model = fit_cca(rng.normal(size=(5, 10_000)), rng.normal(size=(5, 10_000)), ridge=0.0)
        self.assertTrue(np.all(model.correlations < 0.1))

    def test_scaled_one_dimensional_views(self):
        """Test scaled one dimensional views"""
        x = np.random.default_rng(7).normal(size=(1, 100))
        model = fit_cca(x, 2.0 * x, ridge=0.0)
        self.assertAlmostEqual(model.correlations[0], 1.0, delta=1e-8)

    def test_matches_dense_oracle(self):
        """Test matches dense oracle"""
        X1, X2 = _shared_latent_views(8)
        model = fit_cca(X1, X2, ridge=0.0)
        np.testing.assert_allclose(model.correlations, _oracle_correlations(X1, X2), atol=1e-6)
        self.assertTrue(np.all(np.diff(model.correlations) <= 0))

    def test_constraints(self):
        """Test constraints"""
        X1, X2 = _shared_latent_views(9)
        model = fit_cca(X1, X2)
        C11 = view_covariance(X1, model.ridge[0])
        C22 = view_covariance(X2, model.ridge[1])
        self.assertLess(np.abs(model.P1.T @ C11 @ model.P1 - np.eye(5)).max(), 1e-6)
        self.assertLess(np.abs(model.P2.T @ C22 @ model.P2 - np.eye(5)).max(), 1e-6)
        X1c = X1 - X1.mean(axis=1)[:, None]
        X2c = X2 - X2.mean(axis=1)[:, None]
        cross = model.P1.T @ (X1c @ X2c.T / X1.shape[1]) @ model.P2
        self.assertLess(np.abs(cross - np.diag(np.diag(cross))).max(), 1e-6)
        self.assertTrue(np.all((model.correlations >= 0) & (model.correlations <= 1)))

    def test_sign_convention(self):
        """Test sign convention"""
        X1, X2 = _shared_latent_views(10)
        P1 = fit_cca(X1, X2).P1
        pivots = np.argmax(np.abs(P1), axis=0)
        self.assertTrue(np.all(P1[pivots, np.arange(P1.shape[1])] > 0))

    def test_invariant_to_linear_transform_of_a_view(self):
        """Test invariant to linear transform of a view"""
        X1, X2 = _shared_latent_views(11)
        T = np.random.default_rng(12).normal(size=(5, 5)) + 3 * np.eye(5)
        np.testing.assert_allclose(
            fit_cca(T @ X1, X2, ridge=0.0).correlations, fit_cca(X1, X2, ridge=0.0).correlations, atol=1e-6,
        )

    def test_swapping_views(self):
        """Test swapping views"""
        X1, X2 = _shared_latent_views(13)
        forward = fit_cca(X1, X2, ridge=0.0)
        backward = fit_cca(X2, X1, ridge=0.0)
        np.testing.assert_allclose(forward.correlations, backward.correlations, atol=1e-10)
        for k in range(5):
            self.assertAlmostEqual(abs(forward.P1[:, k] @ backward.P2[:, k] / (
                np.linalg.norm(forward.P1[:, k]) * np.linalg.norm(backward.P2[:, k]))), 1.0, delta=1e-6)

    def test_wide_semantic_view(self):
        """Test wide semantic view"""
        rng = np.random.default_rng(14)
        F = rng.normal(size=(3, 20))
        W2 = rng.normal(size=(500, 20))
        model = fit_cca(F, W2)
        self.assertEqual(model.P2.shape, (500, 3))
        C22 = view_covariance(W2, model.ridge[1])
        self.assertLess(np.abs(model.P2.T @ C22 @ model.P2 - np.eye(3)).max(), 1e-6)

    def test_too_many_dimensions(self):
        """Test too many dimensions"""
        with self.assertRaises(RankError):
            fit_cca(np.random.default_rng(15).normal(size=(4, 5)), np.random.default_rng(16).normal(size=(6, 5)), c=5)

    def test_zero_variance_view(self):
        """Test zero variance view"""
        with self.assertRaises(DegenerateInputError):
            fit_cca(np.ones((2, 6)), np.random.default_rng(17).normal(size=(2, 6)), ridge=0.0)

    def test_save_and_load(self):
        """Test save and load"""
        X1, X2 = _shared_latent_views(18)
        model = fit_cca(X1, X2, c=2)
        with tempfile.TemporaryDirectory() as tmp:
            save_cca(model, Path(tmp) / 'cca')
            loaded = load_cca(Path(tmp) / 'cca')
        np.testing.assert_array_equal(loaded.P1, model.P1)
        np.testing.assert_array_equal(loaded.P2, model.P2)
        np.testing.assert_array_equal(loaded.visual_mean, model.visual_mean)
        self.assertEqual(loaded.ridge, model.ridge)


class CcaCommandTest(SimpleTestCase):
    """Test cases for the cca command"""

    def _embedding(self, tmp, n_seen):
        edges = [('root', f'g{i % 3}') for i in range(3)] + [(f'g{i % 3}', f'c{i}') for i in range(n_seen + 2)]
        registry = make_registry([f'c{i}' for i in range(n_seen)], [f'c{n_seen}', f'c{n_seen + 1}'])
        embedding = classical_mds(distance_matrix(build_graph(edges), registry), 20, n_seen=n_seen, registry=registry)
        save_embedding(embedding, tmp / 'emb')

    def test_pca_and_random_features(self):
        """Test pca and random features"""
        rng = np.random.default_rng(19)
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            self._embedding(tmp, 8)
            outputs = rng.dirichlet(np.ones(8), size=400)
            write_matrix(outputs, tmp / 'probs.mat')
            write_labels(np.arange(400) % 8, tmp / 'labels.txt')
            save_whitening(fit_whitening_matrix(outputs, d=3), tmp / 'pca')

            call_command('cca', '--features', str(tmp / 'pca'), '--embedding', str(tmp / 'emb'),
                         '--output', str(tmp / 'cca_pca'), verbosity=0)
            call_command('cca', '--random-dim', '3', '--embedding', str(tmp / 'emb'),
                         '--output', str(tmp / 'cca_rand'), verbosity=0)
            call_command('cca', '--features', str(tmp / 'pca'), '--embedding', str(tmp / 'emb'),
                         '--output', str(tmp / 'cca_means'), '--class-means',
                         '--outputs', str(tmp / 'probs.mat'), '--labels', str(tmp / 'labels.txt'), verbosity=0)
            pca_model = load_cca(tmp / 'cca_pca')
            random_model = load_cca(tmp / 'cca_rand')
            means_model = load_cca(tmp / 'cca_means')

        self.assertEqual(pca_model.features.tag, 'pca')
        self.assertEqual(random_model.features.tag, 'random-semi-orthogonal')
        self.assertEqual(pca_model.c, 3)
        self.assertEqual(means_model.features.matrix.shape, (3, 8))

    def test_class_means_default_to_query_transform(self):
        """Test that class means of raw logits are taken over QUERY_TRANSFORM rows unless --transform is given"""
        rng = np.random.default_rng(20)
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            self._embedding(tmp, 8)
            logits = rng.normal(scale=2.0, size=(400, 8))
            write_matrix(logits, tmp / 'logits.mat')
            write_labels(np.arange(400) % 8, tmp / 'labels.txt')
            save_whitening(fit_whitening_matrix(softmax(logits), d=3), tmp / 'pca')

            def run(name, *flags):
                call_command('cca', '--features', str(tmp / 'pca'), '--embedding', str(tmp / 'emb'),
                             '--output', str(tmp / name), '--class-means', '--outputs', str(tmp / 'logits.mat'),
                             '--labels', str(tmp / 'labels.txt'), *flags, verbosity=0)
                return load_cca(tmp / name)

            default = run('default')
            explicit = run('explicit', '--transform', 'softmax')
            raw = run('raw', '--transform', 'none')

        np.testing.assert_array_equal(default.visual_mean, explicit.visual_mean)
        np.testing.assert_array_equal(default.P1, explicit.P1)
        self.assertFalse(np.allclose(default.visual_mean, raw.visual_mean))

import tempfile
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.test import SimpleTestCase, override_settings

from core.exceptions import DimensionMismatchError, EmptyInputError, NonFiniteInputError, RankError
from core.services.matrix_io import iter_matrix_chunks, write_matrix, write_metadata
from services.distributions.services import softmax
from .models import MomentAccumulator
from .services import (
    eigendecompose,
    fit_moments,
    fit_whitening,
    fit_whitening_matrix,
    load_whitening,
    model_from_covariance,
    save_whitening,
    whiten,
    whitening_matrix,
)


def _equal_up_to_row_sign(testcase, actual, expected, atol=1e-12):
    for row_a, row_e in zip(actual, expected):
        if not (np.allclose(row_a, row_e, atol=atol) or np.allclose(row_a, -row_e, atol=atol)):
            testcase.fail(f"{actual} != {expected} up to row sign")


class MomentAccumulatorTest(SimpleTestCase):
    """Test cases for exact streaming moment sums"""

    def test_two_point_covariance(self):
        """Test two point covariance"""
        acc = fit_moments([np.array([0.0, 0.0]), np.array([2.0, 2.0])])
        np.testing.assert_array_equal(acc.mean(), [1.0, 1.0])
        np.testing.assert_array_equal(acc.covariance(), [[1.0, 1.0], [1.0, 1.0]])

    def test_repeated_point_has_zero_covariance(self):
        """Test repeated point has zero covariance"""
        acc = fit_moments([np.array([3.0, -1.0, 2.0])] * 10)
        np.testing.assert_array_equal(acc.covariance(), np.zeros((3, 3)))

    def test_merge_is_exact(self):
        """Test merge is exact"""
        rng = np.random.default_rng(1)
        A = rng.integers(-5, 5, size=(40, 3)).astype(float)
        B = rng.integers(-5, 5, size=(25, 3)).astype(float)
        merged = MomentAccumulator().add(A).merge(MomentAccumulator().add(B))
        union = MomentAccumulator().add(A).add(B)
        self.assertEqual(merged.count, union.count)
        np.testing.assert_array_equal(merged.total, union.total)
        np.testing.assert_array_equal(merged.outer, union.outer)

    def test_outer_sum_is_symmetric(self):
        """Test outer sum is symmetric"""
        rng = np.random.default_rng(2)
        acc = fit_moments(np.array_split(rng.normal(size=(100, 4)), 3))
        np.testing.assert_array_equal(acc.outer, acc.outer.T)

    def test_dimension_mismatch(self):
        """Test dimension mismatch"""
        with self.assertRaises(DimensionMismatchError):
            fit_moments([np.zeros(3), np.zeros(4)])

    def test_needs_two_samples(self):
        """Test needs two samples"""
        with self.assertRaises(EmptyInputError):
            fit_moments([np.zeros(3)]).covariance()

    def test_thread_count_does_not_change_sums(self):
        """Test thread count does not change sums"""
        rng = np.random.default_rng(3)
        chunks = np.array_split(rng.normal(size=(5000, 6)), 13)
        single = fit_moments(chunks, threads=1)
        multi = fit_moments(chunks, threads=4)
        np.testing.assert_array_equal(single.total, multi.total)
        np.testing.assert_array_equal(single.outer, multi.outer)


class EigendecomposeTest(SimpleTestCase):
    """Test cases for the deterministic symmetric eigendecomposition"""

    def test_identity(self):
        """Test eigendecomposition of the identity"""
        values, vectors = eigendecompose(np.eye(3))
        np.testing.assert_allclose(values, [1.0, 1.0, 1.0], atol=1e-14)
        np.testing.assert_allclose(vectors.T @ vectors, np.eye(3), atol=1e-10)

    def test_diagonal(self):
        """Test eigendecomposition of a diagonal covariance"""
        values, vectors = eigendecompose(np.diag([4.0, 1.0]))
        np.testing.assert_allclose(values, [4.0, 1.0], atol=1e-14)
        np.testing.assert_allclose(np.abs(vectors), np.eye(2), atol=1e-14)

    def test_two_by_two(self):
        """Test two by two"""
        values, _ = eigendecompose([[2.0, 1.0], [1.0, 2.0]])
        np.testing.assert_allclose(values, [3.0, 1.0], atol=1e-14)

    def test_reconstruction_and_sign_convention(self):
        """Test reconstruction and sign convention"""
        rng = np.random.default_rng(4)
        A = rng.normal(size=(8, 8))
        C = A @ A.T
        values, vectors = eigendecompose(C)
        self.assertTrue(np.all(np.diff(values) <= 0))
        np.testing.assert_allclose(vectors.T @ vectors, np.eye(8), atol=1e-10)
        self.assertLess(np.abs(vectors @ np.diag(values) @ vectors.T - C).max(), 1e-8 * np.abs(C).max())
        pivots = np.argmax(np.abs(vectors), axis=0)
        self.assertTrue(np.all(vectors[pivots, np.arange(8)] > 0))

    def test_non_finite_rejected(self):
        """Test non finite rejected"""
        with self.assertRaises(NonFiniteInputError):
            eigendecompose([[1.0, np.nan], [np.nan, 1.0]])


class WhiteningTest(SimpleTestCase):
    """Test cases for PCA whitening"""

    def test_identity_covariance_gives_orthogonal_matrix(self):
        """Test identity covariance gives orthogonal matrix"""
        model = model_from_covariance(np.eye(4))
        U = whitening_matrix(model, 4)
        np.testing.assert_allclose(U @ U.T, np.eye(4), atol=1e-12)

    def test_diagonal_whitening_matrix(self):
        """Test diagonal whitening matrix"""
        model = model_from_covariance(np.diag([4.0, 1.0]))
        _equal_up_to_row_sign(self, whitening_matrix(model, 2), np.array([[0.5, 0.0], [0.0, 1.0]]))
        _equal_up_to_row_sign(self, whitening_matrix(model, 1), np.array([[0.5, 0.0]]))

    def test_diagonal_whiten_vector(self):
        """Test diagonal whiten vector"""
        model = model_from_covariance(np.diag([4.0, 1.0]))
        z = whiten([2.0, 0.0], model)
        np.testing.assert_allclose(np.abs(z), [1.0, 0.0], atol=1e-12)

    def test_mean_maps_to_zero(self):
        """Test mean maps to zero"""
        rng = np.random.default_rng(5)
        model = fit_whitening_matrix(rng.normal(loc=3.0, size=(500, 5)))
        np.testing.assert_allclose(whiten(model.mean, model), np.zeros(5), atol=1e-12)

    def test_whitened_covariance_is_identity(self):
        """Test whitened covariance is identity"""
        rng = np.random.default_rng(6)
        rotation, _ = np.linalg.qr(rng.normal(size=(50, 50)))
        mixing = rotation * np.linspace(1.0, 10.0, 50)
        X = rng.standard_normal((20_000, 50)) @ mixing.T + rng.normal(size=50)
        model = fit_whitening_matrix(X, d=50)
        Z = whiten(X, model)
        cov = (Z - Z.mean(axis=0)).T @ (Z - Z.mean(axis=0)) / Z.shape[0]
        self.assertLess(np.abs(cov - np.eye(50)).max(), 1e-8)

    def test_total_variance_preserved(self):
        """Test total variance preserved"""
        rng = np.random.default_rng(7)
        X = rng.normal(size=(1000, 6)) * np.arange(1, 7)
        model = fit_whitening_matrix(X)
        cov = np.cov(X, rowvar=False, bias=True)
        self.assertAlmostEqual(model.eigenvalues.sum(), np.trace(cov), delta=1e-8 * np.trace(cov))

    def test_simplex_outputs_are_rank_deficient(self):
        """Test simplex outputs are rank deficient"""
        rng = np.random.default_rng(8)
        probs = softmax(rng.normal(size=(2000, 6)), 1.0)
        model = fit_whitening_matrix(probs)
        self.assertEqual(model.valid_rank, 5)
        with self.assertRaises(RankError):
            whitening_matrix(model, 6)
        U = whitening_matrix(model, 5)
        C = np.cov(probs, rowvar=False, bias=True)
        np.testing.assert_allclose(U @ C @ U.T, np.eye(5), atol=1e-8)

    def test_whiten_dimension_mismatch(self):
        """Test whiten dimension mismatch"""
        model = model_from_covariance(np.eye(3))
        with self.assertRaises(DimensionMismatchError):
            whiten(np.zeros(4), model)

    def test_streaming_fit_matches_in_memory_fit(self):
        """Test streaming fit matches in memory fit"""
        rng = np.random.default_rng(9)
        X = rng.normal(size=(1000, 5))
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'x.mat'
            write_matrix(X, path)
            streamed = fit_whitening(fit_moments(iter_matrix_chunks(path, 128)))
        in_memory = fit_whitening_matrix(X, chunk_rows=128)
        np.testing.assert_array_equal(streamed.eigenvalues, in_memory.eigenvalues)
        np.testing.assert_array_equal(streamed.eigenvectors, in_memory.eigenvectors)
        np.testing.assert_array_equal(streamed.mean, in_memory.mean)

    def test_save_and_load(self):
        """Test save and load"""
        rng = np.random.default_rng(10)
        X = rng.normal(size=(300, 4))
        model = fit_whitening_matrix(X, d=3, transform_tag='softmax(T=1.0)')
        with tempfile.TemporaryDirectory() as tmp:
            save_whitening(model, Path(tmp) / 'w')
            loaded = load_whitening(Path(tmp) / 'w')
        np.testing.assert_array_equal(whiten(X, loaded), whiten(X, model))
        self.assertEqual(loaded.d, 3)
        self.assertEqual(loaded.transform_tag, 'softmax(T=1.0)')


class PcaCommandTest(SimpleTestCase):
    """Test cases for the pca command"""

    def test_fits_with_transform_and_caps_dimension(self):
        """Test fits with transform and caps dimension"""
        rng = np.random.default_rng(11)
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            write_matrix(rng.normal(size=(400, 8)), tmp / 'logits.mat')
            call_command(
                'pca', '--input', str(tmp / 'logits.mat'), '--output', str(tmp / 'model'),
                '--transform', 'normalized-logits', verbosity=0,
            )
            model = load_whitening(tmp / 'model')
        self.assertEqual(model.n, 8)
        self.assertEqual(model.d, 7)
        self.assertEqual(model.transform_tag, 'normalized-logits')

    def test_default_transform_follows_fit_transform(self):
        """Test that raw logits are fitted as FIT_TRANSFORM rows unless --transform is given"""
        rng = np.random.default_rng(12)
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            write_matrix(rng.normal(size=(300, 6)), tmp / 'logits.mat')
            call_command('pca', '--input', str(tmp / 'logits.mat'), '--output', str(tmp / 'default'), verbosity=0)
            call_command('pca', '--input', str(tmp / 'logits.mat'), '--output', str(tmp / 'explicit'),
                         '--transform', 'normalized-logits', verbosity=0)
            call_command('pca', '--input', str(tmp / 'logits.mat'), '--output', str(tmp / 'raw'),
                         '--transform', 'none', verbosity=0)
            default = load_whitening(tmp / 'default')
            explicit = load_whitening(tmp / 'explicit')
            raw = load_whitening(tmp / 'raw')
        self.assertEqual(default.transform_tag, 'normalized-logits')
        self.assertEqual(raw.transform_tag, 'raw')
        np.testing.assert_array_equal(default.mean, explicit.mean)
        np.testing.assert_array_equal(default.U, explicit.U)

    @override_settings(FIT_TRANSFORM='softmax')
    def test_fit_transform_setting(self):
        """Test that the FIT_TRANSFORM setting picks the default transform"""
        rng = np.random.default_rng(13)
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            write_matrix(rng.normal(size=(200, 5)), tmp / 'logits.mat')
            call_command('pca', '--input', str(tmp / 'logits.mat'), '--output', str(tmp / 'model'), verbosity=0)
            model = load_whitening(tmp / 'model')
        self.assertEqual(model.transform_tag, 'softmax(T=1.0)')

    def test_tagged_input_is_not_transformed_again(self):
        """Test that rows already carrying a transform tag are fitted as they are"""
        rng = np.random.default_rng(14)
        probs = softmax(rng.normal(size=(200, 5)))
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            write_matrix(probs, tmp / 'probs.mat')
            write_metadata(tmp / 'probs.mat', {'transform': 'softmax(T=1.0)'})
            call_command('pca', '--input', str(tmp / 'probs.mat'), '--output', str(tmp / 'model'), verbosity=0)
            model = load_whitening(tmp / 'model')
        self.assertEqual(model.transform_tag, 'softmax(T=1.0)')
        np.testing.assert_allclose(model.mean, probs.mean(axis=0), atol=1e-12)

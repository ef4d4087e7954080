import tempfile
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from core.exceptions import ConfigError, DegenerateInputError, DimensionMismatchError, DivergenceError
from core.services.matrix_io import write_matrix
from core.services.synthetic_world import IcaWorldSpec, generate_ica_world
from services.whitening.services import fit_whitening_matrix, model_from_covariance
from .models import IcaConfig
from .services import (
    amari_index,
    init_rotation,
    load_ica,
    monitor_objective,
    orthogonality_residual,
    save_ica,
    score,
    sgd_step,
    train_ica,
)


class RotationTest(SimpleTestCase):
    """Test cases for the seeded orthogonal initialization"""

    def test_one_dimensional(self):
        """Test one dimensional"""
        for seed in range(5):
            np.testing.assert_array_equal(init_rotation(1, seed), [[1.0]])

    def test_orthogonal(self):
        """Test that the initial rotation is orthogonal with positive determinant"""
        V = init_rotation(7, 3)
        self.assertLess(np.abs(V @ V.T - np.eye(7)).max(), 1e-12)
        self.assertGreater(np.linalg.det(V), 0)

    def test_seeded(self):
        """Test seeded"""
        np.testing.assert_array_equal(init_rotation(5, 11), init_rotation(5, 11))
        self.assertFalse(np.array_equal(init_rotation(5, 11), init_rotation(5, 12)))

    def test_invalid_dimension(self):
        """Test invalid dimension"""
        with self.assertRaises(DegenerateInputError):
            init_rotation(0, 0)


class ScoreTest(SimpleTestCase):
    """Test cases for the score function"""

    def test_values(self):
        """Test score function values"""
        self.assertEqual(score(0.0), 0.0)
        self.assertAlmostEqual(score(100.0), -1.0, delta=1e-12)
        self.assertAlmostEqual(score(0.5), -0.46211716, delta=1e-8)


class SgdStepTest(SimpleTestCase):
    """Test cases for a single rotation update"""

    def test_zero_rate_keeps_identity(self):
        """Test zero rate keeps identity"""
        rng = np.random.default_rng(0)
        np.testing.assert_array_equal(sgd_step(np.eye(3), rng.normal(size=(3, 8)), 0.0), np.eye(3))

    def test_zero_rate_keeps_orthogonal_matrix(self):
        """Test zero rate keeps orthogonal matrix"""
        rng = np.random.default_rng(1)
        V = init_rotation(6, 4)
        np.testing.assert_allclose(sgd_step(V, rng.normal(size=(6, 20)), 0.0), V, atol=1e-14)

    def test_scalar_update(self):
        """Test scalar update"""
        V = sgd_step(np.array([[1.0]]), np.array([[0.5]]), 0.1)
        self.assertAlmostEqual(V[0, 0], 0.97689414, delta=1e-8)

    def test_correction_contracts_towards_orthogonality(self):
        """Test correction contracts towards orthogonality"""
        V = 1.1 * np.eye(4)
        Z = np.random.default_rng(2).normal(size=(4, 10))
        self.assertLess(orthogonality_residual(sgd_step(V, Z, 0.0)), orthogonality_residual(V))

    def test_variants_agree_for_symmetric_rotation(self):
        """Test variants agree for symmetric rotation"""
        V = 1.05 * np.eye(3)
        Z = np.random.default_rng(3).normal(size=(3, 10))
        np.testing.assert_allclose(sgd_step(V, Z, 0.01), sgd_step(V, Z, 0.01, correction='transpose'), atol=1e-15)

    def test_batch_shape_checked(self):
        """Test batch shape checked"""
        with self.assertRaises(DimensionMismatchError):
            sgd_step(np.eye(3), np.zeros((4, 10)), 0.1)


class AmariIndexTest(SimpleTestCase):
    """Test cases for the Amari index"""

    def test_permutations_score_zero(self):
        """Test permutations score zero"""
        self.assertEqual(amari_index(np.eye(4)), 0.0)
        swap = np.array([[0.0, 1.0], [1.0, 0.0]])
        self.assertEqual(amari_index(np.diag([3.0, -2.0]) @ swap), 0.0)

    def test_all_ones_is_worst_case(self):
        """Test all ones is worst case"""
        self.assertAlmostEqual(amari_index(np.ones((2, 2))), 1.0)
        self.assertAlmostEqual(amari_index(np.ones((5, 5))), 1.0)

    def test_between_zero_and_one(self):
        """Test between zero and one"""
        value = amari_index(np.random.default_rng(4).normal(size=(6, 6)))
        self.assertGreater(value, 0.0)
        self.assertLessEqual(value, 1.0)

    def test_zero_row_rejected(self):
        """Test zero row rejected"""
        with self.assertRaises(DegenerateInputError):
            amari_index(np.array([[1.0, 2.0], [0.0, 0.0]]))


class ObjectiveTest(SimpleTestCase):
    """Test cases for the log-cosh objective monitor"""

    def test_zero_batch(self):
        """Test zero batch"""
        self.assertEqual(monitor_objective(init_rotation(3, 0), np.zeros((5, 3))), 0.0)

    def test_scalar(self):
        """Test the objective of a scalar batch"""
        self.assertAlmostEqual(monitor_objective(np.array([[1.0]]), np.array([[1.0]])), -0.43378083, delta=1e-8)

    def test_row_permutation_invariance(self):
        """Test row permutation invariance"""
        rng = np.random.default_rng(5)
        V = init_rotation(4, 1)
        Z = rng.normal(size=(50, 4))
        self.assertAlmostEqual(monitor_objective(V, Z), monitor_objective(V[[2, 0, 3, 1]], Z), delta=1e-12)

    def test_large_arguments_are_finite(self):
        """Test large arguments are finite"""
        self.assertAlmostEqual(monitor_objective(np.array([[1.0]]), np.array([[1000.0]])), -(1000.0 - np.log(2.0)))


class IcaConfigTest(SimpleTestCase):
    """Test cases for ICA training settings"""

    def test_learning_rate_schedule(self):
        """Test learning rate schedule"""
        config = IcaConfig(d=3)
        self.assertEqual(config.learning_rate(0), 0.005)
        self.assertEqual(config.learning_rate(9), 0.005)
        self.assertEqual(config.learning_rate(10), 0.0025)
        self.assertEqual(config.learning_rate(29), 0.00125)

    def test_invalid_values(self):
        """Test invalid values"""
        with self.assertRaises(ConfigError):
            IcaConfig(d=3, batch_size=0)
        with self.assertRaises(ConfigError):
            IcaConfig(d=3, reorthogonalize_every=-1)
        with self.assertRaises(ConfigError):
            IcaConfig(d=3, correction='other')


class TrainingTest(SimpleTestCase):
    """Test cases for small ICA training runs"""

    def setUp(self):
        self.world = generate_ica_world(IcaWorldSpec(n_sources=4, n_samples=20_000, seed=7))
        self.whitening = fit_whitening_matrix(self.world.data)

    def test_zero_epochs_returns_initial_rotation(self):
        """Test zero epochs returns initial rotation"""
        model = train_ica(self.world.data, self.whitening, IcaConfig(d=4, epochs=0, seed=3))
        raw = init_rotation(4, 3) @ self.whitening.U
        np.testing.assert_allclose(model.W, raw / np.linalg.norm(raw, axis=1)[:, None], atol=1e-12)
        self.assertEqual(model.trace, [])

    def test_rows_have_unit_norm(self):
        """Test rows have unit norm"""
        model = train_ica(self.world.data, self.whitening, IcaConfig(d=4, epochs=2))
        self.assertLess(np.abs(np.linalg.norm(model.W, axis=1) - 1.0).max(), 1e-12)
        self.assertLess(orthogonality_residual(model.V), 1e-10)
        self.assertEqual(len(model.trace), 2)

    def test_deterministic(self):
        """Test deterministic"""
        config = IcaConfig(d=4, epochs=2, seed=9)
        first = train_ica(self.world.data, self.whitening, config)
        second = train_ica(self.world.data, self.whitening, config)
        np.testing.assert_array_equal(first.W, second.W)

    def test_periodic_reorthogonalization(self):
        """Test periodic reorthogonalization"""
        model = train_ica(self.world.data, self.whitening, IcaConfig(d=4, epochs=1, reorthogonalize_every=1))
        self.assertLess(model.trace[-1]['residual'], 1e-10)

    def test_divergence_is_reported(self):
        """Test divergence is reported"""
        with self.assertRaises(DivergenceError):
            train_ica(self.world.data, self.whitening, IcaConfig(d=4, epochs=1, lr0=1e4))

    def test_dimension_must_match_whitening(self):
        """Test dimension must match whitening"""
        with self.assertRaises(DimensionMismatchError):
            train_ica(self.world.data, self.whitening, IcaConfig(d=3, epochs=1))

    def test_identity_mixing_recovery(self):
        """Test identity mixing recovery"""
        world = generate_ica_world(IcaWorldSpec(n_sources=4, n_samples=20_000, identity_mixing=True, seed=1))
        whitening = model_from_covariance(np.eye(4))
        model = train_ica(world.data, whitening, IcaConfig(d=4, batch_size=100, lr0=0.05, epochs=20, seed=2))
        self.assertLess(amari_index(model.W), 0.1)

    def test_save_and_load(self):
        """Test save and load"""
        model = train_ica(self.world.data, self.whitening, IcaConfig(d=4, epochs=1))
        with tempfile.TemporaryDirectory() as tmp:
            save_ica(model, Path(tmp) / 'ica')
            loaded = load_ica(Path(tmp) / 'ica')
        np.testing.assert_array_equal(loaded.W, model.W)
        np.testing.assert_array_equal(loaded.components(self.world.data[:5]), model.components(self.world.data[:5]))
        self.assertEqual(loaded.config, model.config)
        self.assertEqual(loaded.trace, model.trace)


class RecoveryTest(SimpleTestCase):
    """10 Laplace sources, condition <= 10 mixing, 2e5 samples, default schedule"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        world = generate_ica_world(IcaWorldSpec(n_sources=10, n_samples=200_000, condition_bound=10.0, seed=0))
        whitening = fit_whitening_matrix(world.data, d=10)
        cls.mixing = world.mixing
        cls.amari_trace = [amari_index(init_rotation(10, 0) @ whitening.U @ world.mixing)]

        def track(epoch, V):
            cls.amari_trace.append(amari_index(V @ whitening.U @ world.mixing))

        cls.model = train_ica(world.data, whitening, IcaConfig(d=10, seed=0), on_epoch=track)

    def test_sources_recovered(self):
        """Test sources recovered"""
        self.assertLess(amari_index(self.model.W @ self.mixing), 0.1)

    def test_orthogonality_maintained(self):
        """Test orthogonality maintained"""
        max_residuals = [entry['max_residual'] for entry in self.model.trace]
        self.assertLess(max(max_residuals), 5e-2)
        self.assertLess(max(max_residuals[20:]), 1e-2)
        self.assertLess(orthogonality_residual(self.model.V), 1e-10)

    def test_amari_index_decreases(self):
        """Test that the Amari index falls on average over the epochs, with at most 2 rises"""
        trace = np.array(self.amari_trace)
        self.assertEqual(len(trace), 31)
        self.assertLess(trace[-1], trace[0])
        running = np.cumsum(trace) / np.arange(1, len(trace) + 1)
        self.assertLessEqual(int(np.sum(np.diff(running) > 0)), 2)

    def test_objective_improves(self):
        """Test objective improves"""
        self.assertGreater(self.model.trace[-1]['objective'], self.model.trace[0]['objective'])


class IcaCommandTest(SimpleTestCase):
    """Test cases for the ica command"""

    def test_pca_then_ica(self):
        """Test pca then ica"""
        rng = np.random.default_rng(12)
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            write_matrix(rng.normal(size=(2000, 6)), tmp / 'logits.mat')
            call_command('pca', '--input', str(tmp / 'logits.mat'), '--output', str(tmp / 'pca'),
                         '--transform', 'softmax', '--dim', '4', verbosity=0)
            call_command('ica', '--input', str(tmp / 'logits.mat'), '--whitening', str(tmp / 'pca'),
                         '--output', str(tmp / 'ica'), '--transform', 'softmax', '--epochs', '2', verbosity=0)
            model = load_ica(tmp / 'ica')
        self.assertEqual(model.W.shape, (4, 6))
        self.assertEqual(len(model.trace), 2)
        self.assertEqual(model.transform_tag, 'softmax(T=1.0)')

    def test_transform_mismatch_is_a_data_error(self):
        """Test transform mismatch is a data error"""
        rng = np.random.default_rng(13)
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            write_matrix(rng.normal(size=(500, 5)), tmp / 'logits.mat')
            call_command('pca', '--input', str(tmp / 'logits.mat'), '--output', str(tmp / 'pca'),
                         '--transform', 'softmax', verbosity=0)
            with self.assertRaises(CommandError) as ctx:
                call_command('ica', '--input', str(tmp / 'logits.mat'), '--whitening', str(tmp / 'pca'),
                             '--output', str(tmp / 'ica'), '--transform', 'normalized-logits', verbosity=0)
        self.assertEqual(ctx.exception.returncode, 2)

    def test_default_transform_follows_whitening_model(self):
        """Test that ica without --transform reads rows the way the whitening model was fit"""
        rng = np.random.default_rng(14)
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            write_matrix(rng.normal(size=(1000, 5)), tmp / 'logits.mat')
            call_command('pca', '--input', str(tmp / 'logits.mat'), '--output', str(tmp / 'pca'),
                         '--transform', 'softmax', verbosity=0)
            call_command('ica', '--input', str(tmp / 'logits.mat'), '--whitening', str(tmp / 'pca'),
                         '--output', str(tmp / 'default'), '--epochs', '2', verbosity=0)
            call_command('ica', '--input', str(tmp / 'logits.mat'), '--whitening', str(tmp / 'pca'),
                         '--output', str(tmp / 'explicit'), '--transform', 'softmax', '--epochs', '2', verbosity=0)
            default = load_ica(tmp / 'default')
            explicit = load_ica(tmp / 'explicit')
        self.assertEqual(default.transform_tag, 'softmax(T=1.0)')
        np.testing.assert_array_equal(default.W, explicit.W)

import tempfile
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from core.exceptions import DegenerateInputError, EmptyInputError, NonFiniteInputError
from core.services.matrix_io import read_matrix, read_metadata, read_table, write_matrix, write_metadata
from .models import MomentSums
from .services import (
    accumulate_moments,
    apply_transform,
    kurtosis_per_class,
    normalized_logits,
    parse_transform_tag,
    read_transformed,
    report_from_moments,
    resolve_transform,
    softmax,
    temperature_rescale,
    transform_tag_for,
)


class SoftmaxTest(SimpleTestCase):
    """Test cases for the temperature softmax"""

    def test_uniform_logits(self):
        """Test uniform logits"""
        for c in (-3.0, 0.0, 7.5):
            for T in (0.1, 1.0, 4.0):
                np.testing.assert_allclose(softmax([c] * 4, T), [0.25] * 4, atol=1e-15)

    def test_known_values(self):
        """Test known values"""
        np.testing.assert_allclose(
            softmax([1.0, 2.0, 3.0], 1.0),
            [0.09003057, 0.24472847, 0.66524096],
            atol=1e-8,
        )

    def test_saturation_does_not_overflow(self):
        """Test saturation does not overflow"""
        out = softmax([0.0, 1000.0], 1.0)
        self.assertTrue(np.all(np.isfinite(out)))
        np.testing.assert_array_equal(out, [0.0, 1.0])

    def test_shift_invariance(self):
        """Test shift invariance"""
        rng = np.random.default_rng(3)
        y = rng.normal(size=(20, 7))
        diff = np.abs(softmax(y, 1.3) - softmax(y + 41.0, 1.3)).max()
        self.assertLess(diff, 1e-12)

    def test_rows_sum_to_one(self):
        """Test rows sum to one"""
        rng = np.random.default_rng(4)
        out = softmax(rng.normal(scale=5.0, size=(50, 10)), 0.5)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)

    def test_rejects_bad_input(self):
        """Test rejects bad input"""
        with self.assertRaises(DegenerateInputError):
            softmax([1.0, 2.0], 0.0)
        with self.assertRaises(DegenerateInputError):
            softmax([1.0, 2.0], -1.0)
        with self.assertRaises(NonFiniteInputError):
            softmax([1.0, np.inf], 1.0)
        with self.assertRaises(NonFiniteInputError):
            softmax([np.nan, 1.0], 1.0)


class TemperatureRescaleTest(SimpleTestCase):
    """Test cases for re-tempering probability vectors"""

    example = [1e-6, 0.9, 0.1, 1e-9]

    def test_identity_at_unit_temperature(self):
        """Test identity at unit temperature"""
        p = np.array([0.1, 0.2, 0.3, 0.4])
        np.testing.assert_allclose(temperature_rescale(p, 1.0), p, atol=1e-15)

    def test_dark_knowledge_example(self):
        """Test dark knowledge example"""
        # Approximate reference values; direct evaluation is about (0.007, 0.670, 0.322, 0.0007).
        np.testing.assert_allclose(
            temperature_rescale(self.example, 3.0),
            [0.015, 0.664, 0.319, 0.001],
            atol=0.02,
        )

    def test_infinite_temperature_limit(self):
        """Test infinite temperature limit"""
        np.testing.assert_allclose(temperature_rescale(self.example, 1e6), [0.25] * 4, atol=1e-3)

    def test_matches_softmax_at_temperature(self):
        """Test matches softmax at temperature"""
        rng = np.random.default_rng(5)
        y = rng.normal(scale=3.0, size=(30, 6))
        for T in (0.5, 2.0, 3.0):
            np.testing.assert_allclose(temperature_rescale(softmax(y, 1.0), T), softmax(y, T), atol=1e-10)

    def test_zero_entry_rejected(self):
        """Test zero entry rejected"""
        with self.assertRaises(DegenerateInputError):
            temperature_rescale([0.0, 0.5, 0.5], 2.0)
        with self.assertRaises(DegenerateInputError):
            temperature_rescale([0.5, 0.5], 0.0)


class NormalizedLogitsTest(SimpleTestCase):
    """Test cases for min-shifted, sum-normalized logits"""

    def test_known_values(self):
        """Test known values"""
        np.testing.assert_allclose(normalized_logits([1.0, 2.0, 3.0]), [0.0, 1 / 3, 2 / 3], atol=1e-15)
        np.testing.assert_allclose(normalized_logits([-2.0, 0.0]), [0.0, 1.0], atol=1e-15)

    def test_minimum_is_exact_zero(self):
        """Test minimum is exact zero"""
        rng = np.random.default_rng(6)
        out = normalized_logits(rng.normal(size=(40, 9)))
        np.testing.assert_array_equal(out.min(axis=1), 0.0)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)

    def test_constant_logits_rejected(self):
        """Test constant logits rejected"""
        with self.assertRaises(DegenerateInputError):
            normalized_logits([5.0, 5.0, 5.0])
        with self.assertRaisesMessage(DegenerateInputError, 'row 1'):
            normalized_logits([[1.0, 2.0], [3.0, 3.0]])

    def test_permutation_equivariance(self):
        """Test permutation equivariance"""
        rng = np.random.default_rng(7)
        y = rng.normal(size=12)
        perm = rng.permutation(12)
        np.testing.assert_array_equal(normalized_logits(y[perm]), normalized_logits(y)[perm])

    def test_apply_transform_tags(self):
        """Test apply transform tags"""
        y = np.array([[1.0, 2.0, 3.0]])
        self.assertEqual(apply_transform(y, 'normalized-logits').transform_tag, 'normalized-logits')
        self.assertEqual(apply_transform(y, 'softmax', 2.0).transform_tag, 'softmax(T=2.0)')
        with self.assertRaises(DegenerateInputError):
            apply_transform(y, 'normalized-logits', from_probs=True)


class TransformResolutionTest(SimpleTestCase):
    """Test cases for transform tags and the default read transform"""

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self._tmp.name)
        self.logits = np.random.default_rng(8).normal(size=(6, 4))
        write_matrix(self.logits, self.dir / 'logits.mat')

    def tearDown(self):
        self._tmp.cleanup()

    def test_tag_for_mode(self):
        """Test the tag each transform mode produces"""
        self.assertEqual(transform_tag_for('normalized-logits', 3.0), 'normalized-logits')
        self.assertEqual(transform_tag_for('softmax', 2), 'softmax(T=2.0)')
        with self.assertRaises(DegenerateInputError):
            transform_tag_for('none')
        with self.assertRaises(DegenerateInputError):
            transform_tag_for('softmax', 0.0)

    def test_parse_tag(self):
        """Test that tags parse back to their mode and temperature"""
        self.assertEqual(parse_transform_tag('softmax(T=2.0)'), ('softmax', 2.0))
        self.assertEqual(parse_transform_tag('normalized-logits'), ('normalized-logits', 1.0))
        self.assertEqual(parse_transform_tag('raw'), (None, 1.0))
        self.assertEqual(parse_transform_tag(''), (None, 1.0))

    def test_explicit_mode_wins(self):
        """Test that an explicit mode is kept whatever the file or target says"""
        write_metadata(self.dir / 'logits.mat', {'transform': 'normalized-logits'})
        self.assertEqual(resolve_transform(self.dir / 'logits.mat', 'softmax', 0.5, 'raw'), ('softmax', 0.5))

    def test_raw_file_gets_target_transform(self):
        """Test that untagged rows are brought to the target tag"""
        self.assertEqual(resolve_transform(self.dir / 'logits.mat', None, 1.0, 'softmax(T=0.5)'), ('softmax', 0.5))
        self.assertEqual(resolve_transform(self.dir / 'logits.mat', None, 1.0, 'raw'), ('none', 1.0))
        self.assertEqual(resolve_transform(self.dir / 'logits.mat', None, 1.0, ''), ('none', 1.0))

    def test_tagged_file_read_as_is(self):
        """Test that rows with a sidecar tag are not transformed again"""
        write_metadata(self.dir / 'logits.mat', {'transform': 'softmax(T=1.0)'})
        self.assertEqual(resolve_transform(self.dir / 'logits.mat', None, 1.0, 'softmax(T=1.0)'), ('none', 1.0))
        with self.assertLogs('services.distributions.services', level='WARNING'):
            mode, _ = resolve_transform(self.dir / 'logits.mat', None, 1.0, 'normalized-logits')
        self.assertEqual(mode, 'none')

    def test_read_transformed(self):
        """Test that read_transformed stacks transformed chunks"""
        rows = read_transformed(self.dir / 'logits.mat', 'softmax', 1.0, chunk_rows=4)
        np.testing.assert_allclose(rows, softmax(self.logits), atol=1e-12)

    def test_read_transformed_empty(self):
        """Test that a file without rows is rejected"""
        write_matrix(np.zeros((0, 4)), self.dir / 'empty.mat')
        with self.assertRaises(EmptyInputError):
            read_transformed(self.dir / 'empty.mat', 'none')


class KurtosisTest(SimpleTestCase):
    """Test cases for per-class excess kurtosis"""

    def test_gaussian_columns(self):
        """Test gaussian columns"""
        rng = np.random.default_rng(10)
        report = kurtosis_per_class(rng.standard_normal((1_000_000, 2)))
        self.assertTrue(np.all(np.abs(report.kurtosis) < 0.05))
        self.assertEqual(report.sample_count, 1_000_000)

    def test_laplace_columns(self):
        """Test laplace columns"""
        rng = np.random.default_rng(11)
        report = kurtosis_per_class(rng.laplace(0.0, 1.0, size=(1_000_000, 1)))
        np.testing.assert_allclose(report.kurtosis, 3.0, atol=0.2)

    def test_constant_column_undefined(self):
        """Test constant column undefined"""
        rng = np.random.default_rng(12)
        X = np.column_stack([rng.normal(size=100), np.full(100, 0.1)])
        report = kurtosis_per_class(X)
        self.assertEqual(report.undefined_classes, [1])
        self.assertTrue(np.isnan(report.kurtosis[1]))
        self.assertTrue(np.isfinite(report.kurtosis[0]))
        self.assertEqual(report.n_classes, 2)

    def test_affine_invariance(self):
        """Test affine invariance"""
        rng = np.random.default_rng(13)
        X = rng.exponential(size=(5000, 3))
        base = kurtosis_per_class(X).kurtosis
        np.testing.assert_allclose(kurtosis_per_class(2.5 * X - 3.0).kurtosis, base, atol=1e-8)
        np.testing.assert_allclose(kurtosis_per_class(-0.5 * X + 1.0).kurtosis, base, atol=1e-8)

    def test_softmax_of_gaussian_logits_is_heavy_tailed(self):
        """Test softmax of gaussian logits is heavy tailed"""
        rng = np.random.default_rng(14)
        probs = softmax(rng.standard_normal((200_000, 10)) * 2.0, 1.0)
        self.assertTrue(kurtosis_per_class(probs).all_positive())

    def test_too_few_samples(self):
        """Test too few samples"""
        with self.assertRaises(EmptyInputError):
            kurtosis_per_class(np.ones((3, 2)))

    def test_chunked_merge_matches_single_pass(self):
        """Test chunked merge matches single pass"""
        rng = np.random.default_rng(15)
        X = rng.laplace(size=(10_000, 4)) + 2.0
        whole = report_from_moments(MomentSums.from_chunk(X))
        chunked = report_from_moments(accumulate_moments(np.array_split(X, 7)))
        np.testing.assert_allclose(chunked.kurtosis, whole.kurtosis, atol=1e-10)
        np.testing.assert_allclose(chunked.mean, whole.mean, atol=1e-12)
        self.assertEqual(chunked.sample_count, 10_000)

    def test_merge_order_is_deterministic(self):
        """Test merge order is deterministic"""
        rng = np.random.default_rng(16)
        chunks = np.array_split(rng.normal(size=(3000, 3)), 5)
        first = accumulate_moments(chunks)
        second = accumulate_moments(chunks)
        np.testing.assert_array_equal(first.m4, second.m4)


class DistributionCommandsTest(SimpleTestCase):
    """Test cases for the transform and stats commands"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)
        rng = np.random.default_rng(20)
        self.logits = rng.normal(size=(50, 5))
        write_matrix(self.logits, self.dir / 'logits.mat')

    def test_transform_writes_tagged_output(self):
        """Test transform writes tagged output"""
        call_command(
            'transform', '--input', str(self.dir / 'logits.mat'), '--output', str(self.dir / 'probs.mat'),
            '--mode', 'softmax', '--temperature', '2.0', '--quiet', verbosity=0,
        )
        np.testing.assert_allclose(read_matrix(self.dir / 'probs.mat'), softmax(self.logits, 2.0), atol=1e-15)
        self.assertEqual(read_metadata(self.dir / 'probs.mat')['transform'], 'softmax(T=2.0)')

    def test_normalized_logits_command(self):
        """Test normalized logits command"""
        call_command(
            'transform', '--input', str(self.dir / 'logits.mat'), '--output', str(self.dir / 'nl.mat'),
            '--mode', 'normalized-logits', verbosity=0,
        )
        np.testing.assert_allclose(read_matrix(self.dir / 'nl.mat'), normalized_logits(self.logits), atol=1e-15)

    def test_degenerate_input_exit_code(self):
        """Test degenerate input exit code"""
        write_matrix(np.ones((3, 4)), self.dir / 'flat.mat')
        with self.assertRaises(CommandError) as ctx:
            call_command(
                'transform', '--input', str(self.dir / 'flat.mat'), '--output', str(self.dir / 'o.mat'),
                '--mode', 'normalized-logits', verbosity=0,
            )
        self.assertEqual(ctx.exception.returncode, 2)

    def test_stats_report(self):
        """Test stats report"""
        call_command('stats', '--input', str(self.dir / 'logits.mat'), '--output', str(self.dir / 'k.csv'), verbosity=0)
        rows = read_table(self.dir / 'k.csv')
        self.assertEqual(len(rows), 5)
        expected = kurtosis_per_class(self.logits).kurtosis
        np.testing.assert_allclose([float(r['kurtosis']) for r in rows], expected, atol=1e-10)

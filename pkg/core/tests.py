import io
import os
import tempfile
from contextlib import redirect_stderr
from pathlib import Path
from unittest import mock

import networkx as nx
import numpy as np
from django.conf import settings
from django.core.management import call_command, load_command_class
from django.test import SimpleTestCase, override_settings

from core.config import RunConfig
from core.exceptions import ConfigError, DegenerateInputError, MatrixFormatError, NonFiniteInputError
from core.services.matrix_io import (
    iter_matrix_chunks,
    matrix_shape,
    read_labels,
    read_matrix,
    read_table,
    write_labels,
    write_matrix,
)
from core.services.model_store import load_model, model_kind, save_model
from core.services.parallel import ordered_map
from core.services.plot_data import emit_plot_data
from core.services.synthetic_world import (
    IcaWorldSpec,
    ZeroShotWorldSpec,
    generate_ica_world,
    generate_zeroshot_world,
    write_zeroshot_world,
)
from services.bridge.services import (
    center_semantic,
    class_mean_matrix,
    fit_cca,
    ica_features,
    pca_features,
    random_features,
    visual_class_matrix,
)
from services.distributions.models import NORMALIZED_LOGITS
from services.distributions.services import kurtosis_per_class, normalized_logits, softmax
from services.ica.models import IcaConfig
from services.ica.services import train_ica
from services.taxonomy.services import build_graph, classical_mds, distance_matrix
from services.whitening.services import fit_whitening_matrix
from services.zeroshot.services import build_index, topk_accuracy


class MatrixIoTest(SimpleTestCase):
    """Test cases for the binary and CSV matrix formats"""

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_binary_round_trip_is_bitwise(self):
        """Test binary round trip is bitwise"""
        matrix = np.random.default_rng(0).normal(size=(7, 3)) * 1e-300
        write_matrix(matrix, self.tmp / 'm.mat')
        self.assertEqual(read_matrix(self.tmp / 'm.mat').tobytes(), matrix.tobytes())
        self.assertEqual(tuple(matrix_shape(self.tmp / 'm.mat')), (7, 3))

    def test_truncated_payload(self):
        """Test truncated payload"""
        write_matrix(np.ones((2, 2)), self.tmp / 'm.mat')
        raw = (self.tmp / 'm.mat').read_bytes()
        (self.tmp / 'm.mat').write_bytes(raw[:-8])
        with self.assertRaisesMessage(MatrixFormatError, 'payload is 24 bytes, expected 32'):
            read_matrix(self.tmp / 'm.mat')

    def test_bad_magic(self):
        """Test bad magic"""
        (self.tmp / 'm.mat').write_bytes(b'NOTAMAT!' + bytes(8))
        with self.assertRaisesMessage(MatrixFormatError, 'bad magic'):
            read_matrix(self.tmp / 'm.mat')

    def test_csv_literal(self):
        """Test csv literal"""
        (self.tmp / 'm.csv').write_text('1,2\n3,4\n')
        np.testing.assert_array_equal(read_matrix(self.tmp / 'm.csv'), [[1.0, 2.0], [3.0, 4.0]])

    def test_csv_header_row(self):
        """Test csv header row"""
        (self.tmp / 'm.csv').write_text('a,b\n1,2\n')
        np.testing.assert_array_equal(read_matrix(self.tmp / 'm.csv'), [[1.0, 2.0]])

    def test_non_finite_rejected(self):
        """Test non finite rejected"""
        with self.assertRaises(NonFiniteInputError):
            write_matrix(np.array([[1.0, np.nan]]), self.tmp / 'm.mat')
        (self.tmp / 'm.csv').write_text('1,inf\n')
        with self.assertRaises(NonFiniteInputError):
            read_matrix(self.tmp / 'm.csv')

    def test_chunks(self):
        """Test chunked reading of a matrix file"""
        matrix = np.arange(20.0).reshape(10, 2)
        write_matrix(matrix, self.tmp / 'm.mat')
        chunks = list(iter_matrix_chunks(self.tmp / 'm.mat', chunk_rows=4))
        self.assertEqual([chunk.shape[0] for chunk in chunks], [4, 4, 2])
        np.testing.assert_array_equal(np.vstack(chunks), matrix)

    def test_labels(self):
        """Test label file reading and writing"""
        write_labels([3, 0, 2], self.tmp / 'l.txt')
        np.testing.assert_array_equal(read_labels(self.tmp / 'l.txt'), [3, 0, 2])
        (self.tmp / 'bad.txt').write_text('1\nx\n')
        with self.assertRaisesMessage(MatrixFormatError, ':2:'):
            read_labels(self.tmp / 'bad.txt')

    def test_model_store(self):
        """Test model directory storage"""
        save_model(self.tmp / 'model', 'demo', {'v': np.arange(3.0), 'm': np.eye(2)}, {'name': 'x'})
        attributes, arrays = load_model(self.tmp / 'model', 'demo')
        self.assertEqual(attributes, {'name': 'x'})
        self.assertEqual(arrays['v'].shape, (3,))
        self.assertEqual(model_kind(self.tmp / 'model'), 'demo')
        with self.assertRaisesMessage(MatrixFormatError, 'expected a whitening model'):
            load_model(self.tmp / 'model', 'whitening')


class RunConfigTest(SimpleTestCase):
    """Test cases for the flat KEY=VALUE run configuration"""

    def _write(self, text):
        handle = tempfile.NamedTemporaryFile('w', suffix='.cfg', delete=False)
        handle.write(text)
        handle.close()
        self.addCleanup(Path(handle.name).unlink)
        return handle.name

    def test_defaults(self):
        """Test defaults"""
        cfg = RunConfig.load()
        self.assertEqual(cfg.top_k, [1, 2, 5, 10, 20])
        self.assertEqual(cfg.pools, ['seen', 'unseen', 'both'])
        self.assertIsNone(cfg.cca_ridge)

    def test_file_and_flag_precedence(self):
        """Test file and flag precedence"""
        path = self._write('# run\nWHITEN_DIM=16\nTOP_K=1,5\nCCA_RIDGE=0.01\nSEED=4\n')
        cfg = RunConfig.load(path, {'seed': 9, 'threads': None})
        self.assertEqual((cfg.whiten_dim, cfg.top_k, cfg.cca_ridge, cfg.seed), (16, [1, 5], 0.01, 9))

    def test_unknown_key(self):
        """Test unknown key"""
        with self.assertRaisesMessage(ConfigError, 'Unknown key(s)'):
            RunConfig.load(self._write('WHITEN_DIMS=3\n'))

    def test_invalid_values(self):
        """Test invalid values"""
        with self.assertRaises(ConfigError):
            RunConfig.load(self._write('TEMPERATURE=0\n'))
        with self.assertRaises(ConfigError):
            RunConfig.load(self._write('POOLS=seen,nowhere\n'))
        with self.assertRaises(ConfigError):
            RunConfig.load(self._write('WHITEN_DIM=many\n'))

    def test_run_file_beats_environment(self):
        """Test that exported variables never override the run file"""
        path = self._write('SEED=5\nTOP_K=3\n')
        with mock.patch.dict(os.environ, {'SEED': '99', 'TOP_K': '1,2', 'THREADS': '4'}):
            cfg = RunConfig.load(path)
        self.assertEqual((cfg.seed, cfg.top_k, cfg.threads), (5, [3], settings.PIPELINE_THREADS))

    def test_environment_ignored_without_run_file(self):
        """Test that run-config keys are not read from the environment"""
        with mock.patch.dict(os.environ, {'WHITEN_DIM': '3'}):
            self.assertEqual(RunConfig.load().whiten_dim, settings.WHITEN_DIM)

    @override_settings(ICA_EPOCHS=7)
    def test_settings_defaults(self):
        """Test settings defaults"""
        self.assertEqual(RunConfig.load().ica_config(4).epochs, 7)


class OrderedMapTest(SimpleTestCase):
    """Test cases for the threaded ordered map"""

    def test_order_kept_with_threads(self):
        """Test order kept with threads"""
        self.assertEqual(list(ordered_map(lambda x: x * x, range(50), threads=4)), [x * x for x in range(50)])


class IcaWorldTest(SimpleTestCase):
    """Test cases for the Laplace mixture generator"""

    def test_identity_mixing_kurtosis(self):
        """Test identity mixing kurtosis"""
        world = generate_ica_world(IcaWorldSpec(n_sources=3, n_samples=200_000, identity_mixing=True, seed=1))
        np.testing.assert_allclose(kurtosis_per_class(world.data).kurtosis, 3.0, atol=0.5)

    def test_covariance_matches_mixing(self):
        """Test covariance matches mixing"""
        world = generate_ica_world(IcaWorldSpec(n_sources=4, n_samples=200_000, seed=2))
        expected = world.mixing @ world.mixing.T
        covariance = np.cov(world.data, rowvar=False)
        self.assertLess(np.abs(covariance - expected).max(), 0.05 * np.abs(expected).max())
        self.assertLessEqual(np.linalg.cond(world.mixing), 10.0)

    def test_seeded(self):
        """Test seeded"""
        spec = IcaWorldSpec(n_sources=3, n_samples=100, seed=3)
        np.testing.assert_array_equal(generate_ica_world(spec).data, generate_ica_world(spec).data)

    def test_unsatisfiable_condition_bound(self):
        """Test unsatisfiable condition bound"""
        with self.assertRaises(DegenerateInputError):
            generate_ica_world(IcaWorldSpec(n_sources=6, n_samples=10, condition_bound=1.0, max_tries=3))

    def test_world_parameters_validated(self):
        """Test that invalid world parameters are rejected"""
        with self.assertRaises(ConfigError):
            IcaWorldSpec(condition_bound=0.5)
        with self.assertRaises(ConfigError):
            ZeroShotWorldSpec(n_seen=5, n_unseen=6)


class ZeroShotWorldTest(SimpleTestCase):
    """Test cases for the attribute world and its taxonomy"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.world = generate_zeroshot_world(ZeroShotWorldSpec())

    def test_taxonomy_is_a_tree(self):
        """Test taxonomy is a tree"""
        taxonomy = build_graph(self.world.edges)
        self.assertTrue(nx.is_tree(taxonomy.graph))
        self.assertEqual(taxonomy.n_edges, taxonomy.n_nodes - 1)
        for node in self.world.registry.nodes:
            self.assertIn(node, taxonomy)

    def test_distance_correlation(self):
        """Test distance correlation"""
        self.assertGreaterEqual(self.world.correlation, 0.5)

    def test_shapes_and_pools(self):
        """Test shapes and pools"""
        world = self.world
        self.assertEqual(world.attributes.shape, (60, 8))
        self.assertEqual(world.train_logits.shape, (40 * 100, 40))
        self.assertEqual(world.test_logits.shape, (60 * 20, 40))
        self.assertEqual((world.registry.n_seen, world.registry.n_unseen), (40, 20))
        self.assertEqual(len(set(world.primaries.tolist())), 20)
        _, unseen_labels = world.unseen_test()
        self.assertTrue(np.all(unseen_labels >= 40))

    def test_unseen_attributes_lean_towards_their_primary(self):
        """Test unseen attributes lean towards their primary"""
        seen, unseen = self.world.attributes[:40], self.world.attributes[40:]
        distances = np.linalg.norm(unseen[:, None, :] - seen[None, :, :], axis=2)
        primary = distances[np.arange(20), self.world.primaries]
        # w >= 0.6 and unit seen attributes: at most 0.4 * 2 from the primary
        self.assertTrue(np.all(primary <= 0.8 + 1e-12))

    def test_noise_free_outputs(self):
        """Test noise free outputs"""
        spec = ZeroShotWorldSpec(n_seen=6, n_unseen=2, noise=0.0, train_per_class=5, test_per_class=3, seed=4)
        world = generate_zeroshot_world(spec)
        for j in range(6):
            rows = world.train_logits[world.train_labels == j]
            np.testing.assert_array_equal(rows, np.repeat(rows[:1], 5, axis=0))
        again = generate_zeroshot_world(spec)
        np.testing.assert_array_equal(again.train_logits, world.train_logits)

    def test_write(self):
        """Test writing a zero-shot world directory with its run file"""
        with tempfile.TemporaryDirectory() as tmp:
            directory = write_zeroshot_world(self.world, Path(tmp) / 'world')
            cfg = RunConfig.load(str(directory / 'run.cfg'))
            self.assertEqual(read_matrix(directory / 'train.mat').shape, (4000, 40))
            self.assertEqual(read_labels(cfg.labels).shape, (1200,))
            self.assertTrue(Path(cfg.taxonomy).exists())


class PlotDataTest(SimpleTestCase):
    """Test cases for plot data tables"""

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)
        self.features = np.random.default_rng(5).normal(size=(20, 7))

    def tearDown(self):
        self._tmp.cleanup()

    def test_embedding_scatter(self):
        """Test embedding scatter"""
        emit_plot_data('embedding-scatter', self.tmp / 's.csv', features=self.features, components=(2, 5))
        rows = read_table(self.tmp / 's.csv')
        self.assertEqual(len(rows), 7)
        self.assertEqual(list(rows[0]), ['class', 'label', 'component_2', 'component_5'])
        self.assertEqual(float(rows[3]['component_5']), self.features[5, 3])

    def test_component_bars(self):
        """Test component bars"""
        emit_plot_data('component-bars', self.tmp / 'b.csv', features=self.features, classes=[0, 4, 6])
        rows = read_table(self.tmp / 'b.csv')
        grid = np.array([[float(row[f'component_{r}']) for r in range(20)] for row in rows])
        np.testing.assert_array_equal(grid, self.features[:, [0, 4, 6]].T)

    def test_kurtosis_hist(self):
        """Test kurtosis hist"""
        report = kurtosis_per_class(np.random.default_rng(6).laplace(size=(1000, 4)))
        emit_plot_data('kurtosis-hist', self.tmp / 'k.csv', report=report)
        self.assertEqual(len(read_table(self.tmp / 'k.csv')), 4)

    def test_unknown_kind(self):
        """Test unknown kind"""
        with self.assertRaisesMessage(ConfigError, 'Unknown plot kind'):
            emit_plot_data('pie', self.tmp / 'p.csv', features=self.features)


class ExitCodeTest(SimpleTestCase):
    """Usage errors exit 1, data and validation errors exit 2"""

    def _run(self, app, name, *argv):
        with redirect_stderr(io.StringIO()):
            command = load_command_class(app, name)
            with self.assertRaises(SystemExit) as raised:
                command.run_from_argv(['manage.py', name, *argv])
        return raised.exception.code

    def test_usage_error(self):
        """Test usage error"""
        self.assertEqual(self._run('services.zeroshot', 'predict', '--no-such-flag'), 1)

    def test_data_error(self):
        """Test data error"""
        with tempfile.TemporaryDirectory() as tmp:
            code = self._run('services.zeroshot', 'predict', '--index', str(Path(tmp) / 'missing'),
                             '--input', str(Path(tmp) / 'x.mat'), '--output', str(Path(tmp) / 'p.csv'))
        self.assertEqual(code, 2)

    def test_config_error(self):
        """Test config error"""
        with tempfile.TemporaryDirectory() as tmp:
            cfg = Path(tmp) / 'bad.cfg'
            cfg.write_text('TEMPERATURE=-1\n')
            self.assertEqual(self._run('core', 'synth_ica', '--output', tmp, '--config', str(cfg)), 2)


class PipelineDeterminismTest(SimpleTestCase):
    """Two command-line runs from one config produce identical files"""

    def _run(self, root: Path):
        world = root / 'world'
        call_command('synth_world', '--output', str(world), '--seen', '12', '--unseen', '4',
                     '--train-per-class', '30', '--test-per-class', '5', seed=3, verbosity=0)
        cfg = str(world / 'run.cfg')
        common = {'run_config': cfg, 'threads': 1, 'verbosity': 0}
        call_command('pca', '--input', str(world / 'train.mat'), '--output', str(root / 'pca'),
                     '--transform', 'normalized-logits', '--dim', '6', **common)
        call_command('ica', '--input', str(world / 'train.mat'), '--whitening', str(root / 'pca'),
                     '--output', str(root / 'ica'), '--transform', 'normalized-logits', '--epochs', '3',
                     '--batch-size', '50', **common)
        call_command('mds', '--output', str(root / 'emb'), **common)
        call_command('cca', '--features', str(root / 'ica'), '--embedding', str(root / 'emb'),
                     '--output', str(root / 'cca'), '--class-means', '--outputs', str(world / 'train.mat'),
                     '--labels', str(world / 'train.labels'), '--transform', 'softmax', **common)
        call_command('index', '--cca', str(root / 'cca'), '--embedding', str(root / 'emb'),
                     '--output', str(root / 'index'), **common)
        call_command('evaluate', '--index', str(root / 'index'), '--transform', 'softmax',
                     '--output', str(root / 'results.csv'), **common)

    def test_bitwise_reproducible(self):
        """Test bitwise reproducible"""
        with tempfile.TemporaryDirectory() as first, tempfile.TemporaryDirectory() as second:
            first, second = Path(first), Path(second)
            self._run(first)
            self._run(second)
            for stage in ('pca', 'ica', 'emb', 'cca', 'index'):
                files = sorted(p.name for p in (first / stage).glob('*.mat'))
                self.assertTrue(files)
                for name in files:
                    self.assertEqual((first / stage / name).read_bytes(), (second / stage / name).read_bytes(),
                                     f"{stage}/{name} differs")
            self.assertEqual((first / 'results.csv').read_text(), (second / 'results.csv').read_text())
            self.assertEqual(len(read_table(first / 'results.csv')), 3 * 5)


class EndToEndZeroShotTest(SimpleTestCase):
    """40 seen / 20 unseen classes, d = 16, class-mean and one-hot visual features"""

    d = 16

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        world = generate_zeroshot_world(ZeroShotWorldSpec())
        train = normalized_logits(world.train_logits)
        whitening = fit_whitening_matrix(train, d=cls.d, transform_tag=NORMALIZED_LOGITS)
        embedding = classical_mds(
            distance_matrix(build_graph(world.edges), world.registry), 1000, n_seen=40, registry=world.registry,
        )
        W2c, W3c, _ = center_semantic(embedding.seen, embedding.unseen)
        means = class_mean_matrix(softmax(world.train_logits), world.train_labels, 40)

        seen_X, seen_labels = world.seen_test()
        unseen_X, unseen_labels = world.unseen_test()

        def accuracy(features, class_means):
            F, _ = visual_class_matrix(features, class_means)
            index = build_index(fit_cca(F, W2c), features, W2c, W3c, world.registry)
            return (
                topk_accuracy(softmax(seen_X), seen_labels, index, [1], 'seen').accuracy('seen', 1),
                topk_accuracy(softmax(unseen_X), unseen_labels, index, [1], 'unseen').accuracy('unseen', 1),
            )

        pca = pca_features(whitening)
        ica = ica_features(train_ica(train, whitening, IcaConfig(d=cls.d, seed=0)))
        random = [random_features(cls.d, 40, seed) for seed in range(3)]
        cls.pca, cls.ica = accuracy(pca, means), accuracy(ica, means)
        cls.random = [accuracy(features, means) for features in random]
        # M = I: each class is represented by its one-hot output vector
        cls.identity = {
            'pca': accuracy(pca, None),
            'ica': accuracy(ica, None),
            'random': [accuracy(features, None) for features in random],
        }

    def test_seen_classes(self):
        """Test seen classes"""
        self.assertGreaterEqual(self.pca[0], 0.9)

    def test_unseen_classes_well_above_chance(self):
        """Test unseen classes well above chance"""
        self.assertGreaterEqual(self.pca[1], 0.25)
        self.assertGreaterEqual(self.ica[1], 0.25)

    def test_learned_features_beat_random(self):
        """Test learned features beat random"""
        baseline = np.mean([unseen for _, unseen in self.random])
        self.assertGreater(self.pca[1], baseline)
        self.assertGreater(self.ica[1], baseline)

    def test_one_hot_class_summaries(self):
        """Test the pipeline with one-hot class summaries in place of class means"""
        pca, ica = self.identity['pca'], self.identity['ica']
        baseline = np.mean([unseen for _, unseen in self.identity['random']])
        self.assertGreaterEqual(pca[0], 0.5)
        self.assertGreaterEqual(pca[1], 0.15)
        self.assertGreaterEqual(ica[1], 0.15)
        self.assertGreater(pca[1], baseline)
        self.assertGreater(ica[1], baseline)


class CoreCommandTest(SimpleTestCase):
    """Test cases for synth_ica, synth_world and plotdata"""

    def test_synth_ica_and_kurtosis_plot(self):
        """Test synth ica and kurtosis plot"""
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            call_command('synth_ica', '--output', str(tmp / 'ica'), '--sources', '3', '--samples', '500',
                         seed=1, verbosity=0)
            self.assertEqual(read_matrix(tmp / 'ica' / 'data.mat').shape, (500, 3))
            self.assertEqual(read_matrix(tmp / 'ica' / 'mixing.mat').shape, (3, 3))
            call_command('plotdata', '--kind', 'kurtosis-hist', '--input', str(tmp / 'ica' / 'data.mat'),
                         '--output', str(tmp / 'k.csv'), verbosity=0)
            self.assertEqual(len(read_table(tmp / 'k.csv')), 3)

    def test_scatter_from_whitening_model(self):
        """Test scatter from whitening model"""
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            call_command('synth_world', '--output', str(tmp / 'world'), '--seen', '6', '--unseen', '2',
                         '--train-per-class', '20', '--test-per-class', '2', verbosity=0)
            call_command('pca', '--input', str(tmp / 'world' / 'train.mat'), '--output', str(tmp / 'pca'),
                         '--transform', 'softmax', '--dim', '3', verbosity=0)
            call_command('plotdata', '--kind', 'embedding-scatter', '--features', str(tmp / 'pca'),
                         '--registry', str(tmp / 'world' / 'registry.tsv'), '--output', str(tmp / 's.csv'),
                         verbosity=0)
            rows = read_table(tmp / 's.csv')
        self.assertEqual(len(rows), 6)
        self.assertEqual(rows[0]['label'], 'seen-0')

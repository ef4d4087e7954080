import dataclasses
import tempfile
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from core.exceptions import DegenerateInputError, DimensionMismatchError, EmptyInputError, GraphError
from core.services.matrix_io import read_table, write_labels, write_matrix, write_metadata
from services.bridge.services import center_semantic, fit_cca, random_semi_orthogonal, visual_class_matrix
from services.distributions.services import softmax
from services.ica.models import IcaConfig
from services.ica.services import train_ica
from services.taxonomy.services import (
    build_graph,
    classical_mds,
    distance_matrix,
    make_registry,
    save_embedding,
    write_registry,
    write_taxonomy,
)
from services.whitening.services import fit_whitening_matrix, save_whitening
from .models import ZeroShotIndex
from .services import (
    ZeroShotService,
    build_index,
    dominant_component,
    load_index,
    nearest_classes_semantic,
    nearest_classes_visual,
    pool_labels,
    predict,
    predict_many,
    rank_classes_by_component,
    save_index,
    topk_accuracy,
    true_class_ranks,
)


def _toy_index(seen, unseen=None, visual_mean=None):
    """Index with W1 = P1 = I, so the query is the L1-normalized output vector"""
    seen = np.asarray(seen, dtype=np.float64)
    c = seen.shape[0]
    unseen = np.zeros((c, 0)) if unseen is None else np.asarray(unseen, dtype=np.float64)
    n, m = seen.shape[1], unseen.shape[1]
    seen_norms, unseen_norms = np.linalg.norm(seen, axis=0), np.linalg.norm(unseen, axis=0)
    return ZeroShotIndex(
        W1=np.eye(c),
        P1=np.eye(c),
        visual_mean=np.zeros(c) if visual_mean is None else np.asarray(visual_mean, dtype=np.float64),
        seen=seen / seen_norms,
        unseen=unseen / unseen_norms if m else unseen,
        seen_norms=seen_norms,
        unseen_norms=unseen_norms,
        seen_ids=np.arange(n),
        unseen_ids=np.arange(n, n + m),
        n_seen_classes=n,
    )


def _random_problem(seed, n=12, m=4, d=4, s=6):
    """CCA fitted on random semi-orthogonal W1 and random semantic features"""
    rng = np.random.default_rng(seed)
    W1 = random_semi_orthogonal(d, n, seed)
    F, _ = visual_class_matrix(W1)
    W2c, W3c, _ = center_semantic(rng.normal(size=(s, n)), rng.normal(size=(s, m)))
    return fit_cca(F, W2c), W1, W2c, W3c


def _block_demixing():
    """Demixing matrix of 9 outputs driven in blocks of 3 by 3 Laplace sources, rows sign-fixed"""
    rng = np.random.default_rng(21)
    mixing = np.zeros((9, 3))
    for block in range(3):
        mixing[3 * block:3 * block + 3, block] = [1.0, 0.8, 0.6]
    sources = rng.laplace(scale=1 / np.sqrt(2), size=(20_000, 3))
    X = sources @ mixing.T + 1e-3 * rng.normal(size=(20_000, 9))
    model = train_ica(
        X, fit_whitening_matrix(X, d=3), IcaConfig(d=3, batch_size=100, lr0=0.05, epochs=20, seed=0),
    )
    W = model.W
    return W * np.sign(W[np.arange(3), np.abs(W).argmax(axis=1)])[:, None]


class BuildIndexTest(SimpleTestCase):
    """Test cases for the precomputed class columns"""

    def test_unit_columns_and_stored_norms(self):
        """Test unit columns and stored norms"""
        cca, W1, W2c, W3c = _random_problem(0)
        index = build_index(cca, W1, W2c, W3c)
        np.testing.assert_allclose(np.linalg.norm(index.seen, axis=0), 1.0, atol=1e-12)
        np.testing.assert_allclose(np.linalg.norm(index.unseen, axis=0), 1.0, atol=1e-12)
        np.testing.assert_allclose(index.seen_norms, np.linalg.norm(cca.P2.T @ W2c, axis=0))
        np.testing.assert_array_equal(index.seen_ids, np.arange(12))
        np.testing.assert_array_equal(index.unseen_ids, np.arange(12, 16))

    def test_no_unseen_classes(self):
        """Test no unseen classes"""
        cca, W1, W2c, _ = _random_problem(1)
        index = build_index(cca, W1, W2c)
        self.assertEqual(index.pool_size('unseen'), 0)
        self.assertEqual(len(predict(np.full(12, 1 / 12), index, 3, pool='unseen')), 0)

    def test_deterministic(self):
        """Test deterministic"""
        cca, W1, W2c, W3c = _random_problem(2)
        first, second = build_index(cca, W1, W2c, W3c), build_index(cca, W1, W2c, W3c)
        np.testing.assert_array_equal(first.seen, second.seen)
        np.testing.assert_array_equal(first.unseen, second.unseen)

    def test_zero_norm_column_excluded(self):
        """Test zero norm column excluded"""
        cca, W1, W2c, W3c = _random_problem(3)
        W3c[:, 1] = 0.0
        with self.assertLogs('services.zeroshot.services', level='WARNING'):
            index = build_index(cca, W1, W2c, W3c)
        self.assertEqual(index.excluded, (13,))
        np.testing.assert_array_equal(index.unseen_ids, [12, 14, 15])

    def test_every_class_excluded(self):
        """Test every class excluded"""
        cca, W1, W2c, _ = _random_problem(4)
        with self.assertLogs('services.zeroshot.services', level='WARNING'):
            with self.assertRaises(DegenerateInputError):
                build_index(cca, W1, np.zeros_like(W2c))

    def test_shape_checks(self):
        """Test shape checks"""
        cca, W1, W2c, W3c = _random_problem(5)
        with self.assertRaises(DimensionMismatchError):
            build_index(cca, W1[:3], W2c, W3c)
        with self.assertRaises(DimensionMismatchError):
            build_index(cca, W1, W2c[:3], W3c)
        registry = make_registry([f'c{i}' for i in range(12)], ['u0'])
        with self.assertRaises(DimensionMismatchError):
            build_index(cca, W1, W2c, W3c, registry)


class PredictTest(SimpleTestCase):
    """Test cases for cosine ranking of one pool"""

    def setUp(self):
        self.index = _toy_index(np.eye(3), [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])

    def test_ranks_by_cosine(self):
        """Test ranks by cosine"""
        prediction = predict(np.array([0.7, 0.2, 0.1]), self.index, 2, pool='seen')
        np.testing.assert_array_equal(prediction.class_ids, [0, 1])
        self.assertEqual(prediction.pool, 'seen')
        self.assertEqual(prediction.top(), 0)

    def test_full_ranking_when_top_k_exceeds_pool(self):
        """Test full ranking when top k exceeds pool"""
        prediction = predict(np.array([0.2, 0.3, 0.5]), self.index, 10, pool='seen')
        np.testing.assert_array_equal(prediction.class_ids, [2, 1, 0])
        self.assertTrue(np.all(np.diff(prediction.scores) <= 0))
        self.assertTrue(np.all(np.abs(prediction.scores) <= 1.0))

    def test_orthogonal_query_ties_by_index(self):
        """Test orthogonal query ties by index"""
        index = _toy_index(np.eye(3), [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
        prediction = predict(np.array([1.0, 0.0, 0.0]), index, 2, pool='unseen')
        np.testing.assert_array_equal(prediction.scores, [0.0, 0.0])
        np.testing.assert_array_equal(prediction.class_ids, [3, 4])

    def test_both_pool_merges_rankings(self):
        """Test both pool merges rankings"""
        cca, W1, W2c, W3c = _random_problem(6)
        index = build_index(cca, W1, W2c, W3c)
        x = softmax(np.random.default_rng(7).normal(size=12))
        both = predict(x, index, 100, pool='both')
        seen, unseen = predict(x, index, 100, pool='seen'), predict(x, index, 100, pool='unseen')
        merged = sorted(
            zip(np.concatenate([seen.class_ids, unseen.class_ids]), np.concatenate([seen.scores, unseen.scores])),
            key=lambda pair: (-pair[1], pair[0]),
        )
        np.testing.assert_array_equal(both.class_ids, [class_id for class_id, _ in merged])
        np.testing.assert_allclose(both.scores, [score for _, score in merged], atol=1e-12)

    def test_invariant_to_positive_rescaling(self):
        """Test invariant to positive rescaling"""
        cca, W1, W2c, W3c = _random_problem(8)
        x = softmax(np.random.default_rng(9).normal(size=12))
        reference = predict(x, build_index(cca, W1, W2c, W3c), 16, pool='both')
        scaled = W3c * np.array([1.0, 5.0, 0.5, 2.0])
        rescaled = predict(3.0 * x, build_index(cca, W1, W2c * 7.0, scaled), 16, pool='both')
        np.testing.assert_array_equal(rescaled.class_ids, reference.class_ids)
        np.testing.assert_allclose(rescaled.scores, reference.scores, atol=1e-12)

    def test_zero_query(self):
        """Test zero query"""
        index = _toy_index(np.eye(3), visual_mean=[1 / 3, 1 / 3, 1 / 3])
        with self.assertRaisesMessage(DegenerateInputError, 'projects to zero'):
            predict(np.ones(3), index, 1, pool='seen')

    def test_zero_output_vector(self):
        """Test zero output vector"""
        with self.assertRaisesMessage(DegenerateInputError, 'zero L1 norm'):
            predict(np.zeros(3), self.index, 1, pool='seen')

    def test_argument_checks(self):
        """Test argument checks"""
        with self.assertRaises(DegenerateInputError):
            predict(np.ones(3), self.index, 0)
        with self.assertRaises(DimensionMismatchError):
            predict(np.ones(4), self.index, 1)
        with self.assertRaises(DegenerateInputError):
            predict(np.ones(3), self.index, 1, pool='everything')

    def test_predict_many_matches_predict(self):
        """Test predict many matches predict"""
        X = np.random.default_rng(10).dirichlet(np.ones(3), size=5)
        for x, prediction in zip(X, predict_many(X, self.index, 2, pool='both')):
            single = predict(x, self.index, 2, pool='both')
            np.testing.assert_array_equal(prediction.class_ids, single.class_ids)
            np.testing.assert_allclose(prediction.scores, single.scores, atol=1e-15)

    def test_permuting_components_leaves_predictions_unchanged(self):
        """Test permuting components leaves predictions unchanged"""
        cca, W1, W2c, W3c = _random_problem(11)
        permutation = np.array([2, 0, 3, 1])
        F, _ = visual_class_matrix(W1[permutation])
        permuted = build_index(fit_cca(F, W2c), W1[permutation], W2c, W3c)
        X = softmax(np.random.default_rng(12).normal(size=(20, 12)))
        original = predict_many(X, build_index(cca, W1, W2c, W3c), 16, pool='both')
        for a, b in zip(original, predict_many(X, permuted, 16, pool='both')):
            np.testing.assert_array_equal(a.class_ids, b.class_ids)
            np.testing.assert_allclose(a.scores, b.scores, atol=1e-9)


class TopkAccuracyTest(SimpleTestCase):
    """Test cases for flat hit@k"""

    def test_perfect_predictor(self):
        """Test perfect predictor"""
        index = _toy_index(np.eye(3))
        result = topk_accuracy(np.eye(3), [0, 1, 2], index, [1, 2, 3], pool='seen')
        self.assertEqual(result.accuracies('seen'), [1.0, 1.0, 1.0])

    def test_monotone_and_exhaustive(self):
        """Test monotone and exhaustive"""
        cca, W1, W2c, W3c = _random_problem(13)
        index = build_index(cca, W1, W2c, W3c)
        rng = np.random.default_rng(14)
        X = softmax(rng.normal(size=(300, 12)))
        labels = rng.integers(0, 16, size=300)
        result = topk_accuracy(X, labels, index, [5, 1, 16, 2], pool='both')
        accuracies = result.accuracies('both')
        self.assertEqual([row.k for row in result.rows], [1, 2, 5, 16])
        self.assertTrue(all(a <= b for a, b in zip(accuracies, accuracies[1:])))
        self.assertEqual(result.accuracy('both', 16), 1.0)

    def test_chance_level_with_random_features(self):
        """Test chance level with random features"""
        n, m, samples = 20, 10, 3000
        cca, W1, W2c, W3c = _random_problem(15, n=n, m=m, d=5, s=6)
        index = build_index(cca, W1, W2c, W3c)
        rng = np.random.default_rng(16)
        X = softmax(rng.normal(size=(samples, n)))
        labels = rng.integers(n, n + m, size=samples)
        result = topk_accuracy(X, labels, index, [1, 2, 5], pool='unseen')
        for k in (1, 2, 5):
            p = k / m
            sigma = np.sqrt(p * (1 - p) / samples)
            self.assertLessEqual(abs(result.accuracy('unseen', k) - p), 3 * sigma)

    def test_threads_give_same_result(self):
        """Test threads give same result"""
        cca, W1, W2c, W3c = _random_problem(17)
        index = build_index(cca, W1, W2c, W3c)
        rng = np.random.default_rng(18)
        X = softmax(rng.normal(size=(9000, 12)))
        labels = rng.integers(0, 12, size=9000)
        single = topk_accuracy(X, labels, index, [1, 3], pool='seen', threads=1)
        threaded = topk_accuracy(X, labels, index, [1, 3], pool='seen', threads=3)
        self.assertEqual(single.rows, threaded.rows)

    def test_excluded_class_never_hit(self):
        """Test excluded class never hit"""
        cca, W1, W2c, W3c = _random_problem(19)
        W3c[:, 0] = 0.0
        with self.assertLogs('services.zeroshot.services', level='WARNING'):
            index = build_index(cca, W1, W2c, W3c)
        X = softmax(np.random.default_rng(20).normal(size=(4, 12)))
        result = topk_accuracy(X, [12, 12, 13, 14], index, [3], pool='unseen')
        self.assertEqual(result.rows[0].hits, 2)
        self.assertEqual(true_class_ranks(X[:1], [12], index, 'unseen')[0], np.iinfo(np.int64).max)

    def test_errors(self):
        """Test hit@k argument errors"""
        index = _toy_index(np.eye(3), [[1.0], [0.0], [0.0]])
        with self.assertRaises(EmptyInputError):
            topk_accuracy(np.zeros((0, 3)), [], index, [1])
        with self.assertRaisesMessage(DegenerateInputError, 'not in the unseen pool'):
            topk_accuracy(np.eye(3), [3, 0, 3], index, [1], pool='unseen')
        with self.assertRaises(DimensionMismatchError):
            topk_accuracy(np.eye(3), [3, 3], index, [1], pool='unseen')
        with self.assertRaises(DegenerateInputError):
            topk_accuracy(np.eye(3), [3, 3, 3], index, [0], pool='unseen')

    def test_pool_labels(self):
        """Test pool labels"""
        index = _toy_index(np.eye(3), [[1.0], [0.0], [0.0]])
        labels = [0, 3, 2, 3]
        np.testing.assert_array_equal(pool_labels(labels, index, 'seen'), [True, False, True, False])
        np.testing.assert_array_equal(pool_labels(labels, index, 'unseen'), [False, True, False, True])
        self.assertTrue(pool_labels(labels, index, 'both').all())


class ComponentRankingTest(SimpleTestCase):
    """Test cases for ranking classes by a single component"""

    def test_one_hot_row(self):
        """Test one hot row"""
        features = np.zeros((2, 5))
        features[1, 3] = 1.0
        self.assertEqual(rank_classes_by_component(features, 1, 1), [(3, 1.0)])

    def test_distinct_values_sorted(self):
        """Test distinct values sorted"""
        features = np.array([[0.3, -0.2, 0.9, 0.1]])
        ranking = rank_classes_by_component(features, 0)
        self.assertEqual([i for i, _ in ranking], [2, 0, 3, 1])

    def test_ties_by_index(self):
        """Test ties by index"""
        ranking = rank_classes_by_component(np.array([[0.5, 0.5, 0.5]]), 0)
        self.assertEqual([i for i, _ in ranking], [0, 1, 2])

    def test_out_of_range(self):
        """Test out of range"""
        with self.assertRaises(DimensionMismatchError):
            rank_classes_by_component(np.eye(3), 3)
        with self.assertRaises(DimensionMismatchError):
            dominant_component(np.eye(3), -1)

    def test_dominant_component(self):
        """Test dominant component"""
        features = np.array([[0.1, 0.7], [0.9, 0.2]])
        self.assertEqual(dominant_component(features, 0), 1)
        self.assertEqual(dominant_component(features, 1), 0)

    def test_block_structured_outputs(self):
        """Test that components, dominant components and neighbours follow the output blocks"""
        W = _block_demixing()

        for component in range(3):
            blocks = {i // 3 for i, _ in rank_classes_by_component(W, component, 3)}
            self.assertEqual(len(blocks), 1)
        for block in range(3):
            dominant = {dominant_component(W, 3 * block + i) for i in range(3)}
            self.assertEqual(len(dominant), 1)
            neighbours = {i for i, _ in nearest_classes_visual(3 * block, W, top=2)}
            self.assertEqual(neighbours, {3 * block + 1, 3 * block + 2})

    def test_positive_row_scaling(self):
        """
        Test rescaling the demixing rows by a positive diagonal D.

        Per-component rankings are invariant to D. Cosine neighbours are exactly
        invariant to positive column scaling only; under D their scores move but
        the block neighbourhoods stay.
        """
        W = _block_demixing()
        D = np.diag([0.5, 3.0, 1.7])
        for component in range(3):
            self.assertEqual(
                [i for i, _ in rank_classes_by_component(D @ W, component)],
                [i for i, _ in rank_classes_by_component(W, component)],
            )
        for block in range(3):
            neighbours = {i for i, _ in nearest_classes_visual(3 * block, D @ W, top=2)}
            self.assertEqual(neighbours, {3 * block + 1, 3 * block + 2})

        columns = W * np.linspace(0.5, 2.5, 9)
        for class_index in range(9):
            scaled = nearest_classes_visual(class_index, columns)
            expected = nearest_classes_visual(class_index, W)
            self.assertEqual([i for i, _ in scaled], [i for i, _ in expected])
            np.testing.assert_allclose([s for _, s in scaled], [s for _, s in expected], atol=1e-12)


class NearestClassesTest(SimpleTestCase):
    """Test cases for visual and semantic neighbour lists"""

    def test_duplicate_column_first(self):
        """Test duplicate column first"""
        features = np.array([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 1.0]])
        neighbours = nearest_classes_visual(0, features)
        self.assertEqual([i for i, _ in neighbours], [1, 2])
        self.assertAlmostEqual(neighbours[0][1], 1.0, places=12)
        self.assertEqual(neighbours[1][1], 0.0)

    def test_zero_column(self):
        """Test zero column"""
        with self.assertRaises(DegenerateInputError):
            nearest_classes_visual(1, np.array([[1.0, 0.0], [0.0, 0.0]]))

    def _tree(self):
        edges = [('root', 'a'), ('root', 'b'), ('a', 'x'), ('a', 'y'), ('b', 'z')]
        return build_graph(edges), make_registry(['x', 'y', 'z'], [])

    def test_siblings_before_cousins(self):
        """Test siblings before cousins"""
        taxonomy, registry = self._tree()
        neighbours = nearest_classes_semantic(0, taxonomy, registry)
        self.assertEqual(neighbours, [(1, 1 / 3), (2, 1 / 5)])

    def test_candidates_and_top(self):
        """Test candidates and top"""
        taxonomy, registry = self._tree()
        self.assertEqual(nearest_classes_semantic(2, taxonomy, registry, top=1), [(0, 1 / 5)])
        self.assertEqual(nearest_classes_semantic(0, taxonomy, registry, candidates=[0, 2]), [(2, 1 / 5)])

    def test_star_graph_ties_by_index(self):
        """Test star graph ties by index"""
        taxonomy = build_graph([('hub', f'leaf{i}') for i in range(4)])
        registry = make_registry([f'leaf{i}' for i in range(4)], [])
        neighbours = nearest_classes_semantic(2, taxonomy, registry)
        self.assertEqual([i for i, _ in neighbours], [0, 1, 3])
        self.assertTrue(all(score == 1 / 3 for _, score in neighbours))

    def test_unknown_class(self):
        """Test unknown class"""
        taxonomy, registry = self._tree()
        with self.assertRaises(GraphError):
            nearest_classes_semantic(7, taxonomy, registry)


class IndexStoreTest(SimpleTestCase):
    """Test cases for index storage"""

    def test_save_and_load(self):
        """Test save and load"""
        cca, W1, W2c, W3c = _random_problem(22)
        registry = make_registry([f'c{i}' for i in range(12)], [f'u{i}' for i in range(4)])
        index = build_index(cca, W1, W2c, W3c, registry, transform_tag='softmax(T=1.0)')
        X = softmax(np.random.default_rng(23).normal(size=(6, 12)))
        with tempfile.TemporaryDirectory() as tmp:
            save_index(index, Path(tmp) / 'index')
            loaded = load_index(Path(tmp) / 'index')
        for a, b in zip(predict_many(X, index, 5, 'both'), predict_many(X, loaded, 5, 'both')):
            np.testing.assert_array_equal(a.class_ids, b.class_ids)
            np.testing.assert_array_equal(a.scores, b.scores)
        self.assertEqual(loaded.registry.nodes, registry.nodes)
        self.assertEqual(loaded.n_seen_classes, 12)
        self.assertEqual(loaded.transform_tag, 'softmax(T=1.0)')
        self.assertEqual(loaded.class_name(13), 'u1')


class ZeroShotCommandTest(SimpleTestCase):
    """Test cases for the index, predict, evaluate, rank and neighbors commands"""

    n_seen = 8

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        tmp = self.tmp = Path(self._tmp.name)
        rng = np.random.default_rng(24)
        n = self.n_seen
        edges = [('root', f'g{i}') for i in range(3)] + [(f'g{i % 3}', f'c{i}') for i in range(n + 2)]
        registry = make_registry([f'c{i}' for i in range(n)], [f'c{n}', f'c{n + 1}'])
        write_taxonomy(edges, tmp / 'taxonomy.tsv')
        write_registry(registry, tmp / 'registry.tsv')
        embedding = classical_mds(distance_matrix(build_graph(edges), registry), 20, n_seen=n, registry=registry)
        save_embedding(embedding, tmp / 'emb')

        outputs = rng.dirichlet(np.ones(n), size=300)
        write_matrix(outputs, tmp / 'probs.mat')
        write_metadata(tmp / 'probs.mat', {'transform': 'softmax(T=1.0)'})
        write_labels(np.arange(300) % (n + 2), tmp / 'labels.txt')
        save_whitening(fit_whitening_matrix(outputs, d=3), tmp / 'pca')
        call_command('cca', '--features', str(tmp / 'pca'), '--embedding', str(tmp / 'emb'),
                     '--output', str(tmp / 'cca'), verbosity=0)
        call_command('index', '--cca', str(tmp / 'cca'), '--embedding', str(tmp / 'emb'),
                     '--output', str(tmp / 'index'), verbosity=0)

    def tearDown(self):
        self._tmp.cleanup()

    def test_index(self):
        """Test the index command"""
        index = load_index(self.tmp / 'index')
        self.assertEqual(index.c, 3)
        self.assertEqual((len(index.seen_ids), len(index.unseen_ids)), (self.n_seen, 2))
        self.assertEqual(index.feature_tag, 'pca')
        self.assertEqual(index.class_name(self.n_seen), f'c{self.n_seen}')

    def test_predict(self):
        """Test the predict command"""
        call_command('predict', '--index', str(self.tmp / 'index'), '--input', str(self.tmp / 'probs.mat'),
                     '--output', str(self.tmp / 'pred.csv'), '--pool', 'both', '--top-k', '3', verbosity=0)
        rows = read_table(self.tmp / 'pred.csv')
        self.assertEqual(len(rows), 300 * 3)
        self.assertEqual(list(rows[0]), ['row', 'rank', 'class', 'name', 'score', 'pool'])
        self.assertEqual([row['rank'] for row in rows[:3]], ['1', '2', '3'])
        scores = [float(row['score']) for row in rows[:3]]
        self.assertEqual(scores, sorted(scores, reverse=True))

    def test_evaluate(self):
        """Test the evaluate command"""
        call_command('evaluate', '--index', str(self.tmp / 'index'), '--input', str(self.tmp / 'probs.mat'),
                     '--labels', str(self.tmp / 'labels.txt'), '--output', str(self.tmp / 'results.csv'),
                     '--k', '1', '10', verbosity=0)
        rows = read_table(self.tmp / 'results.csv')
        self.assertEqual([(row['pool'], row['k']) for row in rows],
                         [('seen', '1'), ('seen', '10'), ('unseen', '1'), ('unseen', '10'), ('both', '1'), ('both', '10')])
        self.assertTrue(all(float(row['accuracy']) == 1.0 for row in rows if row['k'] == '10'))
        self.assertEqual(sum(int(row['total']) for row in rows if row['k'] == '1' and row['pool'] != 'both'), 300)

    def test_evaluate_several_indices(self):
        """Test evaluate several indices"""
        call_command('evaluate', '--index', str(self.tmp / 'index'), str(self.tmp / 'index'),
                     '--input', str(self.tmp / 'probs.mat'), '--labels', str(self.tmp / 'labels.txt'),
                     '--output', str(self.tmp / 'results.csv'), '--pool', 'unseen', '--k', '1', verbosity=0)
        rows = read_table(self.tmp / 'results.csv')
        self.assertEqual(len(rows), 2)
        self.assertEqual(rows[0]['index'], 'index')

    def test_rank_and_neighbors(self):
        """Test rank and neighbors"""
        call_command('rank', '--component', '0', '--features', str(self.tmp / 'pca'),
                     '--registry', str(self.tmp / 'registry.tsv'), '--top', '3',
                     '--output', str(self.tmp / 'rank.csv'), verbosity=0)
        self.assertEqual(len(read_table(self.tmp / 'rank.csv')), 3)

        with tempfile.TemporaryFile('w+') as out:
            call_command('neighbors', '--class', 'c0', '--features', str(self.tmp / 'pca'),
                         '--taxonomy', str(self.tmp / 'taxonomy.tsv'), '--registry', str(self.tmp / 'registry.tsv'),
                         '--top', '2', stdout=out)
            out.seek(0)
            text = out.read()
        self.assertIn('Nearest classes to c0', text)
        self.assertIn('c3', text)

    def test_dimension_mismatch_fails(self):
        """Test dimension mismatch fails"""
        write_matrix(np.full((2, 5), 0.2), self.tmp / 'wrong.mat')
        with self.assertRaises(CommandError):
            call_command('predict', '--index', str(self.tmp / 'index'), '--input', str(self.tmp / 'wrong.mat'),
                         '--output', str(self.tmp / 'pred.csv'), verbosity=0)

    def _evaluate(self, name, *flags):
        call_command('evaluate', '--index', str(self.tmp / 'index'), '--input', str(self.tmp / name),
                     '--labels', str(self.tmp / 'labels.txt'), '--output', str(self.tmp / 'results.csv'),
                     '--k', '1', '3', *flags, verbosity=0)
        return read_table(self.tmp / 'results.csv')

    def _predict(self, name, *flags):
        call_command('predict', '--index', str(self.tmp / 'index'), '--input', str(self.tmp / name),
                     '--output', str(self.tmp / 'pred.csv'), '--pool', 'both', '--top-k', '3', *flags, verbosity=0)
        return read_table(self.tmp / 'pred.csv')

    def test_index_records_query_transform(self):
        """Test that the index carries the QUERY_TRANSFORM tag its queries are expected in"""
        self.assertEqual(load_index(self.tmp / 'index').transform_tag, 'softmax(T=1.0)')

    def test_evaluate_softmaxes_raw_logits_by_default(self):
        """Test that evaluate without --transform applies softmax to untagged logits"""
        logits = np.random.default_rng(25).normal(scale=3.0, size=(300, self.n_seen))
        write_matrix(logits, self.tmp / 'logits.mat')
        default = self._evaluate('logits.mat')
        explicit = self._evaluate('logits.mat', '--transform', 'softmax')
        self.assertEqual(default, explicit)

    def test_predict_softmaxes_raw_logits_by_default(self):
        """Test that predict without --transform applies softmax to untagged logits"""
        logits = np.random.default_rng(26).normal(scale=3.0, size=(300, self.n_seen))
        write_matrix(logits, self.tmp / 'logits.mat')
        default = self._predict('logits.mat')
        explicit = self._predict('logits.mat', '--transform', 'softmax')
        self.assertEqual(default, explicit)

    def test_tagged_outputs_are_used_as_they_are(self):
        """Test that outputs with a softmax sidecar are not transformed a second time"""
        self.assertEqual(self._evaluate('probs.mat'), self._evaluate('probs.mat', '--transform', 'none'))
        self.assertEqual(self._predict('probs.mat'), self._predict('probs.mat', '--transform', 'none'))


class ZeroShotServiceTest(SimpleTestCase):
    """Test cases for the zero-shot service"""

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)
        self.logits = np.random.default_rng(27).normal(size=(5, 3))
        write_matrix(self.logits, self.tmp / 'logits.mat')

    def tearDown(self):
        self._tmp.cleanup()

    def test_query_transform_follows_index_tag(self):
        """Test that raw rows get the transform the index was built for"""
        index = dataclasses.replace(_toy_index(np.eye(3)), transform_tag='normalized-logits')
        service = ZeroShotService(index)
        self.assertEqual(service.query_transform(self.tmp / 'logits.mat'), ('normalized-logits', 1.0))
        self.assertEqual(service.query_transform(self.tmp / 'logits.mat', 'none', 1.0), ('none', 1.0))

    def test_untagged_index_uses_fallback(self):
        """Test that an index without a transform tag falls back to the configured query transform"""
        service = ZeroShotService(_toy_index(np.eye(3)))
        self.assertEqual(service.query_transform(self.tmp / 'logits.mat', None, 2.0), ('softmax', 2.0))
        self.assertEqual(
            service.query_transform(self.tmp / 'logits.mat', None, 1.0, 'normalized-logits'), ('normalized-logits', 1.0),
        )

    def test_read_queries_applies_softmax(self):
        """Test that read_queries returns softmax rows for raw logits and a softmax index"""
        index = dataclasses.replace(_toy_index(np.eye(3)), transform_tag='softmax(T=1.0)')
        queries = ZeroShotService(index).read_queries(self.tmp / 'logits.mat')
        np.testing.assert_allclose(queries, softmax(self.logits), atol=1e-12)

    def test_sidecar_rows_read_unchanged(self):
        """Test that rows whose sidecar names a transform are read as they are"""
        write_metadata(self.tmp / 'logits.mat', {'transform': 'softmax(T=1.0)'})
        index = dataclasses.replace(_toy_index(np.eye(3)), transform_tag='softmax(T=1.0)')
        queries = ZeroShotService(index).read_queries(self.tmp / 'logits.mat')
        np.testing.assert_allclose(queries, self.logits, atol=1e-12)

    def test_evaluate_matches_topk_accuracy(self):
        """Test that evaluate splits samples by pool and scores each with topk_accuracy"""
        cca, W1, W2c, W3c = _random_problem(28)
        index = build_index(cca, W1, W2c, W3c)
        rng = np.random.default_rng(29)
        X = softmax(rng.normal(size=(200, 12)))
        labels = rng.integers(0, 16, size=200)
        results = ZeroShotService(index, threads=2).evaluate(X, labels, [1, 3], ['seen', 'unseen'])
        for pool, mask in (('seen', labels < 12), ('unseen', labels >= 12)):
            expected = topk_accuracy(X[mask], labels[mask], index, [1, 3], pool=pool)
            self.assertEqual(results[pool].rows, expected.rows)

    def test_evaluate_skips_empty_pool(self):
        """Test that a pool without labeled samples is skipped with a warning"""
        index = _toy_index(np.eye(3), [[1.0], [0.0], [0.0]])
        with self.assertLogs('services.zeroshot.services', level='WARNING') as logs:
            results = ZeroShotService(index).evaluate(np.eye(3), [0, 1, 2], [1], ['seen', 'unseen'])
        self.assertEqual(list(results), ['seen'])
        self.assertIn('No samples labeled with unseen classes', logs.output[0])

    def test_evaluate_length_mismatch(self):
        """Test that outputs and labels must have the same length"""
        with self.assertRaises(DimensionMismatchError):
            ZeroShotService(_toy_index(np.eye(3))).evaluate(np.eye(3), [0, 1], [1], ['seen'])

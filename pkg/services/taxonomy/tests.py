import tempfile
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.test import SimpleTestCase
from scipy.spatial.distance import pdist, squareform

from core.exceptions import DegenerateInputError, GraphError
from .models import ClassEntry, ClassRegistry
from .services import (
    build_graph,
    classical_mds,
    distance_matrix,
    load_embedding,
    make_registry,
    path_similarity,
    read_registry,
    read_taxonomy,
    save_embedding,
    shortest_path_length,
    write_registry,
    write_taxonomy,
)

EDGES = [
    ('root', 'animal'), ('root', 'tool'),
    ('animal', 'dog'), ('animal', 'cat'),
    ('tool', 'hammer'),
    ('island', 'rock'),
]


class PathSimilarityTest(SimpleTestCase):
    """Test cases for hop counts and path similarity"""

    def setUp(self):
        self.taxonomy = build_graph(EDGES)

    def test_shortest_path_length(self):
        """Test shortest path length"""
        self.assertEqual(shortest_path_length(self.taxonomy, 'dog', 'dog'), 0)
        self.assertEqual(shortest_path_length(self.taxonomy, 'animal', 'dog'), 1)
        self.assertEqual(shortest_path_length(self.taxonomy, 'dog', 'root'), 2)
        self.assertEqual(shortest_path_length(self.taxonomy, 'dog', 'hammer'), 4)

    def test_unreachable(self):
        """Test unreachable"""
        self.assertIsNone(shortest_path_length(self.taxonomy, 'dog', 'rock'))
        self.assertEqual(path_similarity(self.taxonomy, 'dog', 'rock'), 0.0)

    def test_path_similarity(self):
        """Test path similarity"""
        self.assertEqual(path_similarity(self.taxonomy, 'cat', 'cat'), 1.0)
        self.assertEqual(path_similarity(self.taxonomy, 'animal', 'cat'), 0.5)
        self.assertEqual(path_similarity(self.taxonomy, 'cat', 'tool'), 0.25)
        self.assertEqual(path_similarity(self.taxonomy, 'tool', 'cat'), 0.25)

    def test_unknown_node(self):
        """Test unknown node"""
        with self.assertRaises(GraphError):
            path_similarity(self.taxonomy, 'dog', 'unicorn')

    def test_self_loop_rejected(self):
        """Test self loop rejected"""
        with self.assertRaises(GraphError):
            build_graph([('a', 'a')])

    def test_duplicate_edges_collapsed(self):
        """Test duplicate edges collapsed"""
        self.assertEqual(build_graph([('a', 'b'), ('a', 'b'), ('b', 'a')]).n_edges, 1)


class RegistryTest(SimpleTestCase):
    """Test cases for the class registry"""

    def test_seen_classes_come_first(self):
        """Test seen classes come first"""
        entries = (ClassEntry(0, 'dog', 'unseen'), ClassEntry(1, 'cat', 'seen'))
        with self.assertRaises(GraphError):
            ClassRegistry(entries=entries)

    def test_indices_follow_file_order(self):
        """Test indices follow file order"""
        with self.assertRaises(GraphError):
            ClassRegistry(entries=(ClassEntry(1, 'dog', 'seen'),))

    def test_lookup(self):
        """Test registry lookup by node and index"""
        registry = make_registry(['dog', 'cat'], ['hammer'], labels={'cat': 'house cat'})
        self.assertEqual(registry.lookup(1).node, 'cat')
        self.assertEqual(registry.lookup('house cat').index, 1)
        self.assertEqual(registry.lookup('hammer').index, 2)
        self.assertEqual((registry.n_seen, registry.n_unseen), (2, 1))
        with self.assertRaises(GraphError):
            registry.lookup('unicorn')

    def test_files(self):
        """Test taxonomy and registry files"""
        registry = make_registry(['dog', 'cat'], ['hammer'], labels={'dog': 'dog'})
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            edges_path = write_taxonomy(EDGES, tmp / 'edges.tsv')
            with open(edges_path, 'a') as handle:
                handle.write('# trailing comment\n\n')
            write_registry(registry, tmp / 'registry.tsv')
            taxonomy = read_taxonomy(edges_path)
            loaded = read_registry(tmp / 'registry.tsv', taxonomy)
        self.assertEqual(loaded, registry)
        self.assertEqual(taxonomy.n_edges, len(EDGES))
        self.assertEqual(taxonomy.labels['dog'], 'dog')

    def test_unknown_registered_node(self):
        """Test unknown registered node"""
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            write_registry(make_registry(['unicorn'], []), tmp / 'registry.tsv')
            with self.assertRaises(GraphError):
                read_registry(tmp / 'registry.tsv', build_graph(EDGES))


class DistanceMatrixTest(SimpleTestCase):
    """Test cases for taxonomy distance matrices"""

    def setUp(self):
        self.taxonomy = build_graph(EDGES)
        self.registry = make_registry(['dog', 'cat', 'hammer'], ['rock'])

    def test_values(self):
        """Test distance matrix values"""
        D = distance_matrix(self.taxonomy, self.registry).values
        np.testing.assert_array_equal(np.diag(D), np.zeros(4))
        np.testing.assert_array_equal(D, D.T)
        self.assertAlmostEqual(D[0, 1], 1.0 - 1.0 / 3.0)
        self.assertAlmostEqual(D[0, 2], 1.0 - 1.0 / 5.0)
        self.assertEqual(D[0, 3], 1.0)
        self.assertTrue(np.all((D >= 0) & (D <= 1)))

    def test_adjacent_classes(self):
        """Test adjacent classes"""
        D = distance_matrix(self.taxonomy, make_registry(['animal', 'dog'], [])).values
        self.assertEqual(D[0, 1], 0.5)

    def test_threads_give_identical_result(self):
        """Test threads give identical result"""
        single = distance_matrix(self.taxonomy, self.registry, threads=1).values
        multi = distance_matrix(self.taxonomy, self.registry, threads=3).values
        np.testing.assert_array_equal(single, multi)

    def test_needs_two_classes(self):
        """Test needs two classes"""
        with self.assertRaises(DegenerateInputError):
            distance_matrix(self.taxonomy, make_registry(['dog'], []))


class ClassicalMdsTest(SimpleTestCase):
    """Test cases for classic multidimensional scaling"""

    def test_single_class(self):
        """Test single class"""
        embedding = classical_mds(np.zeros((1, 1)), 5)
        self.assertEqual(embedding.dim, 0)
        self.assertEqual(embedding.n_classes, 1)

    def test_collinear_points(self):
        """Test collinear points"""
        points = np.array([[0.0], [1.0], [3.0]])
        D = squareform(pdist(points))
        embedding = classical_mds(D, 3)
        self.assertEqual(embedding.dim, 1)
        reconstructed = squareform(pdist(embedding.coordinates.T))
        self.assertLess(np.abs(reconstructed - D).max(), 1e-10)

    def test_euclidean_reconstruction(self):
        """Test euclidean reconstruction"""
        points = np.random.default_rng(0).normal(size=(200, 3))
        D = squareform(pdist(points))
        embedding = classical_mds(D, 3)
        self.assertEqual(embedding.dim, 3)
        reconstructed = squareform(pdist(embedding.coordinates.T))
        self.assertLess(np.abs(reconstructed - D).max(), 1e-8)
        self.assertLess(embedding.reconstruction_error, 1e-8)

    def test_embedding_is_centered(self):
        """Test embedding is centered"""
        D = squareform(pdist(np.random.default_rng(1).uniform(size=(30, 4)) + 5.0))
        embedding = classical_mds(D, 10)
        self.assertLess(np.abs(embedding.coordinates.sum(axis=1)).max(), 1e-8)

    def test_dimension_cap(self):
        """Test dimension cap"""
        D = squareform(pdist(np.random.default_rng(2).normal(size=(50, 5))))
        self.assertEqual(classical_mds(D, 2).dim, 2)
        self.assertEqual(classical_mds(D, 100).dim, 5)

    def test_graph_distances_report_error(self):
        """Test graph distances report error"""
        taxonomy = build_graph(EDGES)
        registry = make_registry(['dog', 'cat', 'hammer', 'animal', 'tool'], ['root'])
        embedding = classical_mds(distance_matrix(taxonomy, registry), 10, n_seen=5)
        self.assertGreaterEqual(embedding.reconstruction_error, 0.0)
        self.assertEqual(embedding.seen.shape, (embedding.dim, 5))
        self.assertEqual(embedding.unseen.shape, (embedding.dim, 1))
        self.assertTrue(np.all(embedding.eigenvalues[:embedding.dim] > 0))

    def test_invalid_input(self):
        """Test invalid input"""
        with self.assertRaises(DegenerateInputError):
            classical_mds(np.array([[0.0, 1.0], [2.0, 0.0]]), 2)
        with self.assertRaises(DegenerateInputError):
            classical_mds(np.zeros((2, 2)), 0)

    def test_save_and_load(self):
        """Test save and load"""
        taxonomy = build_graph(EDGES)
        registry = make_registry(['dog', 'cat', 'hammer'], ['tool'])
        embedding = classical_mds(distance_matrix(taxonomy, registry), 10, n_seen=3, registry=registry)
        with tempfile.TemporaryDirectory() as tmp:
            save_embedding(embedding, Path(tmp) / 'emb')
            loaded = load_embedding(Path(tmp) / 'emb')
        np.testing.assert_array_equal(loaded.coordinates, embedding.coordinates)
        self.assertEqual(loaded.n_seen, 3)
        self.assertEqual(loaded.registry, registry)


class MdsCommandTest(SimpleTestCase):
    """Test cases for the mds command"""

    def test_writes_embedding_and_distances(self):
        """Test writes embedding and distances"""
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            write_taxonomy(EDGES[:5], tmp / 'edges.tsv')
            write_registry(make_registry(['dog', 'cat'], ['hammer']), tmp / 'registry.tsv')
            call_command(
                'mds', '--taxonomy', str(tmp / 'edges.tsv'), '--registry', str(tmp / 'registry.tsv'),
                '--output', str(tmp / 'emb'), '--distances', str(tmp / 'D.csv'), verbosity=0,
            )
            embedding = load_embedding(tmp / 'emb')
            self.assertTrue((tmp / 'D.csv').exists())
        self.assertEqual(embedding.n_classes, 3)
        self.assertEqual(embedding.n_seen, 2)
        self.assertEqual([entry.node for entry in embedding.registry.entries], ['dog', 'cat', 'hammer'])

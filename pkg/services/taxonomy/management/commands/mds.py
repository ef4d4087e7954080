"""
Management command computing semantic class features from the taxonomy
"""
from core.exceptions import ConfigError
from core.management.base import PipelineCommand
from core.services.matrix_io import write_matrix
from services.taxonomy.services import classical_mds, distance_matrix, read_registry, read_taxonomy, save_embedding


class Command(PipelineCommand):
    help = 'Path-similarity distances over registered classes and their classic MDS embedding'

    def add_arguments(self, parser):
        parser.add_argument('--taxonomy', help='Edge list file, parent<TAB>child (defaults to TAXONOMY)')
        parser.add_argument('--registry', help='Class registry file (defaults to REGISTRY)')
        parser.add_argument('--output', required=True, help='Embedding directory to write')
        parser.add_argument('--max-dim', type=int, help='Largest embedding dimension (defaults to MDS_MAX_DIM)')
        parser.add_argument('--distances', help='Also write the class distance matrix to this file')

    def config_overrides(self, options):
        return {
            'taxonomy': options.get('taxonomy'),
            'registry': options.get('registry'),
            'mds_max_dim': options.get('max_dim'),
        }

    def handle(self, *args, **options):
        cfg = self.run_config
        if not cfg.taxonomy or not cfg.registry:
            raise ConfigError('A taxonomy and a class registry are required (--taxonomy/--registry or TAXONOMY/REGISTRY)')

        taxonomy = read_taxonomy(cfg.taxonomy)
        registry = read_registry(cfg.registry, taxonomy)
        distances = distance_matrix(taxonomy, registry, threads=cfg.threads)
        if options.get('distances'):
            write_matrix(distances.values, options['distances'])

        embedding = classical_mds(distances, cfg.mds_max_dim, n_seen=registry.n_seen, registry=registry)
        save_embedding(embedding, options['output'])
        self.say(
            f"✓ Semantic embedding: {embedding.n_classes} classes ({registry.n_seen} seen), "
            f"dim {embedding.dim}, max distance error {embedding.reconstruction_error:.3e} -> {options['output']}",
            self.style.SUCCESS,
        )

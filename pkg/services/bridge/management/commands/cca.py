"""
Management command fitting the CCA bridge between visual and semantic class features
"""
import dataclasses

import numpy as np

from core.exceptions import ConfigError, DimensionMismatchError
from core.management.base import PipelineCommand
from core.services.matrix_io import read_labels
from services.bridge.services import (
    class_mean_matrix,
    center_semantic,
    fit_cca,
    load_visual_features,
    random_features,
    save_cca,
    visual_class_matrix,
)
from services.distributions.services import resolve_transform, transform_tag_for, transformed_chunks
from services.taxonomy.services import load_embedding


class Command(PipelineCommand):
    help = 'Fit CCA projections P1, P2 between f(W1 M) and the centered semantic features'

    def add_arguments(self, parser):
        source = parser.add_mutually_exclusive_group(required=True)
        source.add_argument('--features', help='Whitening (PCA) or ICA model directory providing W1')
        source.add_argument('--random-dim', type=int, help='Use a random semi-orthogonal W1 with this many rows')
        parser.add_argument('--embedding', required=True, help='Semantic embedding directory (from the mds command)')
        parser.add_argument('--output', required=True, help='CCA model directory to write')
        parser.add_argument('--dim', type=int, help='Rows of W1 to keep for PCA features')
        parser.add_argument('--dims', type=int, help='Common dimension c (defaults to CCA_DIMS, 0 meaning d)')
        parser.add_argument('--ridge', type=float, help='Ridge added to both view covariances (defaults to CCA_RIDGE)')
        parser.add_argument(
            '--class-means',
            action='store_true',
            help='Use M = class-mean outputs of labeled data instead of M = I',
        )
        parser.add_argument('--outputs', help='Labeled outputs for --class-means (defaults to OUTPUTS)')
        parser.add_argument('--labels', help='Labels file for --class-means (defaults to LABELS)')
        parser.add_argument(
            '--transform',
            choices=['softmax', 'normalized-logits', 'none'],
            help='Transform applied to --outputs rows before averaging (defaults to QUERY_TRANSFORM for raw logits)',
        )

    def config_overrides(self, options):
        return {
            'cca_dims': options.get('dims'),
            'cca_ridge': options.get('ridge'),
            'outputs': options.get('outputs'),
            'labels': options.get('labels'),
        }

    def handle(self, *args, **options):
        cfg = self.run_config
        embedding = load_embedding(options['embedding'])
        n_seen = embedding.n_seen

        if options.get('random_dim'):
            features = random_features(options['random_dim'], n_seen, cfg.seed)
        else:
            features = load_visual_features(options['features'], options.get('dim'))
        if features.n != n_seen:
            raise DimensionMismatchError(f"W1 covers {features.n} classes but the embedding has {n_seen} seen classes")

        M = None
        if options['class_means']:
            if not cfg.outputs or not cfg.labels:
                raise ConfigError('--class-means needs labeled outputs (--outputs/--labels or OUTPUTS/LABELS)')
            mode, T = resolve_transform(
                cfg.outputs, options['transform'], cfg.temperature, transform_tag_for(cfg.query_transform, cfg.temperature),
            )
            X = np.vstack(list(transformed_chunks(cfg.outputs, mode, T, cfg.chunk_rows)))
            M = class_mean_matrix(X, read_labels(cfg.labels), n_seen)

        F, _ = visual_class_matrix(features, M)
        W2c, _, _ = center_semantic(embedding.seen, embedding.unseen)
        model = fit_cca(F, W2c, c=cfg.cca_dims or None, ridge=cfg.cca_ridge)
        model = dataclasses.replace(model, features=features)
        save_cca(model, options['output'])
        self.say(
            f"✓ CCA model: {features.tag} features d={features.d}, c={model.c}, "
            f"correlations {model.correlations[0]:.4f}..{model.correlations[-1]:.4f} -> {options['output']}",
            self.style.SUCCESS,
        )

"""
Management command writing top-k zero-shot predictions for output vectors
"""
from core.management.base import PipelineCommand
from core.services.matrix_io import write_table
from services.zeroshot.services import ZeroShotService

HEADER = ['row', 'rank', 'class', 'name', 'score', 'pool']


class Command(PipelineCommand):
    help = 'Rank the classes of a pool for every output vector by cosine similarity'

    def add_arguments(self, parser):
        parser.add_argument('--index', required=True, help='Index directory (from the index command)')
        parser.add_argument('--input', required=True, help='Output vectors or logits (samples x seen classes)')
        parser.add_argument('--output', required=True, help='Predictions CSV to write')
        parser.add_argument('--pool', choices=['seen', 'unseen', 'both'], default='unseen')
        parser.add_argument('--top-k', type=int, help='Predictions per row (defaults to the largest TOP_K)')
        parser.add_argument(
            '--transform',
            choices=['softmax', 'normalized-logits', 'none'],
            help='Transform applied to input rows (defaults to the one the index was built for; '
                 'none: rows already are output vectors)',
        )
        parser.add_argument('--temperature', type=float, help='Softmax temperature for --transform softmax')

    def config_overrides(self, options):
        return {'temperature': options.get('temperature')}

    def handle(self, *args, **options):
        cfg = self.run_config
        service = ZeroShotService.load(options['index'], cfg.threads)
        top_k = options.get('top_k') or max(cfg.top_k)
        X = service.read_queries(
            options['input'], options['transform'], cfg.temperature, cfg.query_transform, cfg.chunk_rows,
        )

        predictions = service.predict(X, top_k, options['pool'])
        rows = []
        for row, prediction in enumerate(predictions):
            for rank, (class_id, score) in enumerate(zip(prediction.class_ids, prediction.scores), start=1):
                rows.append([
                    row, rank, int(class_id), service.index.class_name(int(class_id)), f"{score:.10f}", prediction.pool,
                ])
        write_table(options['output'], HEADER, rows)
        self.say(
            f"✓ Wrote top-{top_k} {options['pool']} predictions for {len(predictions)} row(s) -> {options['output']}",
            self.style.SUCCESS,
        )

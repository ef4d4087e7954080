"""
Management command computing flat hit@k for one or more prediction indices
"""
from pathlib import Path

from core.exceptions import EmptyInputError
from core.management.base import PipelineCommand
from core.services.matrix_io import read_labels, write_table
from services.zeroshot.services import ZeroShotService

RESULT_HEADER = ['pool', 'k', 'hits', 'total', 'accuracy']


class Command(PipelineCommand):
    help = 'Flat hit@k of labeled output vectors against the seen, unseen and combined pools'

    def add_arguments(self, parser):
        parser.add_argument('--index', required=True, nargs='+', help='Index directory (several compare feature types)')
        parser.add_argument('--input', help='Labeled output vectors or logits (defaults to OUTPUTS)')
        parser.add_argument('--labels', help='Labels file, one registry class index per line (defaults to LABELS)')
        parser.add_argument('--output', help='Results CSV (pool,k,hits,total,accuracy)')
        parser.add_argument('--pool', nargs='+', choices=['seen', 'unseen', 'both'], help='Pools (defaults to POOLS)')
        parser.add_argument('--k', nargs='+', type=int, help='Ranking depths (defaults to TOP_K)')
        parser.add_argument(
            '--transform',
            choices=['softmax', 'normalized-logits', 'none'],
            help='Transform applied to input rows (defaults to the one each index was built for; '
                 'none: rows already are output vectors)',
        )
        parser.add_argument('--temperature', type=float, help='Softmax temperature for --transform softmax')

    def config_overrides(self, options):
        return {
            'outputs': options.get('input'),
            'labels': options.get('labels'),
            'pools': options.get('pool'),
            'top_k': options.get('k'),
            'temperature': options.get('temperature'),
        }

    def handle(self, *args, **options):
        cfg = self.run_config
        if not cfg.outputs or not cfg.labels:
            raise EmptyInputError('Evaluation needs labeled outputs (--input/--labels or OUTPUTS/LABELS)')
        labels = read_labels(cfg.labels)

        several = len(options['index']) > 1
        queries = {}
        rows = []
        for index_path in options['index']:
            service = ZeroShotService.load(index_path, cfg.threads)
            transform = service.query_transform(cfg.outputs, options['transform'], cfg.temperature, cfg.query_transform)
            if transform not in queries:
                queries[transform] = service.read_queries(cfg.outputs, *transform, chunk_rows=cfg.chunk_rows)

            name = service.index.feature_tag or Path(index_path).name
            results = service.evaluate(queries[transform], labels, cfg.top_k, cfg.pools)
            for pool, result in results.items():
                for row in result.rows:
                    rows.append(([Path(index_path).name] if several else []) + row.as_row())
                    self.say(f"{name:<24} {pool:<7} hit@{row.k:<4} {row.hits:>7}/{row.total:<7} {row.accuracy:.4f}")

        if options.get('output'):
            header = (['index'] if several else []) + RESULT_HEADER
            write_table(options['output'], header, rows)
            self.say(f"✓ Results -> {options['output']}", self.style.SUCCESS)

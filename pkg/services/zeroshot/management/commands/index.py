"""
Management command building the zero-shot prediction index
"""
from core.management.base import PipelineCommand
from services.bridge.services import load_cca
from services.distributions.services import transform_tag_for
from services.taxonomy.services import load_embedding
from services.zeroshot.services import index_from_models, save_index


class Command(PipelineCommand):
    help = 'Precompute projected, unit-norm class columns for the seen and unseen pools'

    def add_arguments(self, parser):
        parser.add_argument('--cca', required=True, help='CCA model directory (from the cca command)')
        parser.add_argument('--embedding', required=True, help='Semantic embedding directory (from the mds command)')
        parser.add_argument('--output', required=True, help='Index directory to write')
        parser.add_argument(
            '--query-transform',
            choices=['softmax', 'normalized-logits'],
            help='Transform queries are expected in (defaults to QUERY_TRANSFORM)',
        )

    def config_overrides(self, options):
        return {'query_transform': options.get('query_transform')}

    def handle(self, *args, **options):
        cfg = self.run_config
        tag = transform_tag_for(cfg.query_transform, cfg.temperature)
        index = index_from_models(load_cca(options['cca']), load_embedding(options['embedding']), transform_tag=tag)
        save_index(index, options['output'])
        self.say(
            f"✓ Index: c={index.c}, {len(index.seen_ids)} seen / {len(index.unseen_ids)} unseen classes, "
            f"{len(index.excluded)} excluded -> {options['output']}",
            self.style.SUCCESS,
        )

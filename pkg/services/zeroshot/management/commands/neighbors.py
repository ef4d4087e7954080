"""
Management command comparing visual and semantic nearest classes
"""
from core.exceptions import ConfigError
from core.management.base import PipelineCommand
from services.bridge.services import load_visual_features
from services.taxonomy.services import read_registry, read_taxonomy
from services.zeroshot.services import nearest_classes_semantic, nearest_classes_visual


class Command(PipelineCommand):
    help = 'Nearest classes by cosine of feature columns and by taxonomy path similarity'

    def add_arguments(self, parser):
        parser.add_argument('--class', dest='class_key', required=True, help='Query class (index, node id or label)')
        parser.add_argument('--features', help='Whitening, ICA or CCA model directory (visual neighbours)')
        parser.add_argument('--taxonomy', help='Edge list file (semantic neighbours; defaults to TAXONOMY)')
        parser.add_argument('--registry', help='Class registry (defaults to REGISTRY)')
        parser.add_argument('--top', type=int, default=5, help='Neighbours per list')
        parser.add_argument('--mode', choices=['visual', 'semantic', 'both'], default='both')

    def config_overrides(self, options):
        return {'taxonomy': options.get('taxonomy'), 'registry': options.get('registry')}

    def handle(self, *args, **options):
        cfg = self.run_config
        mode = options['mode']
        if not cfg.registry:
            raise ConfigError('A class registry is required (--registry or REGISTRY)')
        taxonomy = read_taxonomy(cfg.taxonomy) if mode != 'visual' and cfg.taxonomy else None
        registry = read_registry(cfg.registry, taxonomy)
        query = registry.lookup(options['class_key'])
        top = options['top']

        columns = []
        if mode in ('visual', 'both'):
            if not options.get('features'):
                raise ConfigError('Visual neighbours need --features')
            if not query.seen:
                raise ConfigError(f"{query.display} is an unseen class; visual features cover seen classes only")
            columns.append(('visual', nearest_classes_visual(query.index, load_visual_features(options['features']), top)))
        if mode in ('semantic', 'both'):
            if taxonomy is None:
                raise ConfigError('Semantic neighbours need a taxonomy (--taxonomy or TAXONOMY)')
            candidates = range(registry.n_seen) if mode == 'both' else None
            columns.append(('semantic', nearest_classes_semantic(query.index, taxonomy, registry, top, candidates)))

        self.say(f"Nearest classes to {query.display}:")
        self.say('     ' + ''.join(f"{title:<40}" for title, _ in columns))
        for position in range(max(len(entries) for _, entries in columns)):
            cells = []
            for _, entries in columns:
                if position < len(entries):
                    class_id, score = entries[position]
                    cells.append(f"{registry[class_id].display[:28]:<28} {score:>8.4f}   ")
                else:
                    cells.append(' ' * 40)
            self.say(f"{position + 1:>3}. " + ''.join(cells))

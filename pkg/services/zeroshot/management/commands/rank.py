"""
Management command listing the classes that score highest on one component
"""
from core.exceptions import ConfigError
from core.management.base import PipelineCommand
from core.services.matrix_io import write_table
from services.bridge.services import load_visual_features
from services.taxonomy.services import read_registry
from services.zeroshot.services import dominant_component, rank_classes_by_component


class Command(PipelineCommand):
    help = 'Rank classes by a single component of W1 (or by the dominant component of one class)'

    def add_arguments(self, parser):
        target = parser.add_mutually_exclusive_group(required=True)
        target.add_argument('--component', type=int, help='Component (row of W1) to rank by')
        target.add_argument('--class', dest='class_key', help='Rank by the largest component of this class')
        parser.add_argument('--features', required=True, help='Whitening, ICA or CCA model directory providing W1')
        parser.add_argument('--registry', help='Class registry for class names (defaults to REGISTRY)')
        parser.add_argument('--top', type=int, default=5, help='Number of classes to list')
        parser.add_argument('--output', help='Also write the ranking as CSV')

    def config_overrides(self, options):
        return {'registry': options.get('registry')}

    def handle(self, *args, **options):
        cfg = self.run_config
        features = load_visual_features(options['features'])
        registry = read_registry(cfg.registry) if cfg.registry else None

        def name(class_id):
            return registry[class_id].display if registry is not None else str(class_id)

        component = options.get('component')
        if component is None:
            key = options['class_key']
            if registry is not None:
                class_id = registry.lookup(key).index
            elif key.isdigit():
                class_id = int(key)
            else:
                raise ConfigError(f"Class {key!r} is not an index; pass --registry to look up names")
            component = dominant_component(features, class_id)
            self.say(f"Dominant component of {name(class_id)}: {component}")

        ranking = rank_classes_by_component(features, component, options['top'])
        for position, (class_id, value) in enumerate(ranking, start=1):
            self.say(f"{position:>3}. {name(class_id):<30} {value: .6f}")
        if options.get('output'):
            write_table(
                options['output'],
                ['rank', 'class', 'name', 'value'],
                [[position, class_id, name(class_id), f"{value:.10f}"] for position, (class_id, value) in enumerate(ranking, start=1)],
            )

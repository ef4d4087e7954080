"""
Management command emitting plot-ready CSV tables
"""
from core.exceptions import ConfigError
from core.management.base import PipelineCommand
from core.services.matrix_io import iter_matrix_chunks
from core.services.plot_data import KURTOSIS_HIST, PLOT_KINDS, emit_plot_data
from services.bridge.services import load_visual_features
from services.distributions.services import accumulate_moments, report_from_moments
from services.taxonomy.services import read_registry


class Command(PipelineCommand):
    help = 'Write class scatter, component bar or kurtosis histogram data as CSV (no rendering)'

    def add_arguments(self, parser):
        parser.add_argument('--kind', required=True, help=f"One of: {', '.join(PLOT_KINDS)}")
        parser.add_argument('--output', required=True, help='CSV file to write')
        parser.add_argument('--features', help='Whitening, ICA or CCA model directory (scatter and bars)')
        parser.add_argument('--input', help='Output matrix (kurtosis histogram)')
        parser.add_argument('--registry', help='Class registry for labels (defaults to REGISTRY)')
        parser.add_argument('--components', type=int, nargs=2, default=[0, 1], help='Two components for the scatter')
        parser.add_argument('--classes', type=int, nargs='+', help='Classes for the component bars')

    def config_overrides(self, options):
        return {'registry': options.get('registry')}

    def handle(self, *args, **options):
        kind = options['kind']
        registry = read_registry(self.run_config.registry) if self.run_config.registry else None
        features = report = None
        if kind == KURTOSIS_HIST:
            if not options.get('input'):
                raise ConfigError(f"{kind} needs --input")
            report = report_from_moments(accumulate_moments(iter_matrix_chunks(options['input'], self.run_config.chunk_rows)))
        elif kind in PLOT_KINDS:
            if not options.get('features'):
                raise ConfigError(f"{kind} needs --features")
            features = load_visual_features(options['features'])

        path = emit_plot_data(
            kind,
            options['output'],
            features=features,
            report=report,
            registry=registry,
            components=tuple(options['components']),
            classes=options.get('classes'),
        )
        self.say(f"✓ {kind} -> {path}", self.style.SUCCESS)

"""
Management command writing a Laplace-source ICA world with its mixing matrix
"""
from core.management.base import PipelineCommand
from core.services.synthetic_world import IcaWorldSpec, generate_ica_world, write_ica_world


class Command(PipelineCommand):
    help = 'Generate x = A s with unit-variance Laplace sources and a well-conditioned random mixing matrix'

    def add_arguments(self, parser):
        parser.add_argument('--output', required=True, help='Directory for data.mat, mixing.mat and sources.mat')
        parser.add_argument('--sources', type=int, default=10, help='Number of sources')
        parser.add_argument('--samples', type=int, default=200_000, help='Number of samples')
        parser.add_argument('--condition-bound', type=float, default=10.0, help='Largest accepted condition number of A')
        parser.add_argument('--identity', action='store_true', help='Use A = I')

    def handle(self, *args, **options):
        spec = IcaWorldSpec(
            n_sources=options['sources'],
            n_samples=options['samples'],
            condition_bound=options['condition_bound'],
            seed=self.run_config.seed,
            identity_mixing=options['identity'],
        )
        directory = write_ica_world(generate_ica_world(spec), options['output'])
        self.say(f"✓ ICA world: {spec.n_sources} sources x {spec.n_samples} samples -> {directory}", self.style.SUCCESS)

"""
Management command writing the synthetic zero-shot world
"""
from core.management.base import PipelineCommand
from core.services.synthetic_world import ZeroShotWorldSpec, generate_zeroshot_world, write_zeroshot_world


class Command(PipelineCommand):
    help = 'Generate seen/unseen classes with latent attributes, classifier logits and a clustered taxonomy'

    def add_arguments(self, parser):
        defaults = ZeroShotWorldSpec()
        parser.add_argument('--output', required=True, help='Directory for the world files and run.cfg')
        parser.add_argument('--seen', type=int, default=defaults.n_seen, help='Seen classes')
        parser.add_argument('--unseen', type=int, default=defaults.n_unseen, help='Unseen classes')
        parser.add_argument('--attribute-dim', type=int, default=defaults.attribute_dim, help='Latent attribute dimension')
        parser.add_argument('--noise', type=float, default=defaults.noise, help='Noise level (0 gives identical samples per class)')
        parser.add_argument('--branching', type=int, default=defaults.branching, help='Taxonomy branching factor')
        parser.add_argument('--train-per-class', type=int, default=defaults.train_per_class)
        parser.add_argument('--test-per-class', type=int, default=defaults.test_per_class)

    def handle(self, *args, **options):
        spec = ZeroShotWorldSpec(
            n_seen=options['seen'],
            n_unseen=options['unseen'],
            attribute_dim=options['attribute_dim'],
            noise=options['noise'],
            branching=options['branching'],
            train_per_class=options['train_per_class'],
            test_per_class=options['test_per_class'],
            seed=self.run_config.seed,
        )
        world = generate_zeroshot_world(spec)
        directory = write_zeroshot_world(world, options['output'])
        self.say(f"Taxonomy/attribute distance correlation: {world.correlation:.3f}")
        self.say(
            f"✓ Zero-shot world: {spec.n_seen} seen / {spec.n_unseen} unseen classes -> {directory}",
            self.style.SUCCESS,
        )

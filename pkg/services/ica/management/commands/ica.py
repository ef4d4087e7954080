"""
Management command training the ICA demixing matrix on top of a whitening model
"""
import numpy as np

from core.exceptions import ConfigError, EmptyInputError
from core.management.base import PipelineCommand
from services.distributions.models import RAW
from services.distributions.services import input_transform_tag, resolve_transform, transformed_chunks
from services.ica.services import save_ica, trace_summary, train_ica
from services.whitening.services import load_whitening, with_dimension


class Command(PipelineCommand):
    help = 'Learn the orthogonal rotation V by SGD and write the demixing model W = VU'

    def add_arguments(self, parser):
        parser.add_argument('--input', required=True, help='Matrix of outputs or logits (samples x classes)')
        parser.add_argument('--whitening', required=True, help='Whitening model directory (from the pca command)')
        parser.add_argument('--output', required=True, help='Model directory to write')
        parser.add_argument('--dim', type=int, help='Number of components (defaults to the whitening model d)')
        parser.add_argument(
            '--transform',
            choices=['softmax', 'normalized-logits', 'none'],
            help='Transform applied to each row (defaults to the one the whitening model was fit on)',
        )
        parser.add_argument('--temperature', type=float, help='Softmax temperature for --transform softmax')
        parser.add_argument('--epochs', type=int, help='Training epochs (overrides ICA_EPOCHS)')
        parser.add_argument('--batch-size', type=int, help='Minibatch size (overrides ICA_BATCH_SIZE)')
        parser.add_argument('--learning-rate', type=float, help='Initial learning rate (overrides ICA_LEARNING_RATE)')
        parser.add_argument(
            '--correction',
            choices=['standard', 'transpose'],
            help='Orthogonality correction term variant (overrides ICA_CORRECTION)',
        )

    def config_overrides(self, options):
        return {
            'temperature': options.get('temperature'),
            'ica_epochs': options.get('epochs'),
            'ica_batch_size': options.get('batch_size'),
            'ica_learning_rate': options.get('learning_rate'),
            'ica_correction': options.get('correction'),
        }

    def handle(self, *args, **options):
        cfg = self.run_config
        whitening = load_whitening(options['whitening'])
        if options.get('dim') is not None and options['dim'] != whitening.d:
            whitening = with_dimension(whitening, options['dim'])

        mode, T = resolve_transform(options['input'], options['transform'], cfg.temperature, whitening.transform_tag)
        tag = input_transform_tag(options['input'], mode, T)
        if RAW not in (tag, whitening.transform_tag) and tag != whitening.transform_tag:
            raise ConfigError(
                f"Input rows are {tag} but the whitening model was fit on {whitening.transform_tag}"
            )

        blocks = list(transformed_chunks(options['input'], mode, T, cfg.chunk_rows))
        if not blocks:
            raise EmptyInputError(f"{options['input']} holds no rows")
        model = train_ica(np.vstack(blocks), whitening, cfg.ica_config(whitening.d))
        save_ica(model, options['output'])

        summary = trace_summary(model.trace)
        self.say(
            f"✓ ICA model: d={model.d}, n={model.n}, {summary['epochs']} epochs -> {options['output']}",
            self.style.SUCCESS,
        )

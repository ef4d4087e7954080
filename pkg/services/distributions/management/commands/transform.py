"""
Management command to turn logits (or softmax outputs) into the output
distributions studied by the pipeline
"""
import numpy as np
from django.core.management.base import CommandError

from core.management.base import PipelineCommand
from core.services.matrix_io import iter_matrix_chunks, write_matrix, write_metadata
from services.distributions.services import apply_transform


class Command(PipelineCommand):
    help = 'Apply softmax(T) or normalized logits to a score matrix'

    def add_arguments(self, parser):
        parser.add_argument('--input', required=True, help='Score matrix (samples x classes)')
        parser.add_argument('--output', required=True, help='Destination matrix file')
        parser.add_argument(
            '--mode',
            choices=['softmax', 'normalized-logits'],
            help='Transform to apply (defaults to TRANSFORM)',
        )
        parser.add_argument('--temperature', type=float, help='Softmax temperature (defaults to TEMPERATURE)')
        parser.add_argument(
            '--from-probs',
            action='store_true',
            help='Input already holds softmax(T=1) outputs; rescale them by temperature',
        )

    def config_overrides(self, options):
        return {'transform': options.get('mode'), 'temperature': options.get('temperature')}

    def handle(self, *args, **options):
        cfg = self.run_config
        blocks = []
        tag = None
        for chunk in iter_matrix_chunks(options['input'], cfg.chunk_rows):
            transformed = apply_transform(chunk, cfg.transform, cfg.temperature, from_probs=options['from_probs'])
            blocks.append(transformed.values)
            tag = transformed.transform_tag
        if not blocks:
            raise CommandError(f"{options['input']} holds no rows", returncode=2)

        values = np.vstack(blocks)
        write_matrix(values, options['output'])
        write_metadata(options['output'], {
            'transform': tag,
            'source': str(options['input']),
            'rows': values.shape[0],
            'classes': values.shape[1],
        })
        self.say(f"✓ Wrote {values.shape[0]}x{values.shape[1]} {tag} outputs to {options['output']}", self.style.SUCCESS)

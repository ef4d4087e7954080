"""
Management command fitting the PCA / whitening model of an output matrix
"""
from core.management.base import PipelineCommand
from services.distributions.services import (
    input_transform_tag,
    resolve_transform,
    transform_tag_for,
    transformed_chunks,
)
from services.whitening.services import fit_moments, fit_whitening, save_whitening, with_dimension

TRANSFORM_CHOICES = ['softmax', 'normalized-logits', 'none']


class Command(PipelineCommand):
    help = 'Fit mean, covariance spectrum and whitening matrix (streaming, one pass)'

    def add_arguments(self, parser):
        parser.add_argument('--input', required=True, help='Matrix of outputs or logits (samples x classes)')
        parser.add_argument('--output', required=True, help='Model directory to write')
        parser.add_argument('--dim', type=int, help='Retained dimension d (defaults to WHITEN_DIM, capped at the valid rank)')
        parser.add_argument(
            '--transform',
            choices=TRANSFORM_CHOICES,
            help='Transform applied to each row before fitting (defaults to FIT_TRANSFORM for raw logits)',
        )
        parser.add_argument('--temperature', type=float, help='Softmax temperature for --transform softmax')

    def config_overrides(self, options):
        return {'whiten_dim': options.get('dim'), 'temperature': options.get('temperature')}

    def handle(self, *args, **options):
        cfg = self.run_config
        mode, T = resolve_transform(
            options['input'], options['transform'], cfg.temperature, transform_tag_for(cfg.fit_transform, cfg.temperature),
        )
        tag = input_transform_tag(options['input'], mode, T)
        rows = transformed_chunks(options['input'], mode, T, cfg.chunk_rows)

        model = fit_whitening(fit_moments(rows, threads=cfg.threads), transform_tag=tag)
        # an explicit --dim beyond the valid rank is an error; the settings default is capped
        d = cfg.whiten_dim if options.get('dim') is not None else min(cfg.whiten_dim, model.valid_rank)
        if d != model.d:
            model = with_dimension(model, d)

        save_whitening(model, options['output'])
        self.say(
            f"✓ Whitening model: n={model.n}, valid rank {model.valid_rank}, d={model.d} -> {options['output']}",
            self.style.SUCCESS,
        )

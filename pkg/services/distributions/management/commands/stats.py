"""
Management command reporting per-class kurtosis of an output matrix
"""
from core.management.base import PipelineCommand
from core.services.matrix_io import iter_matrix_chunks, write_table
from services.distributions.services import accumulate_moments, report_from_moments


class Command(PipelineCommand):
    help = 'Per-class excess kurtosis (mean removed, population moments) of an output matrix'

    def add_arguments(self, parser):
        parser.add_argument('--input', required=True, help='Output matrix (samples x classes)')
        parser.add_argument('--output', help='CSV report: class,kurtosis,mean,variance,defined')

    def handle(self, *args, **options):
        moments = accumulate_moments(iter_matrix_chunks(options['input'], self.run_config.chunk_rows))
        report = report_from_moments(moments)

        if options.get('output'):
            write_table(
                options['output'],
                ['class', 'kurtosis', 'mean', 'variance', 'defined'],
                [
                    [i, repr(float(report.kurtosis[i])), repr(float(report.mean[i])),
                     repr(float(report.variance[i])), int(report.defined[i])]
                    for i in range(report.n_classes)
                ],
            )

        defined = report.kurtosis[report.defined]
        positive = int((defined > 0).sum())
        self.say(f"Samples: {report.sample_count}  Classes: {report.n_classes}")
        self.say(f"Positive kurtosis: {positive}/{defined.size} defined classes")
        if report.undefined_classes:
            self.say(f"Undefined (zero variance): {len(report.undefined_classes)} class(es)", self.style.WARNING)
        if defined.size:
            self.say(f"Kurtosis range: {defined.min():.4f} .. {defined.max():.4f}")

"""
Shared base for the pipeline management commands.

Adds the global flags (--config, --seed, --threads, --quiet), builds the
RunConfig before `handle` runs and maps pipeline errors onto exit codes:
0 success, 1 usage error, 2 data or validation error.
"""
import logging
from typing import Any, Dict

from django.core.management.base import BaseCommand, CommandError

from core.config import RunConfig
from core.exceptions import PipelineError

PIPELINE_LOGGERS = ('core', 'services')


class PipelineCommand(BaseCommand):
    requires_system_checks = []

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        group = parser.add_argument_group('pipeline options')
        group.add_argument('--config', dest='run_config', help='Flat KEY=VALUE run configuration file')
        group.add_argument('--seed', type=int, help='Random seed (overrides SEED)')
        group.add_argument('--threads', type=int, help='Worker threads for chunked stages (overrides THREADS)')
        group.add_argument('--quiet', action='store_true', help='Only log warnings and errors')
        return parser

    def config_overrides(self, options: Dict[str, Any]) -> Dict[str, Any]:
        """Per-command flag values that override run-config keys"""
        return {}

    def run_from_argv(self, argv):
        self._arguments_parsed = False
        try:
            super().run_from_argv(argv)
        except SystemExit as exc:
            # argparse exits with 2 on bad arguments; usage errors are 1 here
            if not self._arguments_parsed and exc.code == 2:
                raise SystemExit(1)
            raise

    def execute(self, *args, **options):
        self._arguments_parsed = True
        self.verbosity = options.get('verbosity', 1)
        self._quiet = bool(options.get('quiet'))
        if options.get('quiet'):
            for name in PIPELINE_LOGGERS:
                logging.getLogger(name).setLevel(logging.WARNING)

        overrides = {'seed': options.get('seed'), 'threads': options.get('threads')}
        overrides.update(self.config_overrides(options))
        try:
            self.run_config = RunConfig.load(options.get('run_config'), overrides)
            return super().execute(*args, **options)
        except PipelineError as exc:
            raise CommandError(str(exc), returncode=2)

    def say(self, message: str, style=None) -> None:
        if self.verbosity > 0 and not getattr(self, '_quiet', False):
            self.stdout.write(style(message) if style else message)

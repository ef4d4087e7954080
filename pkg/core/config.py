"""
Run configuration.

A run file is a flat KEY=VALUE text file (``#`` starts a comment), parsed with
python-decouple so that values cast exactly like the settings module casts its
own defaults. Precedence, highest first: command-line flags, the run file,
settings defaults. The environment only reaches a run through the settings
module, so an exported variable never overrides a run file.
"""
import logging
from dataclasses import dataclass, field, fields, asdict
from typing import Any, Dict, List, Optional

from decouple import Choices, Csv, RepositoryEnv
from django.conf import settings

from core.exceptions import ConfigError

logger = logging.getLogger(__name__)

TRANSFORMS = ['softmax', 'normalized-logits']
POOL_NAMES = ['seen', 'unseen', 'both']
CORRECTIONS = ['standard', 'transpose']


def _optional_float(value):
    if value in (None, '', 'auto'):
        return None
    return float(value)


def _defaults() -> Dict[str, Any]:
    return {
        'TRANSFORM': settings.TRANSFORM,
        'TEMPERATURE': settings.TEMPERATURE,
        'FIT_TRANSFORM': settings.FIT_TRANSFORM,
        'QUERY_TRANSFORM': settings.QUERY_TRANSFORM,
        'WHITEN_DIM': settings.WHITEN_DIM,
        'ICA_BATCH_SIZE': settings.ICA_BATCH_SIZE,
        'ICA_LEARNING_RATE': settings.ICA_LEARNING_RATE,
        'ICA_HALVING_PERIOD': settings.ICA_HALVING_PERIOD,
        'ICA_EPOCHS': settings.ICA_EPOCHS,
        'ICA_REORTHOGONALIZE_EVERY': settings.ICA_REORTHOGONALIZE_EVERY,
        'ICA_CORRECTION': settings.ICA_CORRECTION,
        'MDS_MAX_DIM': settings.MDS_MAX_DIM,
        'CCA_DIMS': settings.CCA_DIMS,
        'CCA_RIDGE': 'auto',
        'POOLS': ','.join(settings.POOLS),
        'TOP_K': ','.join(str(k) for k in settings.TOP_K),
        'SEED': settings.PIPELINE_SEED,
        'THREADS': settings.PIPELINE_THREADS,
        'CHUNK_ROWS': settings.STREAM_CHUNK_ROWS,
        'OUTPUTS': '',
        'LABELS': '',
        'TAXONOMY': '',
        'REGISTRY': '',
        'WORK_DIR': '',
    }


CASTS = {
    'TRANSFORM': Choices(TRANSFORMS),
    'TEMPERATURE': float,
    'FIT_TRANSFORM': Choices(TRANSFORMS),
    'QUERY_TRANSFORM': Choices(TRANSFORMS),
    'WHITEN_DIM': int,
    'ICA_BATCH_SIZE': int,
    'ICA_LEARNING_RATE': float,
    'ICA_HALVING_PERIOD': int,
    'ICA_EPOCHS': int,
    'ICA_REORTHOGONALIZE_EVERY': int,
    'ICA_CORRECTION': Choices(CORRECTIONS),
    'MDS_MAX_DIM': int,
    'CCA_DIMS': int,
    'CCA_RIDGE': _optional_float,
    'POOLS': Csv(),
    'TOP_K': Csv(int),
    'SEED': int,
    'THREADS': int,
    'CHUNK_ROWS': int,
    'OUTPUTS': str,
    'LABELS': str,
    'TAXONOMY': str,
    'REGISTRY': str,
    'WORK_DIR': str,
}


@dataclass
class RunConfig:
    """Validated settings for one pipeline run"""

    transform: str = 'softmax'
    temperature: float = 1.0
    fit_transform: str = 'normalized-logits'
    query_transform: str = 'softmax'
    whiten_dim: int = 200
    ica_batch_size: int = 500
    ica_learning_rate: float = 0.005
    ica_halving_period: int = 10
    ica_epochs: int = 30
    ica_reorthogonalize_every: int = 0
    ica_correction: str = 'standard'
    mds_max_dim: int = 1000
    cca_dims: int = 0
    cca_ridge: Optional[float] = None
    pools: List[str] = field(default_factory=lambda: list(POOL_NAMES))
    top_k: List[int] = field(default_factory=lambda: [1, 2, 5, 10, 20])
    seed: int = 0
    threads: int = 1
    chunk_rows: int = 4096
    outputs: str = ''
    labels: str = ''
    taxonomy: str = ''
    registry: str = ''
    work_dir: str = ''

    @classmethod
    def load(cls, path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> 'RunConfig':
        """Build from settings defaults, an optional run file and flag overrides"""
        run_file = {}
        if path:
            try:
                run_file = RepositoryEnv(str(path)).data
            except OSError as exc:
                raise ConfigError(f"Cannot read run config {path}: {exc}")
            unknown = sorted(set(run_file) - set(CASTS))
            if unknown:
                raise ConfigError(f"Unknown key(s) in {path}: {', '.join(unknown)}")

        values = {}
        for key, default in _defaults().items():
            try:
                raw = run_file.get(key, default)
                values[key.lower()] = CASTS[key](raw) if isinstance(raw, str) else raw
            except ValueError as exc:
                raise ConfigError(f"Invalid value for {key}: {exc}")

        for key, value in (overrides or {}).items():
            name = key.lower()
            if name not in values:
                raise ConfigError(f"Unknown override {key!r}")
            if value is not None:
                values[name] = value

        run_config = cls(**values)
        run_config.validate()
        return run_config

    def validate(self) -> None:
        errors = []
        if self.temperature <= 0:
            errors.append(f"TEMPERATURE must be positive, got {self.temperature}")
        for name in ('whiten_dim', 'ica_batch_size', 'ica_halving_period', 'mds_max_dim', 'threads', 'chunk_rows'):
            if getattr(self, name) < 1:
                errors.append(f"{name.upper()} must be at least 1, got {getattr(self, name)}")
        if self.ica_learning_rate <= 0:
            errors.append(f"ICA_LEARNING_RATE must be positive, got {self.ica_learning_rate}")
        if self.ica_epochs < 0:
            errors.append(f"ICA_EPOCHS must be non-negative, got {self.ica_epochs}")
        if self.ica_reorthogonalize_every < 0:
            errors.append(f"ICA_REORTHOGONALIZE_EVERY must be non-negative, got {self.ica_reorthogonalize_every}")
        if self.cca_dims < 0:
            errors.append(f"CCA_DIMS must be non-negative, got {self.cca_dims}")
        if self.cca_ridge is not None and self.cca_ridge < 0:
            errors.append(f"CCA_RIDGE must be non-negative, got {self.cca_ridge}")
        for name in ('transform', 'fit_transform', 'query_transform'):
            if getattr(self, name) not in TRANSFORMS:
                errors.append(f"{name.upper()} must be one of {TRANSFORMS}, got {getattr(self, name)!r}")
        if self.ica_correction not in CORRECTIONS:
            errors.append(f"ICA_CORRECTION must be one of {CORRECTIONS}, got {self.ica_correction!r}")
        bad_pools = [p for p in self.pools if p not in POOL_NAMES]
        if not self.pools or bad_pools:
            errors.append(f"POOLS must be a non-empty subset of {POOL_NAMES}, got {self.pools}")
        if not self.top_k or any(k < 1 for k in self.top_k):
            errors.append(f"TOP_K must be a non-empty list of positive integers, got {self.top_k}")
        if errors:
            raise ConfigError('; '.join(errors))

    def ica_config(self, d: int):
        from services.ica.models import IcaConfig

        return IcaConfig(
            d=d,
            batch_size=self.ica_batch_size,
            lr0=self.ica_learning_rate,
            halving_period=self.ica_halving_period,
            epochs=self.ica_epochs,
            seed=self.seed,
            reorthogonalize_every=self.ica_reorthogonalize_every,
            correction=self.ica_correction,
        )

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def keys(cls) -> List[str]:
        return [f.name.upper() for f in fields(cls)]

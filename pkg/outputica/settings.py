"""
Django settings for outputica project.

The project hosts no web application; Django provides the app registry,
management commands, logging configuration and the test runner.

Defaults below are read from the environment (or a .env file) with
python-decouple, the same way every deployment of the project is configured.
"""

from pathlib import Path
from decouple import config, Csv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = config('SECRET_KEY', default='outputica-local-only')

DEBUG = config('DEBUG', default=False, cast=bool)

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    # Project apps
    'core',

    # Services
    'services.distributions',
    'services.whitening',
    'services.ica',
    'services.taxonomy',
    'services.bridge',
    'services.zeroshot',
]

# No models are persisted in a database; artifacts are files.
DATABASES = {}

USE_TZ = True
TIME_ZONE = 'UTC'

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Pipeline defaults (overridable per run with a run-config file or CLI flags)

PIPELINE_SEED = config('PIPELINE_SEED', default=0, cast=int)
PIPELINE_THREADS = config('PIPELINE_THREADS', default=1, cast=int)
STREAM_CHUNK_ROWS = config('STREAM_CHUNK_ROWS', default=4096, cast=int)

# Output transforms
TRANSFORM = config('TRANSFORM', default='softmax')
TEMPERATURE = config('TEMPERATURE', default=1.0, cast=float)
FIT_TRANSFORM = config('FIT_TRANSFORM', default='normalized-logits')
QUERY_TRANSFORM = config('QUERY_TRANSFORM', default='softmax')

# Whitening / PCA
WHITEN_DIM = config('WHITEN_DIM', default=200, cast=int)
EIGEN_FLOOR_RATIO = config('EIGEN_FLOOR_RATIO', default=1e-10, cast=float)

# SGD ICA
ICA_BATCH_SIZE = config('ICA_BATCH_SIZE', default=500, cast=int)
ICA_LEARNING_RATE = config('ICA_LEARNING_RATE', default=0.005, cast=float)
ICA_HALVING_PERIOD = config('ICA_HALVING_PERIOD', default=10, cast=int)
ICA_EPOCHS = config('ICA_EPOCHS', default=30, cast=int)
ICA_REORTHOGONALIZE_EVERY = config('ICA_REORTHOGONALIZE_EVERY', default=0, cast=int)
ICA_CORRECTION = config('ICA_CORRECTION', default='standard')

# Semantic features / CCA
MDS_MAX_DIM = config('MDS_MAX_DIM', default=1000, cast=int)
CCA_DIMS = config('CCA_DIMS', default=0, cast=int)  # 0 means "same as the visual dimension"
CCA_RIDGE_SCALE = config('CCA_RIDGE_SCALE', default=1e-6, cast=float)

# Evaluation
POOLS = config('POOLS', default='seen,unseen,both', cast=Csv())
TOP_K = config('TOP_K', default='1,2,5,10,20', cast=Csv(int))


# Logging configuration
LOG_LEVEL = config('LOG_LEVEL', default='INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {process:d} {thread:d} {message}',
            'style': '{',
        },
        'pipeline': {
            'format': '{levelname} {asctime} {name} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'level': 'DEBUG',
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
        'pipeline_console': {
            'level': 'DEBUG',
            'class': 'logging.StreamHandler',
            'formatter': 'pipeline',
        },
    },
    'root': {
        'handlers': ['console'],
        'level': 'WARNING',
    },
    'loggers': {
        'django': {
            'handlers': ['console'],
            'level': 'INFO',
            'propagate': False,
        },
        'core': {
            'handlers': ['pipeline_console'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
        'services': {
            'handlers': ['pipeline_console'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
    },
}

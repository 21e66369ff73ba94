"""
Django settings for the reduction_lab project.
"""

import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.environ.get('DJANGO_SECRET_KEY', 'django-insecure-change-me-in-production')

DEBUG = False

ALLOWED_HOSTS = []

# Application definition
INSTALLED_APPS = [
    'django.contrib.contenttypes',

    # Local apps
    'core',
]

# Database
DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': BASE_DIR / 'db.sqlite3',
    }
}

# Internationalization
LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = True
USE_TZ = True

# Default primary key field type
DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# Logging
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'standard': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'standard',
        },
    },
    'loggers': {
        'reduction': {
            'handlers': ['console'],
            'level': os.environ.get('REDUCTION_LOG_LEVEL', 'WARNING'),
            'propagate': False,
        },
        'experiments': {
            'handlers': ['console'],
            'level': os.environ.get('REDUCTION_LOG_LEVEL', 'WARNING'),
            'propagate': False,
        },
        'core': {
            'handlers': ['console'],
            'level': 'WARNING',
            'propagate': False,
        },
    },
}

# Reduction toolkit settings
# Any key left out falls back to reduction.conf.DEFAULTS
REDUCTION_CONFIG = {
    'tolerances': {
        'tol_norm': 1e-10,
        'tol_herm': 1e-10,
        'tol_psd': 1e-10,
        'tol_prob': 1e-12,
        'tol_num': 1e-9,
    },
    'simulation': {
        'sigma': 1.0,
        'dt_tau': 1e-3,
        'horizon_tau': 20.0,
        'record_stride': 100,
        'seed': 42,
    },
    'ensemble': {
        'batch_size': 500,
        'workers': int(os.environ.get('REDUCTION_WORKERS', 1)),
    },
    'verification': {
        'n_trajectories': 10000,
        'horizon_tau': 100.0,
        'record_stride': 250,
        'n_sigma': 3.0,
        'lambdas': [1.5, 2.0, 3.0],
    },
    'fixtures': {
        'directory': BASE_DIR / 'fixtures',
    },
}

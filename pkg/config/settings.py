"""
Django settings for the MTJ switching toolbox.

The project has no database, views or URL routing; Django supplies the
management-command framework, the settings layer and the test runner.
"""
import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.environ.get('MTJ_SECRET_KEY', 'django-insecure-mtj-engine-local-key')

DEBUG = os.environ.get('MTJ_DEBUG', '') == '1'

ALLOWED_HOSTS = []

# Application definition
INSTALLED_APPS = [
    'MTJEngine.mtj_app',
]

# No database is used; the dummy backend is installed when this is empty.
DATABASES = {}

# Internationalization
LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = False
USE_TZ = True

# Logging configuration
MTJ_LOG_LEVEL = os.environ.get('MTJ_LOG_LEVEL', 'INFO').upper()

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {process:d} {thread:d} {message}',
            'style': '{',
        },
        'simple': {
            'format': '{levelname} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'django': {
            'handlers': ['console'],
            'level': 'WARNING',
            'propagate': True,
        },
        'MTJEngine.mtj_app': {
            'handlers': ['console'],
            'level': MTJ_LOG_LEVEL,
            'propagate': False,
        },
    },
}

# Run-configuration defaults. A JSON config file is merged over these and
# command flags override both; keys absent here are rejected.

# Device fields other than m_s, volume, alpha and h_k_eff, which are required.
MTJ_DEVICE_DEFAULTS = {
    'delta': None,  # null = mu0*Ms*Hk*V/(2kT)
    'temperature': 300.0,  # K
    'polarization_p': 0.7,
    'eps_prime': 0.0,
    'm_p': [0.0, 0.0, 1.0],
}

MTJ_SOLVER_DEFAULTS = {
    'solver': 'spectral',  # 'spectral' or 'fvm'
    'mesh_cells': 512,
    'grading': 'uniform_theta',  # 'uniform_theta', 'uniform_cos' or 'tanh_refined'
    'tanh_stretch': 1.5,
    'n_coeffs': 200,
    'dtau': None,  # null = min(0.1, CFL, positivity bound)
    'theta_weight': 0.5,  # 0.5 Crank-Nicolson, 1.0 backward Euler
    'expm_method': 'pade',  # 'pade' or 'eig'
    'verify_generator': False,
    'relax_s': 0.0,  # zero-current window after the pulse, s
    'sllgs_dt': None,  # null = tau_d / 1000
    'jobs': 1,
}

MTJ_SWEEP_DEFAULTS = {
    'currents_a': [],
    'times_s': [],
    'read_currents_a': [],
    't_read_s': None,
    'h_ext_z': 0.0,  # A/m
    'n_samples': 100,
}

MTJ_FIT_DEFAULTS = {
    'free': ['m_s', 'h_k_eff', 'alpha', 'volume', 'polarization_p'],
    'bounds': {},
    'scales': {},
    'spread': 2.0,
    'hops': 50,
    'max_evaluations': None,
    'seed': 0,
    'weights': 'uniform',  # 'uniform' or 'high_current'
    'step_sigma': 0.1,
    'temperature': 1.0,
    'n_coeffs': None,  # null = solver.n_coeffs
    'wer_targets': [0.5, 1e-6, 1e-8],
}

MTJ_OUTPUT_DEFAULTS = {
    'path': '-',  # '-' streams to standard output
    'decimation': 1,
    'snapshots': 0,
}

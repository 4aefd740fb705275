"""
Runtime configuration for the intermittency bounds toolkit
"""
import os

# Execution settings
WORKERS = int(os.getenv('INTERMITTENCY_WORKERS', str(os.cpu_count() or 1)))
REPLICA_BLOCK_SIZE = int(os.getenv('REPLICA_BLOCK_SIZE', '128'))   # replicas per work unit

# Application settings
DEBUG_MODE = os.getenv('DEBUG_MODE', 'false').lower() == 'true'
LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')
LOG_FORMAT = os.getenv('LOG_FORMAT', 'json')                         # 'json' or 'plain'

# Simulation defaults
DEFAULT_BURN_IN = int(os.getenv('DEFAULT_BURN_IN', '10000'))         # discarded iterations
DEFAULT_CENTER_BUDGET = int(os.getenv('DEFAULT_CENTER_BUDGET', '1000000'))
MIN_CENTER_BUDGET = 100_000
MIN_STAT_REPLICAS = 100
HOLDER_EXACT_LIMIT = int(os.getenv('HOLDER_EXACT_LIMIT', '4096'))   # breakpoints

# Numerical tolerances
QUAD_REL_TOL = float(os.getenv('QUAD_REL_TOL', '1e-6'))
QUAD_MAX_PANELS = int(os.getenv('QUAD_MAX_PANELS', str(2 ** 16)))
BISECTION_TOL = float(os.getenv('BISECTION_TOL', '1e-12'))

# Output locations
RESULTS_DIR = os.getenv('RESULTS_DIR', 'results')
RUN_REGISTRY_DB = os.getenv('RUN_REGISTRY_DB', 'runs.db')

# Registry table names
TABLE_RUNS = 'runs'
TABLE_RUN_OUTPUTS = 'run_outputs'

ARTIFACT_VERSION = '0.3.0'

"""Runtime configuration for robocell.

All tunables come from the environment (optionally a .env file in the
working directory). CLI flags default to these values and override them.
"""

import os

from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Logging
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
LOG_FILE = os.getenv("LOG_FILE", "robocell.log")

# Grid discretization (meters)
GRID_SPACING = float(os.getenv("GRID_SPACING", "0.02"))
GRID_PADDING = float(os.getenv("GRID_PADDING", "0.06"))
BAND_CELLS = int(os.getenv("BAND_CELLS", "2"))

# Parallelism (0 = one worker per CPU)
WORKERS = int(os.getenv("WORKERS", "0"))

# Spatial queries
BVH_LEAF_SIZE = int(os.getenv("BVH_LEAF_SIZE", "8"))
WINDING_BETA = float(os.getenv("WINDING_BETA", "2.0"))

# Decimation
DECIMATE_TARGET = float(os.getenv("DECIMATE_TARGET", "0.6"))
DECIMATE_MAX_ERROR = float(os.getenv("DECIMATE_MAX_ERROR", "0.005"))
DECIMATE_CHECK_SAMPLES = int(os.getenv("DECIMATE_CHECK_SAMPLES", "20000"))
DECIMATE_MAX_RETRIES = int(os.getenv("DECIMATE_MAX_RETRIES", "3"))

# Trajectories
OUT_OF_LIMITS = os.getenv("OUT_OF_LIMITS", "reject").lower()
EXPLORATION_RATE_HZ = float(os.getenv("EXPLORATION_RATE_HZ", "25.0"))

# Bounding volume
BOUNDING_KIND = os.getenv("BOUNDING_KIND", "cube").lower()
BOUNDING_SCALE = float(os.getenv("BOUNDING_SCALE", "1.0"))

# Query service
MODEL_PATH = os.getenv("MODEL_PATH", "v_o.json")
CHAIN_PATH = os.getenv("CHAIN_PATH", "chain.json")


def effective_workers(workers=None) -> int:
    """Resolve a worker-count override (None/0 means WORKERS, then CPU count)."""
    n = workers if workers else WORKERS
    if not n:
        n = os.cpu_count() or 1
    return max(1, int(n))

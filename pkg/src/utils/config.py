"""
Configuration utilities for the rotationally-invariant regression bench.
Loads environment variables and provides numerical defaults across the application.
"""
import os
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables from .env file, expecting it at project root (2 levels up from this file).
dotenv_path = Path(__file__).resolve().parents[2] / '.env'
if dotenv_path.is_file():
    load_dotenv(dotenv_path=dotenv_path)
else:
    # Fallback to default python-dotenv behavior (searches current dir and parents)
    load_dotenv()

# Logging
LOG_LEVEL = os.getenv("LOG_LEVEL", "WARNING").upper()

# Quadrature orders (Gauss-Hermite, probabilists' normalization)
QUAD_ORDER = int(os.getenv("QUAD_ORDER", "61"))
QUAD2_ORDER = int(os.getenv("QUAD2_ORDER", "41"))

# Fixed-point solver
FIXED_POINT_TOL = float(os.getenv("FIXED_POINT_TOL", "1e-13"))
FIXED_POINT_MAX_ITER = int(os.getenv("FIXED_POINT_MAX_ITER", "10000"))
FIXED_POINT_DAMPING = float(os.getenv("FIXED_POINT_DAMPING", "1.0"))
FALLBACK_DAMPING = 0.5
RESIDUAL_TOL = float(os.getenv("RESIDUAL_TOL", "1e-10"))

# Frozen constant for the small-eps expansion checks
SMALL_EPS_CONSTANT = float(os.getenv("SMALL_EPS_CONSTANT", "10"))

# Exact enumeration
ENUMERATION_BUDGET = int(os.getenv("ENUMERATION_BUDGET", str(2 ** 20)))

# VAMP divergence guard: abort once an mse exceeds this multiple of rho_star
DIVERGENCE_FACTOR = float(os.getenv("DIVERGENCE_FACTOR", "1e3"))

# Worker pool
DEFAULT_THREADS = int(os.getenv("THREADS", str(os.cpu_count() or 1)))

# Output
OUTPUT_DIR = os.getenv("OUTPUT_DIR", "results")
CSV_FLOAT_FORMAT = "%.12g"
INSTANCE_FORMAT_VERSION = 1

# Weights & Biases (optional experiment tracking)
WANDB_API_KEY = os.getenv("WANDB_API_KEY")
WANDB_PROJECT = os.getenv("WANDB_PROJECT", "rotinv-bench")
WANDB_ENTITY = os.getenv("WANDB_ENTITY")  # Your W&B username or team name
WANDB_MODE = os.getenv("WANDB_MODE", "online")

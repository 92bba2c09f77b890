import os
from pathlib import Path
from dotenv import load_dotenv

load_dotenv()

BASE_DIR = Path(__file__).resolve().parent.parent
OUTPUT_DIR = Path(os.getenv("ADP_OUTPUT_DIR", str(BASE_DIR / "runs")))
LOG_LEVEL = os.getenv("ADP_LOG_LEVEL", "INFO").upper()

DEFAULT_SEED = int(os.getenv("ADP_SEED", "7"))
DEFAULT_WORKERS = int(os.getenv("ADP_WORKERS", "1"))
BLOCK_SIZE = int(os.getenv("ADP_BLOCK_SIZE", "10000"))

# Statistical validation thresholds
N_SAMPLES = int(os.getenv("ADP_N_SAMPLES", "100000"))
KS_CRITICAL_SCALE = float(os.getenv("ADP_KS_CRITICAL_SCALE", "1.95"))
CHI2_P_FLOOR = float(os.getenv("ADP_CHI2_P_FLOOR", "0.001"))

# Samplers
THINNING_WINDOW = float(os.getenv("ADP_THINNING_WINDOW", "1.0"))
MAX_THINNING_WINDOWS = int(os.getenv("ADP_MAX_THINNING_WINDOWS", "1000000"))
QUAD_ABS_TOL = 1e-10
QUAD_REL_TOL = 1e-10
QUAD_LIMIT = 200
PMF_TOL = 1e-12
ROOT_XTOL = 1e-12
BIN_N_MAX = 32

# Reinforcement learning
DEFAULT_RHO = float(os.getenv("ADP_RHO", "1e6"))
DIVERGENCE_PATIENCE = int(os.getenv("ADP_DIVERGENCE_PATIENCE", "50"))

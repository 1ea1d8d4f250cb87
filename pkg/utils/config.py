"""Application configuration settings.

This module centralises configuration constants and helper functions
for reading environment variables.  Every default used by the training
loops, the summary generator and the command line lives here so that a
run can be re-targeted (small or full-size networks, other budgets,
another data root) without touching code.
"""

from __future__ import annotations

import os

# Optionally load a .env file if python-dotenv is installed.
try:  # pragma: no cover - optional convenience
    from dotenv import load_dotenv  # type: ignore

    load_dotenv()
except Exception:
    pass


def _get_env(key: str, default: str) -> str:
    """Return the value of an environment variable or a default.

    Args:
        key (str): Environment variable name.
        default (str): Default value if the variable is not present.

    Returns:
        str: The environment value or default.
    """
    return os.environ.get(key, default)


# Root directory for corpora and run outputs.
DATA_ROOT: str = _get_env("VSUMM_DATA_ROOT", "data")

LOG_LEVEL: str = _get_env("VSUMM_LOG_LEVEL", "INFO").upper()

# Summaries must stay below this fraction of the video duration.
BUDGET_FRACTION: float = float(_get_env("VSUMM_BUDGET", "0.15"))

# Working frame rate after subsampling.
TARGET_FPS: float = float(_get_env("VSUMM_FPS", "2"))

# Repeated runs per experiment setting.
RUNS: int = int(_get_env("VSUMM_RUNS", "5"))
SEED: int = int(_get_env("VSUMM_SEED", "0"))

# Network sizes.  256 everywhere reproduces the full-scale networks.
HIDDEN_SIZE: int = int(_get_env("VSUMM_HIDDEN", "16"))
MLP_HIDDEN: int = int(_get_env("VSUMM_MLP_HIDDEN", "16"))
EMBED_DIM: int = int(_get_env("VSUMM_EMBED_DIM", "16"))
INIT_SCALE: float = float(_get_env("VSUMM_INIT_SCALE", "0.05"))
FRAME_WINDOW: int = int(_get_env("VSUMM_FRAME_WINDOW", "5"))

# Optimisation.
LEARNING_RATE: float = float(_get_env("VSUMM_LR", "0.05"))
MOMENTUM: float = float(_get_env("VSUMM_MOMENTUM", "0.9"))
GRAD_CLIP: float = float(_get_env("VSUMM_GRAD_CLIP", "5.0"))
EPOCHS_MAX: int = int(_get_env("VSUMM_EPOCHS", "100"))
PATIENCE_K: int = int(_get_env("VSUMM_PATIENCE", "5"))
STAGE2_LR_SCALE: float = float(_get_env("VSUMM_STAGE2_LR_SCALE", "0.1"))

# Numerics.
JITTER: float = float(_get_env("VSUMM_JITTER", "1e-10"))

# Segmentation: about 5 seconds per shot at 2 fps.
KTS_TARGET_MEAN_LEN: int = int(_get_env("VSUMM_KTS_MEAN_LEN", "10"))

# Split ratios.
VAL_FRACTION: float = float(_get_env("VSUMM_VAL_FRACTION", "0.2"))
TEST_FRACTION: float = float(_get_env("VSUMM_TEST_FRACTION", "0.2"))

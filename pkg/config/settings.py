"""
Kernel Lab Settings

Process-level configuration read from the environment (and .env).
Experiment parameters live in experiment files, see config/experiment.py.
"""

import os
from pathlib import Path

from dotenv import load_dotenv

# Load environment variables (override=True to override existing empty vars)
load_dotenv(override=True)


class Settings:
    """Application settings loaded from environment."""

    def __init__(self):
        # Logging
        self.log_level = os.getenv("LOG_LEVEL", "INFO")

        # Worker count for concurrent trials; blank means one per CPU
        self.parallelism_raw = os.getenv("OKL_PARALLELISM") or ""
        self.parallelism = self._parse_parallelism(self.parallelism_raw)

        # Where runs write errors.csv / fit.csv / plots when the experiment file doesn't say
        self.output_dir = Path(os.getenv("OKL_OUTPUT_DIR", "results")).expanduser()

        # Seeds used when an experiment file leaves them out
        self.default_seeds = int(os.getenv("OKL_DEFAULT_SEEDS", "50"))
        self.base_seed = int(os.getenv("OKL_BASE_SEED", "0"))

    @staticmethod
    def _parse_parallelism(raw: str) -> int:
        if not raw:
            return os.cpu_count() or 1
        try:
            return int(raw)
        except ValueError:
            return 0

    def validate(self) -> list[str]:
        """Validate settings; returns a list of problems (empty when fine)."""
        errors = []

        if self.parallelism < 1:
            errors.append(f"OKL_PARALLELISM must be a positive integer (got {self.parallelism_raw!r})")
        if self.default_seeds < 1:
            errors.append("OKL_DEFAULT_SEEDS must be >= 1")
        if self.log_level.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            errors.append(f"LOG_LEVEL {self.log_level!r} is not a logging level")

        return errors


# Global settings instance
settings = Settings()

"""Configuration loaded from environment variables."""

import os
from dataclasses import dataclass

try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass  # dotenv optional; plain env vars work the same


@dataclass(frozen=True)
class Config:
    # Worker pool
    qlab_threads: int = int(os.getenv("QLAB_THREADS", "4"))

    # Run defaults (overridden by CLI flags)
    default_out_dir: str = os.getenv("QLAB_OUT_DIR", "qlab-out")
    default_seed: int = int(os.getenv("QLAB_SEED", "0"))

    # Logging
    log_level: str = os.getenv("LOG_LEVEL", "INFO")


config = Config()

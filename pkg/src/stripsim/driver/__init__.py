from .config import ConfigError, RunConfig, load_config
from .pipeline import Model, StageError, build_model, run_model

__all__ = ["ConfigError", "Model", "RunConfig", "StageError", "build_model", "load_config", "run_model"]

"""HTTP service wrapping the core package."""

from .app import create_app
from .config import ConfigError, ServiceConfig, StudyMode, load_question_bank, load_service_config
from .store import DocumentStore, StoreError

__all__ = [
    "ConfigError",
    "DocumentStore",
    "ServiceConfig",
    "StoreError",
    "StudyMode",
    "create_app",
    "load_question_bank",
    "load_service_config",
]

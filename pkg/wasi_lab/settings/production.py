"""
Production settings for the wasi_lab project: batch runs on shared machines,
logs shipped as JSON lines.
"""
from .base import *  # Import all base settings

SECRET_KEY = env_validator.get_required("SECRET_KEY", "Django secret key")

DEBUG = False

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "json": {
            "()": "pythonjsonlogger.json.JsonFormatter",
            "fmt": "%(levelname)s %(asctime)s %(name)s %(process)d %(message)s",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "json",
        },
    },
    "root": {
        "handlers": ["console"],
        "level": WASI["LOG_LEVEL"],
    },
    "loggers": {
        "django": {
            "handlers": ["console"],
            "level": "WARNING",
            "propagate": False,
        },
    },
}

# Validate all production settings
env_validator.validate_and_raise()

"""
Django base settings for the wasi_lab project.
Contains settings that are common between all environments.
"""
from pathlib import Path

from dotenv import load_dotenv
import sentry_sdk

from .env_utils import EnvValidator, get_environment

# ───────────────────────────────────────────────────────────
# Paths & env
# ───────────────────────────────────────────────────────────
BASE_DIR = Path(__file__).resolve().parent.parent.parent
env_file = BASE_DIR / ".env"
if env_file.exists():
    load_dotenv(env_file)

# Initialize environment validator
ENVIRONMENT = get_environment()
env_validator = EnvValidator(ENVIRONMENT)

# ───────────────────────────────────────────────────────────
# Installed apps
# ───────────────────────────────────────────────────────────
INSTALLED_APPS = [
    "django.contrib.contenttypes",
    "django.contrib.auth",
    # third-party
    "rest_framework",
    # local
    "core",
    "tensor_core",
    "subspace",
    "autodiff",
    "rank_select",
    "cost_model",
    "training",
]

# The engine keeps all state on disk as JSON manifests and raw blobs.
DATABASES = {}

# ───────────────────────────────────────────────────────────
# Internationalization
# ───────────────────────────────────────────────────────────
LANGUAGE_CODE = "en-us"
TIME_ZONE = "UTC"
USE_I18N = False
USE_TZ = True

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

REST_FRAMEWORK = {
    "UNAUTHENTICATED_USER": None,
}

# ───────────────────────────────────────────────────────────
# Engine defaults
# ───────────────────────────────────────────────────────────
WASI = env_validator.validate_engine_config()

# ───────────────────────────────────────────────────────────
# Sentry
# ───────────────────────────────────────────────────────────
sentry_dsn = env_validator.get_optional("SENTRY_DSN", "")
if sentry_dsn:
    sentry_sdk.init(
        dsn=sentry_dsn,
        traces_sample_rate=0.0,
        environment=ENVIRONMENT,
    )

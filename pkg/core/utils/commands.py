"""
Base class for the engine's management commands.

Every command accepts --config, --output-dir and --seed, reads its own TOML
section, and turns engine exceptions into exit codes:
0 success, 2 usage/input, 3 infeasible constraint, 4 numeric failure.
"""
import logging
from pathlib import Path
from typing import Any, Dict

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from rest_framework.exceptions import ValidationError

from core.utils.artifacts import ensure_output_dir
from core.utils.config_file import config_section, load_config, merge_options
from rank_select.services.selection import InfeasibleConstraintError
from tensor_core.services.tensor_ops import NonFiniteError
from training.services.trainer import NonFiniteLossError

logger = logging.getLogger(__name__)

EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERIC = 4


class EngineCommand(BaseCommand):
    config_section_name = ""

    def add_arguments(self, parser):
        parser.add_argument("--config", help="TOML run configuration file")
        parser.add_argument("--output-dir", help="Directory for artifacts (default: WASI_OUTPUT_DIR)")
        parser.add_argument("--seed", type=int, help="Random seed (default: WASI_SEED)")
        self.add_engine_arguments(parser)

    def add_engine_arguments(self, parser):
        pass

    def run(self, options: Dict[str, Any]):
        raise NotImplementedError

    def handle(self, *args, **options):
        try:
            self.config = load_config(options.get("config"))
            return self.run(options)
        except CommandError:
            raise
        except InfeasibleConstraintError as exc:
            raise CommandError(str(exc), returncode=EXIT_INFEASIBLE) from exc
        except (NonFiniteLossError, NonFiniteError) as exc:
            raise CommandError(str(exc), returncode=EXIT_NUMERIC) from exc
        except ValidationError as exc:
            raise CommandError(f"Invalid configuration: {exc.detail}", returncode=EXIT_USAGE) from exc
        except (ValueError, OSError) as exc:
            raise CommandError(str(exc), returncode=EXIT_USAGE) from exc

    # ------------------------------------------------------------------

    def section(self, name: str = "", **cli_values) -> Dict[str, Any]:
        """The command's TOML section with command-line values layered on top."""
        return merge_options(config_section(self.config, name or self.config_section_name), cli_values)

    def resolve_seed(self, options: Dict[str, Any], section: Dict[str, Any]) -> int:
        if options.get("seed") is not None:
            return int(options["seed"])
        return int(section.get("seed", settings.WASI["SEED"]))

    def output_dir(self, options: Dict[str, Any], section: Dict[str, Any]) -> Path:
        return ensure_output_dir(options.get("output_dir") or section.get("output_dir") or settings.WASI["OUTPUT_DIR"])

    def usage_error(self, message: str) -> CommandError:
        return CommandError(message, returncode=EXIT_USAGE)

import logging
from pathlib import Path
from typing import Any, Optional

import click
from pydantic import ValidationError

from bevfuse.config import settings
from bevfuse.errors import BevFuseError, ConfigError, wrapped_error
from bevfuse.models.run import RunConfig
from bevfuse.services.storage_service import storage_service

logger = logging.getLogger(__name__)

MODES = ["multimodal", "visible", "uls"]
SPLITS = ["train", "val", "test"]


# Shared options
def config_options(func):
    func = click.option("--preset", type=click.Choice(["desk", "fidelity"]), default=None, help="Preset when no --config is given")(func)
    func = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="Run configuration JSON")(func)
    return func


def load_config(config_path: Optional[str], preset: Optional[str], **overrides: Any) -> RunConfig:
    """Config file (or preset) with flag overrides; relative file references resolve against the config's directory"""
    if config_path is not None:
        config = storage_service.load_run_config(config_path)
        base = Path(config_path).parent
        resolved = {
            name: str(storage_service.resolve(base, getattr(config, name)))
            for name in ("layout_path", "calibration_path")
            if getattr(config, name) is not None
        }
        config = config.with_overrides(**resolved)
    else:
        try:
            config = RunConfig.preset_named(preset or settings.DEFAULT_PRESET)
        except ValueError as e:
            raise ConfigError(str(e))
    try:
        return config.with_overrides(**overrides)
    except ValidationError as e:
        raise wrapped_error(e) or ConfigError(f"invalid override: {e.errors()[0]['msg']}")
    except ValueError as e:
        raise ConfigError(str(e))


def fail(error: Exception) -> None:
    """Print the one-line error and exit with status 1"""
    if isinstance(error, BevFuseError):
        line = error.render()
    elif isinstance(error, ValidationError):
        line = (wrapped_error(error) or ConfigError(error.errors()[0]["msg"])).render()
    elif isinstance(error, OSError):
        line = f"ERROR io: {error}"
    else:
        line = f"ERROR bevfuse: {error}"
    logger.debug("❌ Error: %s", line)
    click.echo(line, err=True)
    raise SystemExit(1)


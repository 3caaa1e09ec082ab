from typing import Optional

from pydantic import ValidationError


class BevFuseError(ValueError):
    """Base error; `domain` names the module the failure belongs to"""

    domain = "bevfuse"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message

    def render(self) -> str:
        """One-line machine-parsable form used by the CLI"""
        return f"ERROR {self.domain}: {self.message}"


class GeometryError(BevFuseError):
    domain = "geometry"


class FisheyeError(BevFuseError):
    domain = "fisheye"


class ConvergenceError(FisheyeError):
    """Newton inversion did not converge"""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


class UltrasonicError(BevFuseError):
    domain = "ultrasonic"


class SyncError(BevFuseError):
    domain = "sync"


class NNError(BevFuseError):
    domain = "nn"


class MetricsError(BevFuseError):
    domain = "metrics"


class SimError(BevFuseError):
    domain = "sim"


class ConfigError(BevFuseError):
    domain = "config"


class RenderError(BevFuseError):
    domain = "render"


def wrapped_error(error: ValidationError) -> Optional[BevFuseError]:
    """Domain error raised inside a model validator, when that is what failed first"""
    details = error.errors()
    inner = details[0].get("ctx", {}).get("error") if details else None
    return inner if isinstance(inner, BevFuseError) else None

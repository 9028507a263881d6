import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

from dotenv import load_dotenv

from app.core.errors import ConfigurationError

load_dotenv()

# Configure logging
logger = logging.getLogger(__name__)

DEFAULT_OUT_DIR = "results"
DEFAULT_LOG_LEVEL = "INFO"
DEFAULT_MAX_DENSE_N = 32

SIM_KEYS = (
    "grid_n", "box_L", "eps", "p", "lam", "dt", "T", "seed", "stream",
    "scheme", "snapshot_every", "renormalize", "dealias", "datum_width",
)
CAMPAIGN_KEYS = (
    "ladder", "realizations", "r", "delta", "alpha", "a", "norm_s", "norm_mu", "workers",
)
# Accepted spellings that map onto a canonical key
KEY_ALIASES = {"lambda": "lam", "L": "box_L", "n": "grid_n", "epsilon": "eps"}


def _env_int(name: str, default: int) -> int:
    try:
        return int(os.environ.get(name, default))
    except (ValueError, TypeError):
        logger.warning(f"Invalid {name} environment variable, using default: {default}")
        return default


OUT_DIR = os.environ.get("SNLS_OUT_DIR", DEFAULT_OUT_DIR)
LOG_LEVEL = os.environ.get("SNLS_LOG_LEVEL", DEFAULT_LOG_LEVEL).upper()
WORKERS = _env_int("SNLS_WORKERS", os.cpu_count() or 1)
MAX_DENSE_N = _env_int("SNLS_MAX_DENSE_N", DEFAULT_MAX_DENSE_N)


def parse_config_text(text: str, allowed: Optional[Iterable[str]] = None) -> Dict[str, str]:
    """
    Parse a flat ``key = value`` configuration text.

    Args:
        text: File content; ``#`` starts a comment, blank lines are ignored
        allowed: Keys accepted; defaults to simulation plus campaign keys

    Returns:
        Mapping of canonical key to raw string value
    """
    allowed_keys = set(allowed) if allowed is not None else set(SIM_KEYS) | set(CAMPAIGN_KEYS)
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = KEY_ALIASES.get(key, key)
        if key not in allowed_keys:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def load_config_file(path: str, allowed: Optional[Iterable[str]] = None) -> Dict[str, str]:
    """Read and parse a run config file (UTF-8)."""
    file_path = Path(path)
    if not file_path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    logger.info(f"Loading run config from {file_path}")
    return parse_config_text(file_path.read_text(encoding="utf-8"), allowed)


def merge_overrides(values: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """Overlay non-None CLI overrides onto file values."""
    merged = dict(values)
    for key, value in overrides.items():
        if value is not None:
            merged[KEY_ALIASES.get(key, key)] = value
    return merged


def parse_ladder(value: Any) -> list:
    """Parse a ladder given as '0.25, 0.125' or as dyadic exponents '2^-2, 2^-3'."""
    if isinstance(value, (list, tuple)):
        return [float(v) for v in value]
    ladder = []
    for token in str(value).replace(";", ",").split(","):
        token = token.strip()
        if not token:
            continue
        try:
            if token.startswith("2^"):
                ladder.append(2.0 ** float(token[2:]))
            else:
                ladder.append(float(token))
        except ValueError:
            raise ConfigurationError(f"invalid ladder entry {token!r}")
    if not ladder:
        raise ConfigurationError("empty ladder")
    return ladder

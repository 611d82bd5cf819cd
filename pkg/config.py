import logging
import os
from pathlib import Path

from dotenv import load_dotenv, dotenv_values

from errors import ConfigurationError

# --------------------------------------------------
# Environment (SINGLE SOURCE OF TRUTH)
# --------------------------------------------------
load_dotenv()

DEFAULT_SEED = 0
LOG_FORMAT = "[%(name)s] %(levelname)s %(message)s"


def get_setting(key, default=None):
    """
    Fetch a MELODYFLOW_* setting from the environment (or .env).
    Returns default when the variable is unset or blank.
    """
    value = os.environ.get(f"MELODYFLOW_{key.upper()}")
    if value is None or not value.strip():
        return default
    return value.strip()


def get_env():
    return get_setting("env", "dev")


def get_device():
    return get_setting("device", "cpu")


def resolve_seed(flag_value=None):
    """
    --seed wins; otherwise MELODYFLOW_SEED; otherwise 0.
    """
    if flag_value is not None:
        return int(flag_value)
    raw = get_setting("seed")
    if raw is None:
        return DEFAULT_SEED
    try:
        return int(raw)
    except ValueError:
        raise ConfigurationError(f"MELODYFLOW_SEED is not an integer: {raw!r}")


def configure_logging(level=None):
    level = level or get_setting("log_level", "INFO")
    logging.basicConfig(level=level.upper(), format=LOG_FORMAT, force=True)


def guard_output_dir(path, force=False):
    """
    In prod, refuse to write into an existing non-empty directory.
    """
    out = Path(path)
    if get_env() == "prod" and not force and out.is_dir() and any(out.iterdir()):
        raise ConfigurationError(
            f"{out} is not empty; refusing to overwrite in prod (use --force)"
        )
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------
# Flat KEY=VALUE config files
# --------------------------------------------------
def read_config_file(path):
    """
    Parse a flat KEY=VALUE file. Keys are lower-cased;
    blank values are dropped so dataclass defaults apply.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    values = dotenv_values(path)
    return {
        k.strip().lower(): v.strip()
        for k, v in values.items()
        if v is not None and v.strip()
    }


def parse_weights(text):
    """
    "con=1,mel=0" -> {"con": 1.0, "mel": 0.0}
    """
    weights = {}
    for item in text.split(","):
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigurationError(f"expected NAME=VALUE, got {item!r}")
        try:
            weights[key.strip().lower()] = float(value)
        except ValueError:
            raise ConfigurationError(f"weight for {key.strip()!r} is not a number: {value!r}")
    return weights

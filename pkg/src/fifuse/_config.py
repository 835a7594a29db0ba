"""
Configuration management for fifuse.

This module handles explainer, fusion and runtime settings, user-level
defaults stored on disk, and environment variable overrides.
"""

from typing import Dict, Any, Optional, Union
from pathlib import Path
import json
import logging
import os
from dataclasses import dataclass, asdict, field
import appdirs

logger = logging.getLogger(__name__)


@dataclass
class ExplainerConfig:
    """Configuration for attribution methods."""
    pi_repeats: int = 5
    exact_limit: int = 12
    shap_permutations: int = 100
    background_k: int = 25
    explain_rows: int = 100
    summarize_background: bool = True
    enforce_efficiency: bool = True
    ig_steps: int = 100


@dataclass
class FusionConfig:
    """Configuration for ensemble strategies."""
    alpha: float = 0.05
    bin_width: float = 0.05


@dataclass
class RuntimeConfig:
    """Configuration for seeds, workers and logging."""
    seed: int = 0
    jobs: int = 1
    log_level: str = "INFO"


@dataclass
class FifuseConfig:
    """Main configuration class for fifuse."""
    explainers: ExplainerConfig = field(default_factory=ExplainerConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    runtime: RuntimeConfig = field(default_factory=RuntimeConfig)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'FifuseConfig':
        return cls(
            explainers=ExplainerConfig(**data.get('explainers', {})),
            fusion=FusionConfig(**data.get('fusion', {})),
            runtime=RuntimeConfig(**data.get('runtime', {}))
        )


class ConfigManager:
    """
    User-level defaults persisted as JSON under the platform config directory.

    Parameters
    ----------
    app_name : str
        Directory name used by appdirs when ``config_dir`` is not given.
    config_dir : str or Path, optional
        Explicit location of ``config.json``.
    """

    def __init__(self, app_name: str = "fifuse", config_dir: Optional[Union[str, Path]] = None):
        self.app_name = app_name
        root = config_dir if config_dir is not None else appdirs.user_config_dir(app_name)
        self._config_dir = Path(root)
        self._config_file = self._config_dir / "config.json"
        self._config: Optional[FifuseConfig] = None

    @property
    def config(self) -> FifuseConfig:
        if self._config is None:
            self._config = self.load_config()
        return self._config

    def load_config(self) -> FifuseConfig:
        """Read the stored settings; defaults when absent or unreadable."""
        if not self._config_file.is_file():
            return FifuseConfig()
        try:
            stored = json.loads(self._config_file.read_text())
            return FifuseConfig.from_dict(stored)
        except (json.JSONDecodeError, KeyError, TypeError, AttributeError) as e:
            logger.warning(f"Ignoring unreadable {self._config_file}: {e}")
            return FifuseConfig()

    def save_config(self, config: Optional[FifuseConfig] = None) -> bool:
        """Write ``config`` (or the current one); False if the write fails."""
        target = config if config is not None else self.config
        try:
            self._config_dir.mkdir(parents=True, exist_ok=True)
            self._config_file.write_text(json.dumps(target.to_dict(), indent=2))
        except (OSError, TypeError) as e:
            logger.error(f"Could not write {self._config_file}: {e}")
            return False
        self._config = target
        return True

    def reset_to_defaults(self) -> FifuseConfig:
        defaults = FifuseConfig()
        self.save_config(defaults)
        self._config = defaults
        return defaults

    def update_config(self, **sections: Dict[str, Any]) -> bool:
        """
        Change selected fields and persist the result.

        Parameters
        ----------
        **sections
            ``explainers``, ``fusion`` or ``runtime`` mapped to the fields
            to change. Unknown sections and fields are skipped.

        Returns
        -------
        bool
            Whether the updated settings were written.
        """
        current = self.config
        for name, changes in sections.items():
            target = getattr(current, name, None)
            if target is None:
                logger.warning(f"Skipping unknown config section '{name}'")
                continue
            for key, value in changes.items():
                if not hasattr(target, key):
                    logger.warning(f"Skipping unknown setting '{name}.{key}'")
                    continue
                setattr(target, key, value)
        return self.save_config(current)

    def get_config_path(self) -> Path:
        return self._config_file


_config_manager: Optional[ConfigManager] = None


def get_config_manager() -> ConfigManager:
    """Process-wide manager, created on first use."""
    global _config_manager
    if _config_manager is None:
        _config_manager = ConfigManager()
    return _config_manager


def get_config() -> FifuseConfig:
    return get_config_manager().config


def _env_int(name: str) -> Optional[int]:
    raw = os.getenv(name)
    if not raw:
        return None
    try:
        return int(raw)
    except ValueError:
        logger.warning(f"Ignoring malformed {name}={raw!r}")
        return None


def apply_env_overrides(config: FifuseConfig) -> FifuseConfig:
    """Overlay FIFUSE_* variables onto ``config`` in place and return it."""
    seed = _env_int('FIFUSE_SEED')
    if seed is not None:
        config.runtime.seed = seed

    jobs = _env_int('FIFUSE_JOBS')
    if jobs is not None:
        config.runtime.jobs = max(1, jobs)

    level = os.getenv('FIFUSE_LOG_LEVEL')
    if level:
        config.runtime.log_level = level.upper()

    steps = _env_int('FIFUSE_IG_STEPS')
    if steps is not None and steps >= 1:
        config.explainers.ig_steps = steps

    repeats = _env_int('FIFUSE_PI_REPEATS')
    if repeats is not None and repeats >= 1:
        config.explainers.pi_repeats = repeats

    return config


def get_effective_config() -> FifuseConfig:
    """Stored settings with environment overrides, leaving the stored copy untouched."""
    config = FifuseConfig.from_dict(get_config().to_dict())
    return apply_env_overrides(config)

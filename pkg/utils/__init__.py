"""
PlantWatch - Configuration, logging and network helpers shared by every component.
"""

import asyncio
import copy
import logging
import os
import socket
import time
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import yaml
from rich.logging import RichHandler


@dataclass
class Endpoint:
    """A TCP endpoint one component dials."""
    host: str
    port: int

    def __str__(self) -> str:
        return f"{self.host}:{self.port}"


@dataclass
class ConnectionStats:
    """Per-connection traffic counters."""
    bytes_sent: int = 0
    bytes_received: int = 0
    frames_sent: int = 0
    frames_received: int = 0
    exceptions: int = 0
    connection_time: float = 0.0


class Config:
    """Configuration manager for PlantWatch."""

    def __init__(self, config_path: str = "config/config.yaml"):
        self.config_path = config_path
        self.config: Dict[str, Any] = {}
        self.load_config()

    def load_config(self) -> None:
        """Load configuration from YAML file."""
        try:
            with open(self.config_path, 'r', encoding='utf-8') as f:
                self.config = yaml.safe_load(f) or {}
        except FileNotFoundError:
            logging.warning(f"Config file {self.config_path} not found, using defaults")
            self.config = self._get_default_config()
        except yaml.YAMLError as e:
            logging.error(f"Error parsing config file: {e}")
            self.config = self._get_default_config()

    def get(self, key: str, default: Any = None) -> Any:
        """Get configuration value by dotted key."""
        keys = key.split('.')
        value = self.config

        for k in keys:
            if isinstance(value, dict) and k in value:
                value = value[k]
            else:
                return default

        return value

    def override(self, key: str, value: Any) -> None:
        """Set a dotted key, creating intermediate sections."""
        keys = key.split('.')
        section = self.config
        for k in keys[:-1]:
            if not isinstance(section.get(k), dict):
                section[k] = {}
            section = section[k]
        section[keys[-1]] = value

    def copy(self) -> "Config":
        """Independent copy, so one run can override ports or seeds freely."""
        clone = Config.__new__(Config)
        clone.config_path = self.config_path
        clone.config = copy.deepcopy(self.config)
        return clone

    def _get_default_config(self) -> Dict[str, Any]:
        """Get default configuration."""
        return {
            'network': {
                'host': '127.0.0.1',
                'connect_timeout': 2.0,
                'request_timeout': 2.0
            },
            'clock': {
                'dt': 1.0,
                'acceleration': 20.0
            },
            'seeds': {
                'noise': 7,
                'split': 11,
                'iforest': 3
            },
            'detection': {
                'nu': 0.05,
                'gamma': 'auto',
                'tol': 1e-4
            },
            'harness': {
                'output_dir': 'runs'
            },
            'logging': {
                'level': 'INFO',
                'file': 'logs/plantwatch.log'
            }
        }


class NetworkUtils:
    """Network utility functions."""

    @staticmethod
    async def wait_for_port(host: str, port: int, timeout: float = 5.0) -> Tuple[float, bool]:
        """
        Wait until a TCP port accepts connections.

        Args:
            host: Target hostname or IP
            port: Target port
            timeout: Overall deadline in seconds

        Returns:
            Tuple of (elapsed_ms, success)
        """
        start_time = time.monotonic()

        while time.monotonic() - start_time < timeout:
            try:
                reader, writer = await asyncio.wait_for(
                    asyncio.open_connection(host, port), timeout=timeout
                )
                writer.close()
                await writer.wait_closed()
                return (time.monotonic() - start_time) * 1000, True
            except (asyncio.TimeoutError, OSError):
                await asyncio.sleep(0.05)

        return 0.0, False

    @staticmethod
    def is_port_in_use(port: int, host: str = "127.0.0.1") -> bool:
        """Check if a port is already in use."""
        try:
            with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as s:
                s.bind((host, port))
                return False
        except OSError:
            return True


class Logger:
    """Logging setup and utilities."""

    @staticmethod
    def setup_logging(config: Config) -> None:
        """Set up logging configuration."""
        log_level = config.get('logging.level', 'INFO')
        log_file = config.get('logging.file', 'logs/plantwatch.log')

        log_dir = os.path.dirname(log_file)
        if log_dir:
            os.makedirs(log_dir, exist_ok=True)

        logging.basicConfig(
            level=getattr(logging, log_level.upper()),
            format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            handlers=[
                logging.FileHandler(log_file),
                RichHandler(show_path=False, rich_tracebacks=True)
            ],
            force=True
        )


def format_duration(seconds: Optional[float]) -> str:
    """Format a simulated duration for reports."""
    if seconds is None:
        return "n/a"
    if seconds < 60:
        return f"{seconds:.1f}s"
    if seconds < 3600:
        return f"{seconds / 60:.1f}min"
    return f"{seconds / 3600:.2f}h"


def format_rate(rate: Optional[float]) -> str:
    """Format a TPR/FPR style ratio as a percentage."""
    if rate is None:
        return "n/a"
    return f"{rate * 100:.1f}%"

"""Resolved run configuration: a command name plus its parameter mapping.

Every stochastic step downstream derives from the single master seed carried
here, and outputs embed the resolved configuration so runs can be reproduced
exactly. Serialization is plain JSON and round-trips losslessly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

__all__ = ["ConfigError", "RunConfig"]

_COMMANDS = ("analyze", "simulate", "report")


class ConfigError(ValueError):
    """Malformed configuration."""


@dataclass(frozen=True)
class RunConfig:
    command: str
    params: dict

    def __post_init__(self) -> None:
        if self.command not in _COMMANDS:
            raise ConfigError(f"unknown command '{self.command}'")
        try:
            json.dumps(self.params)
        except TypeError as exc:
            raise ConfigError(f"parameters are not JSON-serializable: {exc}") from exc

    def to_dict(self) -> dict:
        return {"command": self.command, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, payload: dict) -> "RunConfig":
        return cls(command=payload["command"], params=dict(payload["params"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def load_overrides(path: str | Path) -> dict:
    """Read a flat JSON mapping of option overrides."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    payload = json.loads(p.read_text())
    if not isinstance(payload, dict):
        raise ConfigError("config file must contain a JSON object")
    return payload

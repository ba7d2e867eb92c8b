"""Flat ``key = value`` experiment configuration.

Lines starting with ``#`` and blank lines are ignored. Keys are dotted
(``domain.b``, ``recon.gamma``). A config naming a built-in scenario
(``scenario.name = S1``) inherits that scenario's keys; anything given in
the file overrides them.

Recognised keys and defaults are listed in :data:`DEFAULTS` and in the
README.
"""

from __future__ import annotations

import hashlib
import re
from pathlib import Path

from .scenarios import BUILTIN

DEFAULTS: dict[str, str] = {
    "carleman.lambda": "auto",
    "carleman.lambda1": "5",
    "carleman.lambda_max": "40",
    "carleman.eps": "auto",
    "carleman.normalize": "true",
    "carleman.lambdas": "5,10,20,40",
    "carleman.family_size": "24",
    "carleman.theorem": "3.1",
    "forward.theta": "0.5",
    "forward.tol": "1e-10",
    "forward.max_iters": "200",
    "recon.gamma": "1e-4",
    "recon.beta": "auto",
    "recon.beta_factor": "1e-8",
    "recon.max_iters": "60",
    "recon.gtol": "1e-10",
    "recon.init": "zero",
    "recon.source": "closed_form",
    "recon.multistart": "0",
    "recon.delta": "0",
    "sweep.deltas": "1e-2,1e-3,1e-4",
    "sweep.slope_tolerance": "0.02",
    "sweep.floor_factor": "5",
    "sweep.monotone_slack": "1.5",
    "sweep.allow_gate_override": "true",
    "sweep.workers": "1",
    "uniqueness.factor": "10",
    "run.seed": "0",
}

_KEY = re.compile(r"^[a-z][a-z0-9_]*\.[A-Za-z0-9_]+$")
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class ConfigError(ValueError):
    pass


class Config:
    """Read-only mapping of string values with typed accessors."""

    def __init__(self, values: dict[str, str]):
        self._values = dict(values)

    @classmethod
    def parse(cls, text: str, source: str = "<string>") -> Config:
        raw: dict[str, str] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
            key, value = (s.strip() for s in stripped.split("=", 1))
            if not _KEY.match(key):
                raise ConfigError(f"{source}:{lineno}: malformed key {key!r}")
            if key in raw:
                raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
            raw[key] = value
        return cls.resolve(raw)

    @classmethod
    def load(cls, path: str | Path) -> Config:
        path = Path(path)
        return cls.parse(path.read_text(), str(path))

    @classmethod
    def resolve(cls, raw: dict[str, str]) -> Config:
        merged = dict(DEFAULTS)
        name = raw.get("scenario.name")
        if name in BUILTIN:
            merged.update(BUILTIN[name])
        merged.update(raw)
        return cls(merged)

    @classmethod
    def builtin(cls, name: str, **overrides) -> Config:
        if name not in BUILTIN:
            raise ConfigError(f"unknown scenario {name!r}; built-ins: {', '.join(BUILTIN)}")
        raw = {"scenario.name": name, **{k.replace("__", "."): str(v) for k, v in overrides.items()}}
        return cls.resolve(raw)

    def with_overrides(self, overrides: dict[str, str]) -> Config:
        return Config({**self._values, **{k: str(v) for k, v in overrides.items()}})

    # access ---------------------------------------------------------------

    def __contains__(self, key: str) -> bool:
        return key in self._values

    def __getitem__(self, key: str) -> str:
        try:
            return self._values[key]
        except KeyError:
            raise ConfigError(f"missing config key {key!r}") from None

    def get(self, key: str, default: str | None = None) -> str | None:
        return self._values.get(key, default)

    def as_dict(self) -> dict[str, str]:
        return dict(sorted(self._values.items()))

    def float(self, key: str) -> float:
        try:
            return float(self[key])
        except ValueError:
            raise ConfigError(f"{key} must be a number, got {self[key]!r}") from None

    def int(self, key: str) -> int:
        try:
            return int(self[key])
        except ValueError:
            raise ConfigError(f"{key} must be an integer, got {self[key]!r}") from None

    def bool(self, key: str) -> bool:
        v = self[key].lower()
        if v in _TRUE:
            return True
        if v in _FALSE:
            return False
        raise ConfigError(f"{key} must be true/false, got {self[key]!r}")

    def floats(self, key: str) -> list[float]:
        try:
            return [float(s) for s in self[key].split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"{key} must be a comma-separated list of numbers, got {self[key]!r}") from None

    def optional_float(self, key: str) -> float | None:
        """``None`` for ``auto``, else the number."""
        return None if self[key].lower() == "auto" else self.float(key)

    # identity -------------------------------------------------------------

    def canonical_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in sorted(self._values.items()))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()

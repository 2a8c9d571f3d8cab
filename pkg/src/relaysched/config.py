"""Scenario configuration: a flat ``key = value`` text format and its dataclass.

The file format is deliberately minimal: one ``key = value`` pair per line,
``#`` starts a comment, blank lines are ignored.  Lists are comma separated.
Unknown keys are rejected so typos fail loudly instead of silently running a
different experiment.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass


class ConfigError(ValueError):
    """A scenario file or mapping could not be interpreted."""


TRAFFIC_MODELS = ("generate_at_will", "periodic")
MODES = ("ideal", "practical")


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to reproduce one network scenario from a seed."""

    M: int
    N: int
    L: int
    K: int
    T: int = 20
    seed: int = 0
    traffic_model: str = "periodic"
    loss_sample_range: tuple[float, float] = (0.05, 0.5)
    loss_update_range: tuple[float, float] = (0.05, 0.5)
    periodicity_set: tuple[int, ...] = (1, 2, 3, 4, 5)
    groups: tuple[int, ...] | None = None
    loss_sample: tuple[float, ...] | None = None
    loss_update: tuple[float, ...] | None = None
    periodicity: tuple[int, ...] | None = None
    area_l: float | None = None
    area_b: float | None = None

    def __post_init__(self):
        for name in ("M", "N", "L", "K", "T"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.traffic_model not in TRAFFIC_MODELS:
            raise ConfigError(
                f"traffic_model must be one of {TRAFFIC_MODELS}, got {self.traffic_model!r}"
            )
        if self.N > self.M:
            raise ConfigError(f"need at least one device per relay (M={self.M} < N={self.N})")
        if self.groups is not None:
            if len(self.groups) != self.N:
                raise ConfigError(
                    f"groups lists {len(self.groups)} relays but N = {self.N}"
                )
            if any(g < 1 for g in self.groups):
                raise ConfigError("every relay needs at least one device")
            if sum(self.groups) != self.M:
                raise ConfigError(
                    f"groups sum to {sum(self.groups)} but M = {self.M}"
                )
        for name in ("loss_sample_range", "loss_update_range"):
            lo, hi = getattr(self, name)
            if not (0.0 <= lo <= hi < 1.0):
                raise ConfigError(f"{name} must satisfy 0 <= lo <= hi < 1, got ({lo}, {hi})")
        for name in ("loss_sample", "loss_update"):
            vec = getattr(self, name)
            if vec is not None:
                if len(vec) != self.M:
                    raise ConfigError(f"{name} lists {len(vec)} values but M = {self.M}")
                if any(not (0.0 <= v < 1.0) for v in vec):
                    raise ConfigError(f"{name} entries must lie in [0, 1)")
        if self.periodicity is not None:
            if len(self.periodicity) != self.M:
                raise ConfigError(
                    f"periodicity lists {len(self.periodicity)} values but M = {self.M}"
                )
            if any(p < 1 for p in self.periodicity):
                raise ConfigError("periodicity entries must be >= 1")
        if any(p < 1 for p in self.periodicity_set):
            raise ConfigError("periodicity_set entries must be >= 1")
        if (self.area_l is None) != (self.area_b is None):
            raise ConfigError("area_l and area_b must be given together")
        if self.area_l is not None and (self.area_l <= 0 or self.area_b <= 0):
            raise ConfigError("area dimensions must be positive")

    def group_sizes(self) -> tuple[int, ...]:
        """Per-relay device counts: explicit, or an even split with the remainder spread over the first relays."""
        if self.groups is not None:
            return tuple(self.groups)
        base, extra = divmod(self.M, self.N)
        return tuple(base + (1 if n < extra else 0) for n in range(self.N))

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


# ---------------------------------------------------------------------------
# parsing

_SCALAR_INT = {"M", "N", "L", "K", "T", "seed"}
_SCALAR_FLOAT = {"area_l", "area_b"}
_RANGE_KEYS = {"loss_sample_range", "loss_update_range"}
_INT_LIST = {"groups", "periodicity_set", "periodicity"}
_FLOAT_LIST = {"loss_sample", "loss_update"}
_KNOWN_KEYS = (
    _SCALAR_INT | _SCALAR_FLOAT | _RANGE_KEYS | _INT_LIST | _FLOAT_LIST | {"traffic_model"}
)


def _parse_int(key, text):
    try:
        return int(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: expected an integer, got {text!r}") from exc


def _parse_float(key, text):
    try:
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: expected a number, got {text!r}") from exc


def _split_list(text):
    return [part.strip() for part in text.split(",") if part.strip() != ""]


def scenario_from_mapping(entries: dict[str, str]) -> ScenarioConfig:
    """Build a ScenarioConfig from raw string key/value pairs."""
    unknown = set(entries) - _KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    missing = {"M", "N", "L", "K"} - set(entries)
    if missing:
        raise ConfigError(f"missing required config keys: {sorted(missing)}")

    kwargs = {}
    for key, raw in entries.items():
        if key in _SCALAR_INT:
            kwargs[key] = _parse_int(key, raw)
        elif key in _SCALAR_FLOAT:
            kwargs[key] = _parse_float(key, raw)
        elif key in _RANGE_KEYS:
            parts = _split_list(raw)
            if len(parts) != 2:
                raise ConfigError(f"{key}: expected 'low, high', got {raw!r}")
            kwargs[key] = (_parse_float(key, parts[0]), _parse_float(key, parts[1]))
        elif key in _INT_LIST:
            kwargs[key] = tuple(_parse_int(key, p) for p in _split_list(raw))
        elif key in _FLOAT_LIST:
            kwargs[key] = tuple(_parse_float(key, p) for p in _split_list(raw))
        else:  # traffic_model
            kwargs[key] = raw.strip()
    return ScenarioConfig(**kwargs)


def parse_scenario(path) -> ScenarioConfig:
    """Read a flat ``key = value`` scenario file."""
    entries: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, value = line.split("=", 1)
            key = key.strip()
            if key in entries:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            entries[key] = value.strip()
    return scenario_from_mapping(entries)


def apply_mode(config: ScenarioConfig, mode: str) -> ScenarioConfig:
    """Specialize a scenario to an environment mode.

    ideal      -> every link loss exactly 0 and generate-at-will traffic.
    practical  -> periodic traffic with strictly positive link losses.
    """
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "ideal":
        zeros = (0.0,) * config.M
        return config.replace(
            traffic_model="generate_at_will",
            loss_sample=zeros,
            loss_update=zeros,
            periodicity=None,
        )
    # practical: keep the configured losses but refuse lossless links
    for name in ("loss_sample", "loss_update"):
        vec = getattr(config, name)
        if vec is not None and any(v == 0.0 for v in vec):
            raise ConfigError(f"practical mode needs nonzero losses, {name} contains 0")
    for name in ("loss_sample_range", "loss_update_range"):
        lo, _hi = getattr(config, name)
        if getattr(config, name[: -len("_range")]) is None and lo <= 0.0:
            raise ConfigError(f"practical mode needs a positive {name} lower bound")
    return config.replace(traffic_model="periodic")

"""One JSON-serializable bundle of every parameter block, with strict parsing."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from ._validation import ConfigurationError
from .deadreckon import ReckonConfig
from .grid import DEFAULT_CELL_SIZE, DEFAULT_DIST_CAP, DEFAULT_SLICE_HEIGHT, DEFAULT_Z_LIMIT, GridMeta
from .occmetrics import LossWeights
from .planner import GuideConfig, PlannerConfig
from .sim import SceneParams
from .vo import Footprint, VOParams

# Clearance lookups read the distance field at the cell containing the
# robot center, and that field measures between cell centers.  The true gap
# can therefore be up to one cell diagonal smaller, so the default margin is
# the half diagonal of the body plus that diagonal, rounded up.
DEFAULT_R_EFF = 0.33


@dataclass(frozen=True)
class GridConfig:
    cell_size: float = DEFAULT_CELL_SIZE
    slice_height: float = DEFAULT_SLICE_HEIGHT
    z_limit: float = DEFAULT_Z_LIMIT
    dist_cap: float = DEFAULT_DIST_CAP

    def meta(self) -> GridMeta:
        """Template metadata; scene generation fills in the extent."""
        return GridMeta(1, 1, 1, self.cell_size, self.slice_height, self.z_limit)


BLOCKS = {
    "grid": GridConfig,
    "guide": GuideConfig,
    "footprint": Footprint,
    "vo": VOParams,
    "planner": PlannerConfig,
    "sim": SceneParams,
    "deadreckon": ReckonConfig,
    "loss": LossWeights,
}


def _coerce(block: str, name: str, default, value):
    where = f"{block}.{name}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigurationError(f"{where} must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not (isinstance(value, int) or (isinstance(value, float) and value.is_integer())):
            raise ConfigurationError(f"{where} must be an integer")
        return int(value)
    if isinstance(default, float) or default is None:
        if value is None and default is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{where} must be a number")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigurationError(f"{where} must be a list")
        return tuple(_coerce(block, name, default[0] if default else 0.0, v) for v in value)
    return value


def _block_from_dict(block: str, cls, data) -> object:
    if not isinstance(data, dict):
        raise ConfigurationError(f"config block {block!r} must be an object")
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigurationError(f"unknown key(s) in {block!r}: {', '.join(unknown)}")
    kwargs = {k: _coerce(block, k, getattr(defaults, k), v) for k, v in data.items()}
    try:
        return dataclasses.replace(defaults, **kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigurationError(f"invalid {block!r} block: {exc}") from None


def _block_to_dict(obj) -> dict:
    return {f.name: (list(v) if isinstance(v := getattr(obj, f.name), tuple) else v) for f in dataclasses.fields(obj)}


@dataclass(frozen=True)
class RunConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    guide: GuideConfig = field(default_factory=GuideConfig)
    footprint: Footprint = field(default_factory=lambda: Footprint(0.4, 0.3, DEFAULT_R_EFF))
    vo: VOParams = field(default_factory=VOParams)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    sim: SceneParams = field(default_factory=SceneParams)
    deadreckon: ReckonConfig = field(default_factory=ReckonConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    seed: int = 0

    def to_dict(self) -> dict:
        out = {name: _block_to_dict(getattr(self, name)) for name in BLOCKS}
        out["seed"] = self.seed
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        """Missing blocks and keys take defaults; unknown ones are rejected."""
        if not isinstance(data, dict):
            raise ConfigurationError("config must be a JSON object")
        unknown = sorted(set(data) - set(BLOCKS) - {"seed"})
        if unknown:
            raise ConfigurationError(f"unknown config key(s): {', '.join(unknown)}")
        base = cls()
        kwargs = {}
        for name, block_cls in BLOCKS.items():
            if name in data:
                merged = _block_to_dict(getattr(base, name)) | data[name] if isinstance(data[name], dict) else data[name]
                kwargs[name] = _block_from_dict(name, block_cls, merged)
        if "seed" in data:
            kwargs["seed"] = _coerce("run", "seed", 0, data["seed"])
        return dataclasses.replace(base, **kwargs)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from None
        return cls.from_json(text)

    def with_overrides(self, assignments) -> "RunConfig":
        """Apply ``block.key=value`` strings; values parse as JSON, else as plain strings."""
        data = self.to_dict()
        for item in assignments:
            key, sep, raw = item.partition("=")
            if not sep:
                raise ConfigurationError(f"override {item!r} is not of the form block.key=value")
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            if key == "seed":
                data["seed"] = value
                continue
            block, dot, name = key.partition(".")
            if not dot or block not in BLOCKS:
                raise ConfigurationError(f"unknown config key {key!r}")
            data[block][name] = value
        return RunConfig.from_dict(data)

    def replace(self, **blocks) -> "RunConfig":
        return dataclasses.replace(self, **blocks)

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from fitsim.model import Params, derive_constants


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    p: float
    r: float
    n_steps: int
    seed: int = 0
    variant: str = "proportional"
    t0: int = 0
    snapshot_every: int | None = None
    f_grid: tuple[float, ...] | None = None
    out: str = "run"
    resume_from: str | None = None
    log_events: bool = False
    fitness_bins: int = 100

    def __post_init__(self):
        if self.n_steps < 0:
            raise ConfigError("n_steps must be nonnegative")
        if self.snapshot_every is not None and self.snapshot_every < 1:
            raise ConfigError("snapshot_every must be >= 1")
        if self.f_grid is not None:
            object.__setattr__(self, "f_grid", tuple(float(f) for f in self.f_grid))
            if any(not 0.0 <= f <= 1.0 for f in self.f_grid):
                raise ConfigError("f thresholds must lie in [0, 1]")
        if self.fitness_bins < 1:
            raise ConfigError("fitness_bins must be >= 1")
        try:
            self.params
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def params(self) -> Params:
        return Params(p=self.p, r=self.r, variant=self.variant, seed=self.seed, t0=self.t0)

    def thresholds(self) -> tuple[float, ...]:
        """Configured f grid, or {0, f_c, midpoint of [f_c, 1]} when the
        regime is transient (just {0} otherwise)."""
        if self.f_grid is not None:
            return self.f_grid
        k = derive_constants(self.p, self.r)
        if k.transient:
            return (0.0, k.f_c, 0.5 * (k.f_c + 1.0))
        return (0.0,)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        if d["f_grid"] is not None:
            d["f_grid"] = list(d["f_grid"])
        return d

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


_FIELDS = {f.name for f in fields(RunConfig)}


def load_config(path: str | Path | None, overrides: dict[str, Any]) -> RunConfig:
    """Build a config from an optional JSON file; non-None overrides win."""
    data: dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(data) - _FIELDS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    missing = {"p", "r", "n_steps"} - set(data)
    if missing:
        raise ConfigError(f"missing required settings: {sorted(missing)}")
    try:
        return RunConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc

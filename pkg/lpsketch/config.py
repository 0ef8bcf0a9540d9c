"""
Experiment configuration loaded from JSON and command-line flags
"""

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, Optional

from .errors import ConfigError, LpSketchError
from .randomness import SharedSeed
from .single_scale import SketchOverrides

KINDS = (
    "nonexpansion",
    "contraction",
    "boosting",
    "oracle",
    "estimator",
    "ann",
    "certification",
    "hard",
)

GENERATORS = ("gaussian-grid", "hard", "planted")


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Everything needed to reproduce one Monte-Carlo run.

    Every field has a default; `L`, `K`, `k`, `U` replace the theory
    constants of the single-scale sketch, `T` the boosting repetitions,
    `R` the number of near-neighbor trees and `depth` their depth.
    L=8, K=64, k=32 by default; a config that sets them to null gets the
    theory values, which overflow at most (c, p).
    """

    experiment: str = "nonexpansion"
    p: float = 4.0
    c: float = 64.0
    r: float = 1.0
    delta0: Optional[float] = None
    eps: float = 0.5
    L: Optional[int] = 8
    K: Optional[int] = 64
    k: Optional[int] = 32
    U: Optional[int] = None
    T: Optional[int] = None
    R: Optional[int] = None
    depth: Optional[int] = None
    trials: int = 1000
    seed: Optional[str] = None
    dataset: Optional[str] = None
    generator: Optional[str] = None
    generator_params: Dict[str, Any] = field(default_factory=dict)
    d: int = 64
    delta: int = 100
    n: int = 1000
    hard_p: int = 11
    hard_c: int = 4
    cert_r: float = 1.9
    multiplier: float = 1.0
    pairs: int = 20
    workers: Optional[int] = None
    output: Optional[str] = None

    def __post_init__(self):
        if self.experiment not in KINDS:
            raise ConfigError(f"Unknown experiment {self.experiment!r}; expected one of {', '.join(KINDS)}")
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if self.generator is not None and self.generator not in GENERATORS:
            raise ConfigError(f"Unknown generator {self.generator!r}; expected one of {', '.join(GENERATORS)}")
        if self.dataset is not None and not os.path.exists(self.dataset):
            raise ConfigError(f"Dataset file {self.dataset} does not exist")
        if self.k is not None and self.U is not None and self.U < self.k:
            raise ConfigError(f"Override U = {self.U} must be >= k = {self.k}")
        for name in ("L", "K", "k", "U", "T", "R"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ConfigError(f"Override {name} must be >= 1, got {value}")
        if self.depth is not None and self.depth < 0:
            raise ConfigError(f"depth must be >= 0, got {self.depth}")
        if self.seed is not None:
            try:
                SharedSeed.from_hex(self.seed)
            except LpSketchError as e:
                raise ConfigError(str(e))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown config fields: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError(f"Invalid config: {e}")

    @classmethod
    def from_json_file(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except OSError as e:
            raise ConfigError(f"Cannot read config {path}: {e}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config {path} is not valid JSON: {e}")
        if not isinstance(data, dict):
            raise ConfigError(f"Config {path} must hold a JSON object")
        return cls.from_dict(data)

    def with_updates(self, **updates: Any) -> "ExperimentConfig":
        """Apply command-line values; None means not given"""
        given = {k: v for k, v in updates.items() if v is not None}
        unknown = sorted(set(given) - {f.name for f in fields(self)})
        if unknown:
            raise ConfigError(f"Unknown config fields: {', '.join(unknown)}")
        return replace(self, **given)

    @property
    def overrides(self) -> SketchOverrides:
        return SketchOverrides(L=self.L, K=self.K, k=self.k, U=self.U)

    def shared_seed(self) -> SharedSeed:
        if self.seed is None:
            raise ConfigError("Config has no seed; call resolved() first")
        return SharedSeed.from_hex(self.seed)

    def resolved(self) -> "ExperimentConfig":
        """The same config with a concrete seed, drawing a fresh one if needed"""
        if self.seed is not None:
            return self
        return replace(self, seed=SharedSeed.generate().hex())

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)

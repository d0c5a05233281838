from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

from ..errors import DomainError


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters of one training run.

    ``levels`` is the number of taxonomy levels whose offsets are used and
    updated (``None`` means the whole path, leaf to root).  ``N`` is the
    Markov order.  ``levels=1, N=0`` is plain BPR matrix factorisation and
    ``levels=1, N=1`` is FPMC.
    """

    K: int = 20
    lam: float = 0.01
    epsilon: float = 0.05
    alpha: float = 1.0
    N: int = 0
    levels: int | None = None
    sibling_mix: float = 0.5
    epochs: int = 20
    threads: int = 1
    seed: int = 0
    cache_threshold: float = 0.1

    def __post_init__(self):
        if self.K < 1:
            raise DomainError("K must be >= 1")
        if self.lam < 0:
            raise DomainError("lambda must be >= 0")
        if not self.epsilon > 0:
            raise DomainError("epsilon must be > 0")
        if not self.alpha > 0:
            raise DomainError("alpha must be > 0")
        if self.N < 0:
            raise DomainError("N (max previous transactions) must be >= 0")
        if self.levels is not None and self.levels < 1:
            raise DomainError("taxonomy update levels must be >= 1")
        if not 0.0 <= self.sibling_mix <= 1.0:
            raise DomainError("sibling_mix must lie in [0, 1]")
        if self.epochs < 1:
            raise DomainError("epochs must be >= 1")
        if self.threads < 1:
            raise DomainError("threads must be >= 1")
        if self.cache_threshold < 0:
            raise DomainError("cache_threshold must be >= 0")

    def resolved_levels(self, taxonomy) -> int:
        full = taxonomy.depth + 1
        if self.levels is None:
            return full
        if self.levels > full:
            raise DomainError(f"levels={self.levels} exceeds taxonomy depth + 1 = {full}")
        return self.levels

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha1(blob).hexdigest()[:12]


# MF baselines never see the taxonomy, sibling sampling included.
PRESETS: dict[str, dict] = {
    "mf0": {"levels": 1, "N": 0, "sibling_mix": 0.0},
    "mf1": {"levels": 1, "N": 1, "sibling_mix": 0.0},
    "fpmc": {"levels": 1, "N": 1, "sibling_mix": 0.0},
    "tf40": {"levels": 4, "N": 0},
    "tf41": {"levels": 4, "N": 1},
}


def preset(name: str, **overrides) -> ModelConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise DomainError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return ModelConfig(**{**base, **overrides})

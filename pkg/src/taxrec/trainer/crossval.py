"""Grid search over hyperparameters scored on a last-transaction hold-out."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Mapping

from ..errors import DivergenceError, DomainError
from .config import ModelConfig
from .training import train

DEFAULT_LAMBDAS = (0.001, 0.01, 0.1)
DEFAULT_FACTORS = (10, 20, 30, 40, 50)


def default_grid() -> list[dict]:
    return [{"lam": lam, "K": k} for lam, k in itertools.product(DEFAULT_LAMBDAS, DEFAULT_FACTORS)]


@dataclass
class GridPoint:
    config: ModelConfig
    auc: float  # NaN when training diverged


def score_grid(log, taxonomy=None, grid: Iterable[Mapping | ModelConfig] | None = None,
               base: ModelConfig | None = None, T: int = 1, threads: int = 1) -> list[GridPoint]:
    """Train every grid point on ``log`` minus each user's last ``T`` transactions
    and score validation AUC on those transactions."""
    from ..evaluation import evaluate, holdout_last

    base = base or ModelConfig()
    points = list(default_grid() if grid is None else grid)
    if not points:
        raise DomainError("grid is empty")
    core, validation = holdout_last(log, T)
    if len(validation) == 0:
        raise DomainError("validation slice is empty: no user has more than T transactions")
    out = []
    for p in points:
        config = p if isinstance(p, ModelConfig) else base.replace(**dict(p))
        try:
            result = train(core, taxonomy, config)
        except DivergenceError:
            out.append(GridPoint(config, math.nan))
            continue
        report = evaluate(result.model, validation, threads=threads, category_levels=False)
        out.append(GridPoint(config, report.mean_auc))
    return out


def best_point(points: list[GridPoint]) -> ModelConfig:
    """Highest AUC; ties go to smaller lambda, then smaller K, then grid order."""
    ok = [(k, p) for k, p in enumerate(points) if not math.isnan(p.auc)]
    if not ok:
        raise DivergenceError("every grid point diverged")
    _, best = min(ok, key=lambda kp: (-kp[1].auc, kp[1].config.lam, kp[1].config.K, kp[0]))
    return best.config


def cross_validate(log, taxonomy=None, grid=None, base: ModelConfig | None = None,
                   T: int = 1, threads: int = 1) -> ModelConfig:
    """Best configuration of ``grid`` (overrides applied to ``base``)."""
    return best_point(score_grid(log, taxonomy, grid, base, T, threads))

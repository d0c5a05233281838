"""Per-tuple BPR objective, its gradients and the additive update rule.

This is the readable, tuple-at-a-time form of the update.  Training runs the
same arithmetic in a compiled kernel (``_kernels.py``); tests hold the two
together.

For a tuple ``(u, t, i, j)`` the objective is::

    L = ln sigmoid(s(i) - s(j))
        - lam/2 * (|v_u|^2 + |e(i)|^2 + |e(j)|^2 + sum_l |x(l)|^2)

with effective factors ``e``/``x`` and ``l`` ranging over the distinct items
of the used history.  The gradient with respect to an offset row is the sum
of the gradients of every effective factor whose path contains that row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DivergenceError
from ..factors import DecayWeights, FactorStore, effective_factor
from ..taxonomy import Taxonomy


def sigmoid(z):
    """Logistic function, stable for large ``|z|``."""
    if np.ndim(z) == 0:
        z = float(z)
        if z >= 0:
            return 1.0 / (1.0 + math.exp(-z))
        e = math.exp(z)
        return e / (1.0 + e)
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def history_weights(log, user: int, t: int, decay: DecayWeights) -> dict[int, float]:
    """Distinct history items mapped to ``sum_n a_n / |B_{t-n}|`` over baskets holding them."""
    coef: dict[int, float] = {}
    for n in range(1, decay.N + 1):
        if t - n < 0:
            break
        basket = log.basket(user, t - n)
        w = decay.weights[n - 1] / len(basket)
        for item in basket:
            item = int(item)
            coef[item] = coef.get(item, 0.0) + w
    return coef


@dataclass
class GradientScratch:
    c: float
    grad_user: np.ndarray
    grad_pos: np.ndarray
    grad_neg: np.ndarray
    grad_next: dict[int, np.ndarray] = field(default_factory=dict)


def _path(taxonomy: Taxonomy, node: int, levels: int) -> list[int]:
    return [a for a in taxonomy.ancestor_path(node) if taxonomy.level[a] < levels]


def compute_gradients(tup, store: FactorStore, log, config, levels: int | None = None) -> GradientScratch:
    """Ascent direction of the per-tuple objective.

    ``levels`` defaults to ``config.resolved_levels(log.taxonomy)``.
    """
    tax = log.taxonomy
    levels = config.resolved_levels(tax) if levels is None else levels
    decay = DecayWeights(config.N, config.alpha)
    lam = config.lam
    vu = store.user[tup.user]
    ei = effective_factor(store, tax, tup.pos, "item", levels)
    ej = effective_factor(store, tax, tup.neg, "item", levels)
    coef = history_weights(log, tup.user, tup.t, decay)
    nxt = {item: effective_factor(store, tax, item, "next", levels) for item in coef}
    short = np.zeros(store.K)
    for item, w in coef.items():
        short += w * nxt[item]
    x = float(vu @ ei - vu @ ej + short @ (ei - ej))
    if not math.isfinite(x):
        raise DivergenceError("non-finite score difference", tuple=(tup.user, tup.t, tup.pos, tup.neg))
    c = 1.0 - sigmoid(x)
    delta = ei - ej
    bracket = vu + short
    return GradientScratch(
        c=c,
        grad_user=c * delta - lam * vu,
        grad_pos=c * bracket - lam * ei,
        grad_neg=-(c * bracket) - lam * ej,
        grad_next={item: c * delta * w - lam * nxt[item] for item, w in coef.items()},
    )


def apply_updates(scratch: GradientScratch, tup, store: FactorStore, taxonomy: Taxonomy,
                  config, levels: int | None = None) -> None:
    """Gradient-ascent step: every offset on a used path gets the same increment."""
    levels = config.resolved_levels(taxonomy) if levels is None else levels
    eps = config.epsilon
    store.user[tup.user] += eps * scratch.grad_user
    for a in _path(taxonomy, tup.pos, levels):
        store.item[a] += eps * scratch.grad_pos
    for a in _path(taxonomy, tup.neg, levels):
        store.item[a] += eps * scratch.grad_neg
    for item, g in scratch.grad_next.items():
        for a in _path(taxonomy, item, levels):
            store.next[a] += eps * g


def tuple_objective(tup, store: FactorStore, log, config, levels: int | None = None) -> float:
    """Per-tuple objective ``L`` (the function the gradients above ascend)."""
    tax = log.taxonomy
    levels = config.resolved_levels(tax) if levels is None else levels
    decay = DecayWeights(config.N, config.alpha)
    vu = store.user[tup.user]
    ei = effective_factor(store, tax, tup.pos, "item", levels)
    ej = effective_factor(store, tax, tup.neg, "item", levels)
    coef = history_weights(log, tup.user, tup.t, decay)
    nxt = {item: effective_factor(store, tax, item, "next", levels) for item in coef}
    x = float(vu @ (ei - ej)) + sum(w * float(nxt[item] @ (ei - ej)) for item, w in coef.items())
    reg = vu @ vu + ei @ ei + ej @ ej + sum(v @ v for v in nxt.values())
    # ln sigmoid(x) = -log1p(exp(-x)), written stably
    log_sig = -math.log1p(math.exp(-x)) if x >= 0 else x - math.log1p(math.exp(x))
    return log_sig - 0.5 * config.lam * float(reg)

"""Epoch loop around the compiled SGD kernel, single- and multi-threaded."""

from __future__ import annotations

import csv
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import DivergenceError, DomainError
from ..factors import DecayWeights, FactorStore, TFModel
from ..sampler import Sampler
from ..seeding import derive_seed, rng_for
from . import _kernels
from .config import ModelConfig

DIAGNOSTIC_COLUMNS = ("epoch", "mean_c", "val_auc", "wall_seconds")


@dataclass
class EpochStats:
    epoch: int
    mean_c: float
    val_auc: float | None
    wall_seconds: float
    tuples: int


@dataclass
class TrainResult:
    store: FactorStore
    config: ModelConfig
    taxonomy: object
    epochs: list[EpochStats] = field(default_factory=list)

    @property
    def model(self) -> TFModel:
        return TFModel.from_config(self.store, self.taxonomy, self.config)

    @property
    def tuples(self) -> int:
        return sum(e.tuples for e in self.epochs)

    def write_diagnostics(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh)
            out.writerow(DIAGNOSTIC_COLUMNS)
            for e in self.epochs:
                val = "" if e.val_auc is None else repr(e.val_auc)
                out.writerow([e.epoch, repr(e.mean_c), val, repr(e.wall_seconds)])


class _Arrays:
    """Contiguous int64 views of the log and taxonomy for the kernel."""

    def __init__(self, log, levels: int, decay: DecayWeights):
        tax = log.taxonomy
        self.paths = np.ascontiguousarray(tax.paths, dtype=np.int64)
        self.level = np.ascontiguousarray(tax.level, dtype=np.int64)
        self.levels = int(levels)
        self.user_ptr = np.ascontiguousarray(log.user_ptr, dtype=np.int64)
        self.basket_ptr = np.ascontiguousarray(log.basket_ptr, dtype=np.int64)
        self.items = np.ascontiguousarray(log.items, dtype=np.int64)
        self.decay = np.ascontiguousarray(decay.weights, dtype=np.float64)
        self.internal = np.flatnonzero(self.level >= 1).astype(np.int64)
        self.cache_row = np.full(tax.node_count, -1, dtype=np.int64)
        self.cache_row[self.internal] = np.arange(len(self.internal))


def _check_inputs(log, taxonomy, config: ModelConfig):
    if taxonomy is not None and taxonomy is not log.taxonomy:
        if taxonomy.node_count != log.taxonomy.node_count or not np.array_equal(
                taxonomy.parent, log.taxonomy.parent):
            raise DomainError("log was built against a different taxonomy")
    if log.triple_count == 0:
        raise DomainError("training log has no purchases")
    return config.resolved_levels(log.taxonomy)


def _run(store, arr, batch, config, locks, use_locks, cache, stats, epoch, offset=0):
    cache_item, cache_next, use_cache = cache
    fail = _kernels.run_steps(
        store.user, store.item, store.next, arr.paths, arr.level, arr.levels,
        arr.user_ptr, arr.basket_ptr, arr.items, arr.decay,
        batch.user, batch.t, batch.pos, batch.neg, float(config.lam), float(config.epsilon),
        locks, use_locks, arr.cache_row, cache_item, cache_next,
        float(config.cache_threshold), use_cache, stats)
    if fail >= 0:
        tup = (int(batch.user[fail]), int(batch.t[fail]), int(batch.pos[fail]), int(batch.neg[fail]))
        raise DivergenceError("non-finite score or gradient", epoch=epoch, step=offset + fail,
                              tuple=tup)


def _validation_auc(store, log, config, validation) -> float | None:
    if validation is None:
        return None
    from ..evaluation import evaluate

    model = TFModel.from_config(store, log.taxonomy, config)
    return evaluate(model, validation, category_levels=False).mean_auc


def train(log, taxonomy=None, config: ModelConfig | None = None, validation=None,
          store: FactorStore | None = None, on_epoch=None) -> TrainResult:
    """Train a model on ``log`` (already restricted to its training part).

    ``config.threads > 1`` dispatches to :func:`train_parallel`.  A
    ``validation`` hold-out (see ``taxrec.evaluation.split``) adds a per-epoch
    AUC to the diagnostics.  ``store`` continues from existing factors.
    """
    config = config or ModelConfig()
    if config.threads > 1:
        return train_parallel(log, taxonomy, config, validation=validation, store=store,
                              on_epoch=on_epoch)
    levels = _check_inputs(log, taxonomy, config)
    tax = log.taxonomy
    if store is None:
        store = FactorStore.initialize(config.K, log.user_count, tax.node_count,
                                       rng_for(config.seed, "init"))
    arr = _Arrays(log, levels, DecayWeights(config.N, config.alpha))
    sampler = Sampler(log, levels, config.sibling_mix, rng_for(config.seed, "sampler"))
    no_lock = np.zeros(1, dtype=np.int64)
    no_cache = (np.zeros((1, config.K)), np.zeros((1, config.K)), False)
    result = TrainResult(store, config, tax)
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        batch = sampler.epoch()
        stats = np.zeros(2)
        _run(store, arr, batch, config, no_lock, False, no_cache, stats, epoch)
        if not store.is_finite():
            raise DivergenceError("non-finite factor after epoch", epoch=epoch)
        wall = time.perf_counter() - start
        stats_row = EpochStats(epoch, float(stats[0] / max(stats[1], 1.0)),
                               _validation_auc(store, log, config, validation), wall,
                               int(stats[1]))
        result.epochs.append(stats_row)
        if on_epoch is not None:
            on_epoch(stats_row)
    return result


def _thread_draws(total: int, threads: int) -> list[int]:
    base, extra = divmod(total, threads)
    return [base + (1 if k < extra else 0) for k in range(threads)]


def train_parallel(log, taxonomy=None, config: ModelConfig | None = None, validation=None,
                   store: FactorStore | None = None, on_epoch=None,
                   cache: bool = True) -> TrainResult:
    """Multi-threaded training under per-row reader-writer locks.

    Each thread samples its share of an epoch from its own stream.  Leaf rows
    are written through; internal-node rows collect in a per-thread cache
    that is flushed once its largest component passes ``cache_threshold`` and
    at the end of every epoch.  ``cache=False`` writes every row through.
    """
    config = config or ModelConfig()
    levels = _check_inputs(log, taxonomy, config)
    tax = log.taxonomy
    threads = config.threads
    if store is None:
        store = FactorStore.initialize(config.K, log.user_count, tax.node_count,
                                       rng_for(config.seed, "init"))
    arr = _Arrays(log, levels, DecayWeights(config.N, config.alpha))
    base_seed = derive_seed(config.seed, "sampler")
    samplers = [Sampler(log, levels, config.sibling_mix, np.random.default_rng(base_seed ^ k))
                for k in range(threads)]
    locks = np.zeros(store.user_count + 2 * store.node_count, dtype=np.int64)
    n_internal = max(len(arr.internal), 1)
    caches = [(np.zeros((n_internal, config.K)), np.zeros((n_internal, config.K)), cache)
              for _ in range(threads)]
    result = TrainResult(store, config, tax)

    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        shares = _thread_draws(log.triple_count, threads)
        stats = [np.zeros(2) for _ in range(threads)]
        errors: list[BaseException | None] = [None] * threads

        def work(k):
            try:
                if shares[k]:
                    batch = samplers[k].draw(shares[k])
                    _run(store, arr, batch, config, locks, True, caches[k], stats[k], epoch)
            except BaseException as exc:  # re-raised on the calling thread
                errors[k] = exc

        pool = [threading.Thread(target=work, args=(k,)) for k in range(threads)]
        for th in pool:
            th.start()
        for th in pool:
            th.join()
        for k in range(threads):
            c_item, c_next, _ = caches[k]
            _kernels.flush_all(store.item, store.next, arr.internal, c_item, c_next, locks,
                               store.user_count)
        for exc in errors:
            if exc is not None:
                raise exc
        if not store.is_finite():
            raise DivergenceError("non-finite factor after epoch", epoch=epoch)
        wall = time.perf_counter() - start
        total = sum(s[1] for s in stats)
        row = EpochStats(epoch, float(sum(s[0] for s in stats) / max(total, 1.0)),
                         _validation_auc(store, log, config, validation), wall, int(total))
        result.epochs.append(row)
        if on_epoch is not None:
            on_epoch(row)
    return result

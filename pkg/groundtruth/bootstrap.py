"""
bootstrap.py
Percentile bootstrap confidence intervals with per-resample generators.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from config import BOOTSTRAP_RESAMPLES, BOOTSTRAP_LEVEL, BOOTSTRAP_MAX_UNDEFINED
from logger import log_debug
from utils import UndefinedStatisticError, make_rng, get_thread_count


@dataclass(frozen=True)
class BootstrapConfig:
    """
    nResamples: number of resamples
    level: two-sided confidence level
    seed: base seed; resample i draws from a generator derived from (seed, i)
    strata: optional per-record group keys (sequence) or a record -> key callable
    """
    nResamples: int = BOOTSTRAP_RESAMPLES
    level: float = BOOTSTRAP_LEVEL
    seed: int = 0
    strata: object = None

    def __post_init__(self):
        if self.nResamples < 1:
            raise ValueError("nResamples must be at least 1")
        if not 0.0 < self.level < 1.0:
            raise ValueError("level must be in (0, 1)")

    def with_strata(self, strata):
        """Copy of this config with a stratification key."""
        return BootstrapConfig(self.nResamples, self.level, self.seed, strata)


def _groups(records, strata):
    n = len(records)
    if strata is None:
        return [np.arange(n)]
    keys = [strata(record) for record in records] if callable(strata) else list(strata)
    if len(keys) != n:
        raise ValueError("strata must have one key per record")
    groups = {}
    for position, key in enumerate(keys):
        groups.setdefault(key, []).append(position)
    return [np.asarray(groups[key]) for key in sorted(groups, key=repr)]

def _take(records, indices):
    if isinstance(records, np.ndarray):
        return records[indices]
    return [records[i] for i in indices]

def _is_defined(value):
    return value is not None and math.isfinite(value)

def resample_statistics(statistic, records, config):
    """
    Statistic values over all resamples (None where undefined), in resample order.
    Args:
        statistic: Function of a resampled record collection returning a float or None
        records: Records (list or numpy array, first axis = records)
        config: BootstrapConfig
    """
    groups = _groups(records, config.strata)

    def one(index):
        rng = make_rng(config.seed, index)
        picks = np.concatenate([group[rng.integers(0, len(group), size=len(group))] for group in groups])
        value = statistic(_take(records, picks))
        return float(value) if _is_defined(value) else None

    threads = get_thread_count()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, range(config.nResamples)))
    return [one(index) for index in range(config.nResamples)]

def bootstrap_ci(statistic, records, config):
    """
    Percentile bootstrap interval of a statistic.
    Args:
        statistic: Function of a resampled record collection returning a float or None
        records: At least two records (list or numpy array)
        config: BootstrapConfig
    Returns:
        (low, high, point) where point is the statistic on the original records
    """
    if len(records) < 2:
        raise ValueError("bootstrap needs at least 2 records")

    values = resample_statistics(statistic, records, config)
    defined = np.asarray([value for value in values if value is not None], dtype=np.float64)
    nUndefined = len(values) - len(defined)
    if nUndefined > BOOTSTRAP_MAX_UNDEFINED * len(values):
        raise UndefinedStatisticError(
            f"statistic undefined on {nUndefined} of {len(values)} resamples"
        )
    if nUndefined:
        log_debug(f"bootstrap: {nUndefined} of {len(values)} resamples undefined and excluded")

    tail = (1.0 - config.level) / 2.0
    low, high = np.quantile(defined, [tail, 1.0 - tail])
    point = statistic(records)
    point = float(point) if _is_defined(point) else None
    return float(low), float(high), point

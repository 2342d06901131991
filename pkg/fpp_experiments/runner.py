# fpp_experiments/runner.py
"""
Trial execution. Every trial gets its own seed from (master seed, index);
results are collected by index, never by completion order, so aggregates do
not depend on the worker count.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Generic, List, Optional, Tuple, TypeVar

from tqdm import tqdm

from fpp_core.errors import TrialFailure
from fpp_core.weights import derive_trial_seed

logger = logging.getLogger(__name__)

T = TypeVar("T")


@dataclass(frozen=True)
class TrialBatch(Generic[T]):
    master_seed: int
    seeds: Tuple[int, ...]
    outcomes: Tuple[T, ...]
    elapsed: float
    threads: int

    def __len__(self) -> int:
        return len(self.outcomes)


@dataclass
class ExperimentResult:
    """What one command produced; `summary()` is thread-count independent, `run_info()` is not."""

    command: str
    config_hash: str
    master_seed: int
    seeds: List[int] = field(default_factory=list)
    aggregates: Dict[str, Any] = field(default_factory=dict)
    verdicts: Dict[str, Any] = field(default_factory=dict)
    config: Dict[str, Any] = field(default_factory=dict)
    wall_clock: float = 0.0
    threads: int = 1

    def summary(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "config": self.config,
            "config_hash": self.config_hash,
            "master_seed": self.master_seed,
            "seeds": self.seeds,
            "aggregates": self.aggregates,
            "verdicts": self.verdicts,
        }

    def run_info(self) -> Dict[str, Any]:
        return {"config_hash": self.config_hash, "wall_clock_seconds": self.wall_clock, "threads": self.threads}


def trial_seeds(master_seed: int, trials: int) -> List[int]:
    return [derive_trial_seed(master_seed, i) for i in range(trials)]


def run_trials(
    master_seed: int,
    trials: int,
    task: Callable[[int], T],
    threads: int = 1,
    progress: bool = False,
    desc: Optional[str] = None,
) -> TrialBatch[T]:
    """
    Run `task(seed)` for every trial. A raising trial surfaces as TrialFailure
    with its index and seed; the lowest failing index wins.
    """
    if trials < 0:
        raise ValueError(f"trials must be >= 0, got {trials}")
    seeds = trial_seeds(master_seed, trials)
    threads = max(1, int(threads))

    def call(i: int) -> T:
        try:
            return task(seeds[i])
        except Exception as e:
            raise TrialFailure(i, seeds[i], e) from e

    start = time.perf_counter()
    bar = dict(total=trials, desc=desc or "trials", disable=not progress, leave=False)
    if threads == 1 or trials <= 1:
        outcomes = [call(i) for i in tqdm(range(trials), **bar)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(tqdm(pool.map(call, range(trials)), **bar))
    elapsed = time.perf_counter() - start
    logger.info("%d trial(s) of %s done in %.2fs on %d thread(s)", trials, desc or "task", elapsed, threads)
    return TrialBatch(master_seed, tuple(seeds), tuple(outcomes), elapsed, threads)

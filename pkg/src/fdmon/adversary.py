"""Channel-hopping attacker versus a randomly permuted sweep.

Each cycle the monitor visits all ``N`` channels once, in a fresh random
order, one channel per slot. The attacker occupies one channel per slot.
It is detected in the first slot where both pick the same channel.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import ParameterError

POLICIES = ("uniform", "fixed", "dwell")


def _check_n(n_channels):
    if int(n_channels) != n_channels or n_channels < 1:
        raise ParameterError(f"n_channels must be an integer >= 1, got {n_channels}")


def pd_closed_form(n_channels: int, t: int) -> float:
    """Probability of first detection in cycle ``t`` for a uniformly hopping attacker.

    ``P_D(t) = q**(N (t-1)) * (1 - q**N)`` with ``q = (N-1)/N``.
    """
    _check_n(n_channels)
    if int(t) != t or t < 1:
        raise ParameterError(f"t must be an integer >= 1, got {t}")
    n = int(n_channels)
    if n == 1:
        return 1.0 if t == 1 else 0.0
    log_q = math.log1p(-1.0 / n)
    miss_cycle = math.exp(n * log_q)
    return math.exp(n * (t - 1) * log_q) * -math.expm1(n * log_q) if t > 1 else 1.0 - miss_cycle


def pd_asymptote() -> float:
    """Large-``N`` limit of the per-cycle detection probability, ``1 - 1/e``."""
    return -math.expm1(-1.0)


def mean_detection_cycles(n_channels: int) -> float:
    """Expected cycles until first detection, ``1 / P_D(1)``."""
    return 1.0 / pd_closed_form(n_channels, 1)


@dataclass(frozen=True)
class AttackScenario:
    n_channels: int
    attacker_policy: str = "uniform"
    dwell_slots: int = 1
    seed: int = 0

    def __post_init__(self):
        _check_n(self.n_channels)
        if self.attacker_policy not in POLICIES:
            raise ParameterError(f"attacker_policy must be one of {POLICIES}")
        if self.dwell_slots < 1:
            raise ParameterError("dwell_slots must be >= 1")


@dataclass(frozen=True)
class DetectionStats:
    p_first_detect_by_cycle: np.ndarray
    mean_cycles: float
    trials: int
    undetected: int = 0

    def confidence_intervals(self, level: float = 0.95) -> np.ndarray:
        """Wilson score interval per cycle, shape ``(T, 2)``."""
        out = np.empty((self.p_first_detect_by_cycle.size, 2))
        for i, p in enumerate(self.p_first_detect_by_cycle):
            k = int(round(p * self.trials))
            ci = stats.binomtest(k, self.trials).proportion_ci(level, method="wilson")
            out[i] = ci.low, ci.high
        return out


def _attacker_channels(sc: AttackScenario, rng, cycle, trials, state):
    n = sc.n_channels
    if sc.attacker_policy == "uniform":
        return rng.integers(n, size=(trials, n))
    if sc.attacker_policy == "fixed":
        return np.repeat(state["fixed"][:, None], n, axis=1)
    k = sc.dwell_slots
    slots = cycle * n + np.arange(n)[None, :] + state["phase"][:, None]
    seg = slots // k
    need = int(seg.max()) + 1
    table = state["table"]
    if table.shape[1] < need:
        extra = rng.integers(n, size=(trials, need - table.shape[1]))
        state["table"] = table = np.hstack([table, extra])
    return np.take_along_axis(table, seg, axis=1)


def simulate(scenario: AttackScenario, cycles: int, trials: int) -> DetectionStats:
    """Monte Carlo first-detection frequencies over ``cycles`` cycles."""
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    if cycles < 1:
        raise ParameterError("cycles must be >= 1")
    n = scenario.n_channels
    rng = np.random.default_rng(scenario.seed)
    state = {
        "fixed": rng.integers(n, size=trials),
        "phase": rng.integers(scenario.dwell_slots, size=trials),
        "table": np.zeros((trials, 0), dtype=np.int64),
    }
    first = np.zeros(trials, dtype=np.int64)  # 0 = not yet detected
    base = np.tile(np.arange(n), (trials, 1))
    for c in range(cycles):
        monitor = rng.permuted(base, axis=1)
        attacker = _attacker_channels(scenario, rng, c, trials, state)
        hit = np.any(monitor == attacker, axis=1)
        first[(first == 0) & hit] = c + 1
    counts = np.bincount(first, minlength=cycles + 1)
    detected = first[first > 0]
    mean = float(detected.mean()) if detected.size else math.inf
    return DetectionStats(counts[1:] / trials, mean, int(trials), int(counts[0]))


CSV_HEADER = ("n_channels", "T", "p_closed_form", "p_empirical", "ci_low", "ci_high")


def rows(n_channels: int, result: DetectionStats) -> list:
    ci = result.confidence_intervals()
    return [[n_channels, t + 1, pd_closed_form(n_channels, t + 1), float(p), ci[t, 0], ci[t, 1]]
            for t, p in enumerate(result.p_first_detect_by_cycle)]


def write_csv(fh, all_rows):
    w = csv.writer(fh)
    w.writerow(CSV_HEADER)
    for r in all_rows:
        w.writerow([r[0], r[1], *(f"{v:.8f}" for v in r[2:])])

"""The five client-selection strategies and the shared history bookkeeping.

All selectors share one calling shape: they see the currently available pool,
the per-round budget n, the server-side SelectorState, and an owned RNG, and
return a sorted list of selected client indices. An empty return means the
round must be skipped (e.g. FedCS found no eligible client).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError

SELECTOR_KINDS = ("random", "fedcs", "tifl", "mda", "tifl_mda")

FEDCS_ORDERS = ("filter_first", "sample_first")


@dataclass(frozen=True)
class MdaConfig:
    memory_length: int = 10     # history window m, in rounds
    default_weight: float = 0.5  # used until a client has m history entries

    def __post_init__(self):
        if self.memory_length < 2:
            raise ConfigError(f"mda.memory_length must be >= 2, got {self.memory_length}")
        if not 0.0 < self.default_weight <= 1.0:
            raise ConfigError(f"mda default_weight must be in (0, 1], got {self.default_weight}")


@dataclass(frozen=True)
class FedcsConfig:
    threshold_s: float = 15.0
    order: str = "filter_first"

    def __post_init__(self):
        if self.threshold_s <= 0:
            raise ConfigError(f"fedcs.threshold_s must be > 0, got {self.threshold_s}")
        if self.order not in FEDCS_ORDERS:
            raise ConfigError(f"fedcs.order must be one of {FEDCS_ORDERS}, got {self.order!r}")


@dataclass(frozen=True)
class TiflConfig:
    num_tiers: int = 5
    ratio: float = 1.4          # adjacent-tier selection probability ratio

    def __post_init__(self):
        if self.num_tiers < 1:
            raise ConfigError(f"tifl.num_tiers must be >= 1, got {self.num_tiers}")
        if self.ratio <= 0:
            raise ConfigError(f"tifl.ratio must be > 0, got {self.ratio}")


class SelectorState:
    """Per-client availability/failure history as the server observes it.

    availability[c][i] — was client c available when round i began (the server
    pings every client each round, so there are no gaps).
    failures[c]        — round indices at which c was selected and then failed.
    round_start_times  — simulated clock value at the start of each round begun.
    """

    def __init__(self, num_clients: int):
        if num_clients < 1:
            raise ValueError(f"num_clients must be >= 1, got {num_clients}")
        self.num_clients = num_clients
        self.availability: list[list[bool]] = [[] for _ in range(num_clients)]
        self.failures: list[list[int]] = [[] for _ in range(num_clients)]
        self.round_start_times: list[float] = []

    @property
    def current_round(self) -> int:
        """Index of the round most recently begun; -1 before any history exists."""
        return len(self.round_start_times) - 1


def update_history(
    state: SelectorState,
    round_index: int,
    now: float,
    availability_now: Sequence[bool],
    failures_last_round: Sequence[int],
) -> None:
    """Record this round's availability ping and the previous round's failures."""
    expected = len(state.round_start_times)
    if round_index != expected:
        raise ValueError(f"rounds must be recorded in order: expected {expected}, got {round_index}")
    if len(availability_now) != state.num_clients:
        raise ValueError(
            f"availability vector has {len(availability_now)} entries "
            f"for {state.num_clients} clients"
        )
    if state.round_start_times and now <= state.round_start_times[-1]:
        raise ValueError(f"round start {now} not after previous {state.round_start_times[-1]}")
    failed = sorted(set(failures_last_round))
    if round_index == 0 and failed:
        raise ValueError("no failures can be reported at round 0")
    for c in failed:
        if not 0 <= c < state.num_clients:
            raise ValueError(f"failed client index {c} out of range")
        if not state.availability[c][round_index - 1]:
            raise ValueError(
                f"client {c} reported failed at round {round_index - 1} "
                "but was unavailable then"
            )
    for c, avail in enumerate(availability_now):
        state.availability[c].append(bool(avail))
    for c in failed:
        state.failures[c].append(round_index - 1)
    state.round_start_times.append(float(now))


def _availability_factor(state: SelectorState, c: int, cfg: MdaConfig) -> float:
    hist = state.availability[c]
    m = cfg.memory_length
    if len(hist) < m:
        return cfg.default_weight
    recent = hist[-m:]
    times = state.round_start_times[-m:]
    total = times[-1] - times[0]
    up = 0.0
    for k in range(m - 1):
        # an inter-round interval counts only if available at BOTH endpoints
        if recent[k] and recent[k + 1]:
            up += times[k + 1] - times[k]
    return up / total


def _failure_penalty(state: SelectorState, c: int) -> float:
    r = state.current_round
    fails = state.failures[c]
    if not fails:
        return 1.0   # a never-failed client is never penalized
    max_pen = sum(1.0 / (r - i) for i in range(r))
    pen = sum(1.0 / (r - i) for i in fails)
    return 1.0 - pen / max_pen


def mda_raw_weight(state: SelectorState, c: int, cfg: MdaConfig) -> float:
    """Pre-normalization MDA weight: windowed availability x failure recency penalty.

    The availability factor is the fraction of elapsed time over the last m
    recorded rounds during which the client stayed available (default 0.5 until
    m rounds of history exist). A failure at round i costs 1/(r - i) against the
    worst case sum over all completed rounds, so recent failures weigh most and
    a client that failed every round so far gets weight 0.
    """
    return _availability_factor(state, c, cfg) * _failure_penalty(state, c)


def mda_weights(state: SelectorState, candidates: Sequence[int], cfg: MdaConfig) -> list[float]:
    """Normalized MDA weights over the candidate set (sums to 1).

    All-zero raw weights fall back to uniform — otherwise selection would stall.
    """
    if not candidates:
        raise ValueError("mda_weights needs a non-empty candidate set")
    if state.current_round < 0:
        raise ValueError("no round history recorded yet")
    raw = [mda_raw_weight(state, c, cfg) for c in candidates]
    total = sum(raw)
    if total <= 0.0:
        return [1.0 / len(candidates)] * len(candidates)
    return [w / total for w in raw]


def weighted_sample_without_replacement(
    candidates: Sequence[int], weights: Sequence[float], n: int, rng: np.random.Generator
) -> list[int]:
    """Sequential weighted draws, renormalizing over the remainder after each pick.

    Returns min(n, len(candidates)) picks in draw order. If positive weight runs
    out before the budget, the rest are drawn uniformly from what remains.
    """
    if not candidates:
        raise ValueError("cannot sample from an empty candidate set")
    if len(weights) != len(candidates):
        raise ValueError(f"{len(candidates)} candidates but {len(weights)} weights")
    if any(w < 0 for w in weights):
        raise ValueError("weights must be non-negative")
    if n < 1:
        raise ValueError(f"sample size must be >= 1, got {n}")

    remaining = list(candidates)
    w = [float(x) for x in weights]
    picks: list[int] = []
    while remaining and len(picks) < n:
        total = sum(w)
        if total > 0.0:
            x = rng.random() * total
            idx = max(j for j, wj in enumerate(w) if wj > 0)  # guard float round-off
            acc = 0.0
            for j, wj in enumerate(w):
                acc += wj
                if x < acc:
                    idx = j
                    break
        else:
            idx = int(rng.integers(len(remaining)))
        picks.append(remaining.pop(idx))
        w.pop(idx)
    return picks


def select_random(available: Sequence[int], n: int, rng: np.random.Generator) -> list[int]:
    """Uniform sample without replacement of min(n, |available|) clients."""
    if not available:
        raise ValueError("empty availability pool")
    k = min(n, len(available))
    picks = rng.permutation(len(available))[:k]
    return sorted(available[int(i)] for i in picks)


def select_fedcs(
    available: Sequence[int],
    n: int,
    cfg: FedcsConfig,
    round_times: Sequence[float],
    rng: np.random.Generator,
) -> list[int]:
    """Uniform sample among clients whose estimated round time meets the deadline.

    filter_first drops ineligible clients, then samples n (rounds stay full);
    sample_first draws n from the whole pool, then drops, and can under-fill.
    """
    if not available:
        raise ValueError("empty availability pool")
    if cfg.order == "filter_first":
        eligible = [c for c in available if round_times[c] <= cfg.threshold_s]
        if not eligible:
            return []
        return select_random(eligible, n, rng)
    picked = select_random(available, n, rng)
    return [c for c in picked if round_times[c] <= cfg.threshold_s]


def assign_tiers(round_times: Sequence[float], num_tiers: int) -> list[int]:
    """Per-client tier index, 0 = fastest; contiguous near-equal speed bands.

    Clients are sorted by round time (index breaks ties); when the count does
    not divide evenly the extra clients go to the fastest tiers.
    """
    n = len(round_times)
    if num_tiers < 1:
        raise ValueError(f"num_tiers must be >= 1, got {num_tiers}")
    if num_tiers > n:
        raise ValueError(f"num_tiers={num_tiers} exceeds the {n} clients")
    order = sorted(range(n), key=lambda c: (round_times[c], c))
    base, rem = divmod(n, num_tiers)
    tiers = [0] * n
    pos = 0
    for k in range(num_tiers):
        size = base + (1 if k < rem else 0)
        for c in order[pos : pos + size]:
            tiers[c] = k
        pos += size
    return tiers


def tier_probabilities(num_tiers: int, ratio: float) -> list[float]:
    """Selection probability per tier, p_k proportional to ratio^(T-1-k)."""
    if num_tiers < 1:
        raise ValueError(f"num_tiers must be >= 1, got {num_tiers}")
    if ratio <= 0:
        raise ValueError(f"ratio must be > 0, got {ratio}")
    raw = [ratio ** (num_tiers - 1 - k) for k in range(num_tiers)]
    total = sum(raw)
    return [x / total for x in raw]


def _draw_tier(tiers_present: list[int], probs: Sequence[float], rng: np.random.Generator) -> int:
    # Restrict to tiers that actually have available clients, renormalized.
    mass = sum(probs[k] for k in tiers_present)
    x = rng.random() * mass
    acc = 0.0
    for k in tiers_present:
        acc += probs[k]
        if x < acc:
            return k
    return tiers_present[-1]


def _group_by_tier(available: Sequence[int], tiers: Sequence[int]) -> dict[int, list[int]]:
    grouped: dict[int, list[int]] = {}
    for c in available:
        grouped.setdefault(tiers[c], []).append(c)
    return grouped


def select_tifl(
    available: Sequence[int],
    n: int,
    tiers: Sequence[int],
    probs: Sequence[float],
    rng: np.random.Generator,
) -> list[int]:
    """Draw one tier (renormalized over non-empty tiers), then sample uniformly in it."""
    if not available:
        raise ValueError("empty availability pool")
    grouped = _group_by_tier(available, tiers)
    tier = _draw_tier(sorted(grouped), probs, rng)
    return select_random(sorted(grouped[tier]), n, rng)


def select_tifl_mda(
    available: Sequence[int],
    n: int,
    tiers: Sequence[int],
    probs: Sequence[float],
    state: SelectorState,
    cfg: MdaConfig,
    rng: np.random.Generator,
) -> list[int]:
    """TiFL's tier draw with MDA weights replacing the uniform in-tier sample."""
    if not available:
        raise ValueError("empty availability pool")
    grouped = _group_by_tier(available, tiers)
    tier = _draw_tier(sorted(grouped), probs, rng)
    members = sorted(grouped[tier])
    weights = mda_weights(state, members, cfg)
    return sorted(weighted_sample_without_replacement(members, weights, n, rng))


def select_mda(
    available: Sequence[int],
    n: int,
    state: SelectorState,
    cfg: MdaConfig,
    rng: np.random.Generator,
) -> list[int]:
    """Weighted draw over the whole available pool using MDA weights."""
    if not available:
        raise ValueError("empty availability pool")
    pool = sorted(available)
    weights = mda_weights(state, pool, cfg)
    return sorted(weighted_sample_without_replacement(pool, weights, n, rng))


SelectFn = Callable[[Sequence[int], int, SelectorState, np.random.Generator], list[int]]


def make_selector(
    kind: str,
    *,
    round_times: Sequence[float] | None = None,
    fedcs: FedcsConfig | None = None,
    tifl: TiflConfig | None = None,
    mda: MdaConfig | None = None,
) -> SelectFn:
    """Bind a selector kind to its static inputs behind the common call shape."""
    if kind == "random":
        return lambda pool, n, state, rng: select_random(pool, n, rng)
    if kind == "fedcs":
        cfg = fedcs or FedcsConfig()
        if round_times is None:
            raise ValueError("fedcs needs per-client round times")
        return lambda pool, n, state, rng: select_fedcs(pool, n, cfg, round_times, rng)
    if kind == "tifl":
        cfg = tifl or TiflConfig()
        if round_times is None:
            raise ValueError("tifl needs per-client round times")
        tiers = assign_tiers(round_times, cfg.num_tiers)
        probs = tier_probabilities(cfg.num_tiers, cfg.ratio)
        return lambda pool, n, state, rng: select_tifl(pool, n, tiers, probs, rng)
    if kind == "mda":
        cfg = mda or MdaConfig()
        return lambda pool, n, state, rng: select_mda(pool, n, state, cfg, rng)
    if kind == "tifl_mda":
        tcfg = tifl or TiflConfig()
        mcfg = mda or MdaConfig()
        if round_times is None:
            raise ValueError("tifl_mda needs per-client round times")
        tiers = assign_tiers(round_times, tcfg.num_tiers)
        probs = tier_probabilities(tcfg.num_tiers, tcfg.ratio)
        return lambda pool, n, state, rng: select_tifl_mda(pool, n, tiers, probs, state, mcfg, rng)
    raise ConfigError(f"unknown selector kind {kind!r}; expected one of {SELECTOR_KINDS}")

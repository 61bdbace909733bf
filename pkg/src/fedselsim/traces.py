"""Client availability traces: synthesis, ingestion, ranking, and scenario building."""

from __future__ import annotations

import bisect
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ParseError

SECONDS_PER_HOUR = 3600.0

SCENARIO_KINDS = ("low", "average", "high")


@dataclass(frozen=True)
class AvailabilityTrace:
    """Piecewise-constant on/off timeline: a start state plus flip timestamps.

    A flip at timestamp tau takes effect for every query t >= tau.
    """

    start_available: bool
    transitions: tuple[float, ...]
    horizon_s: float

    def __post_init__(self):
        if self.horizon_s <= 0:
            raise ValueError(f"horizon_s must be > 0, got {self.horizon_s}")
        prev = -1.0
        for t in self.transitions:
            if not 0.0 <= t <= self.horizon_s:
                raise ValueError(f"transition {t} outside [0, {self.horizon_s}]")
            if t <= prev:
                raise ValueError(f"transitions must be strictly increasing (at {t})")
            prev = t


@dataclass(frozen=True)
class TraceStats:
    available_fraction: float   # in [0, 1]
    transition_rate: float      # flips per hour


@dataclass(frozen=True)
class ScenarioSpec:
    """Which availability mix to build and for how many clients."""

    kind: str                   # one of SCENARIO_KINDS
    num_clients: int
    mix: tuple[float, float, float] = (0.6, 0.2, 0.2)

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ConfigError(f"scenario kind must be one of {SCENARIO_KINDS}, got {self.kind!r}")
        if self.num_clients < 1:
            raise ConfigError(f"num_clients must be >= 1, got {self.num_clients}")
        if len(self.mix) != 3 or any(f < 0 for f in self.mix):
            raise ConfigError(f"mix must be three non-negative fractions, got {self.mix}")
        if abs(sum(self.mix) - 1.0) > 1e-9:
            raise ConfigError(f"mix fractions must sum to 1, got {self.mix}")


@dataclass(frozen=True)
class TraceClassParams:
    """Generator knobs for one synthetic population of traces."""

    mean_up_s: float
    mean_down_s: float
    start_available_prob: float
    weight: float = 1.0

    def __post_init__(self):
        if self.mean_up_s <= 0 or self.mean_down_s <= 0:
            raise ConfigError("mean up/down durations must be > 0")
        if not 0.0 <= self.start_available_prob <= 1.0:
            raise ConfigError("start_available_prob must be in [0, 1]")
        if self.weight < 0:
            raise ConfigError("class weight must be >= 0")


def is_available(trace: AvailabilityTrace, t: float) -> bool:
    """State at time t: start state XOR parity of flips with timestamp <= t."""
    if not 0.0 <= t <= trace.horizon_s:
        raise ValueError(f"t={t} outside trace range [0, {trace.horizon_s}]")
    flips = bisect.bisect_right(trace.transitions, t)
    return trace.start_available ^ bool(flips & 1)


def trace_stats(trace: AvailabilityTrace) -> TraceStats:
    """Exact integration of the piecewise-constant state over [0, horizon)."""
    up = 0.0
    state = trace.start_available
    prev = 0.0
    for t in trace.transitions:
        if state:
            up += t - prev
        state = not state
        prev = t
    if state:
        up += trace.horizon_s - prev
    rate = len(trace.transitions) / (trace.horizon_s / SECONDS_PER_HOUR)
    return TraceStats(up / trace.horizon_s, rate)


def rank_traces(traces: list[AvailabilityTrace]) -> list[int]:
    """Indices sorted worst-to-best: fraction ascending, then more flips first.

    Flappier traces rank worse on equal fraction; index breaks remaining ties.
    """
    if not traces:
        raise ValueError("cannot rank an empty trace list")
    stats = [trace_stats(tr) for tr in traces]
    return sorted(
        range(len(traces)),
        key=lambda i: (stats[i].available_fraction, -stats[i].transition_rate, i),
    )


def _blocks(n: int) -> list[tuple[int, int]]:
    # Three equal contiguous blocks over the ranked list; middle block centered.
    b = n // 3
    mid_start = (n - b) // 2
    return [(0, b), (mid_start, mid_start + b), (n - b, n)]


def build_scenario(
    ranked: list[AvailabilityTrace], spec: ScenarioSpec, rng_seed: int
) -> list[AvailabilityTrace]:
    """Draw per-client traces from the worst/middle/best thirds of a ranked pool.

    The major mix share comes from the first block for "low", the middle block for
    "average", the last block for "high". Counts: major = round(f * n); the rest is
    split across the two minor blocks in proportion to their fractions (evenly when
    equal), integer remainder going to the later block. Draws are uniform without
    replacement inside each block.
    """
    n = spec.num_clients
    if len(ranked) < n:
        raise ConfigError(f"scenario needs {n} traces but only {len(ranked)} are available")

    major_block = {"low": 0, "average": 1, "high": 2}[spec.kind]
    minor_blocks = [b for b in range(3) if b != major_block]
    f_major = spec.mix[0]
    f_minors = spec.mix[1:]

    counts = [0, 0, 0]
    counts[major_block] = round(f_major * n)
    remaining = n - counts[major_block]
    minor_total = f_minors[0] + f_minors[1]
    if minor_total > 0:
        first_share = int(remaining * f_minors[0] / minor_total)
    else:
        first_share = remaining // 2
    counts[minor_blocks[0]] = first_share
    counts[minor_blocks[1]] = remaining - first_share

    rng = np.random.default_rng(rng_seed)
    assigned: list[AvailabilityTrace] = []
    for (start, end), count in zip(_blocks(len(ranked)), counts):
        size = end - start
        if count > size:
            raise ConfigError(
                f"scenario block [{start},{end}) holds {size} traces "
                f"but the mix requires {count}"
            )
        picks = rng.permutation(size)[:count]
        assigned.extend(ranked[start + int(i)] for i in picks)
    return assigned


def generate_trace(params: TraceClassParams, horizon_s: float, rng_seed) -> AvailabilityTrace:
    """Alternating exponential up/down durations from a Bernoulli start state."""
    if horizon_s <= 0:
        raise ValueError(f"horizon_s must be > 0, got {horizon_s}")
    rng = np.random.default_rng(rng_seed)
    state = bool(rng.random() < params.start_available_prob)
    start = state
    flips: list[float] = []
    t = 0.0
    while True:
        t += rng.exponential(params.mean_up_s if state else params.mean_down_s)
        if t >= horizon_s:
            break
        flips.append(t)
        state = not state
    return AvailabilityTrace(start, tuple(flips), horizon_s)


def generate_pool(
    classes: list[TraceClassParams], pool_size: int, horizon_s: float, rng_seed
) -> list[AvailabilityTrace]:
    """Generate a pool mixing the given classes by weight (largest-remainder counts)."""
    if not classes:
        raise ConfigError("at least one trace class is required")
    total_w = sum(c.weight for c in classes)
    if total_w <= 0:
        raise ConfigError("trace class weights sum to zero")
    raw = [c.weight / total_w * pool_size for c in classes]
    counts = [int(x) for x in raw]
    leftovers = sorted(range(len(classes)), key=lambda i: (counts[i] - raw[i], i))
    for i in leftovers[: pool_size - sum(counts)]:
        counts[i] += 1

    if not isinstance(rng_seed, np.random.SeedSequence):
        rng_seed = np.random.SeedSequence(rng_seed)
    seeds = rng_seed.spawn(pool_size)
    pool: list[AvailabilityTrace] = []
    k = 0
    for params, count in zip(classes, counts):
        for _ in range(count):
            pool.append(generate_trace(params, horizon_s, seeds[k]))
            k += 1
    return pool


def parse_trace_file(text: str) -> list[AvailabilityTrace]:
    """Parse the line-based trace format (see serialize_trace_file for the shape)."""
    horizon: float | None = None
    traces: list[AvailabilityTrace] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if fields[0] == "!horizon":
            if horizon is not None:
                raise ParseError(f"line {lineno}: duplicate !horizon header")
            if len(fields) != 2:
                raise ParseError(f"line {lineno}: expected '!horizon <seconds>'")
            try:
                horizon = float(fields[1])
            except ValueError:
                raise ParseError(f"line {lineno}: bad horizon value {fields[1]!r}") from None
            if horizon <= 0:
                raise ParseError(f"line {lineno}: horizon must be > 0")
            continue
        if horizon is None:
            raise ParseError(f"line {lineno}: trace data before the !horizon header")
        if len(fields) < 2 or fields[1] not in ("0", "1"):
            raise ParseError(
                f"line {lineno}: expected '<client_id> <0|1> <t1> <t2> ...', got {line!r}"
            )
        try:
            times = tuple(float(v) for v in fields[2:])
        except ValueError:
            raise ParseError(f"line {lineno}: non-numeric timestamp") from None
        try:
            traces.append(AvailabilityTrace(fields[1] == "1", times, horizon))
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}") from None
    if horizon is None:
        raise ParseError("trace file has no !horizon header")
    return traces


def serialize_trace_file(traces: list[AvailabilityTrace]) -> str:
    """One `!horizon` header, then `<client_id> <0|1> <t1> <t2> ...` per trace."""
    if not traces:
        raise ValueError("cannot serialize an empty trace list")
    horizon = traces[0].horizon_s
    if any(tr.horizon_s != horizon for tr in traces):
        raise ValueError("all traces in one file must share a horizon")
    lines = [f"!horizon {horizon!r}"]
    for i, tr in enumerate(traces):
        parts = [f"c{i}", "1" if tr.start_available else "0"]
        parts.extend(repr(t) for t in tr.transitions)
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"

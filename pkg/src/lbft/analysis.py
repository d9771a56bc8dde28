"""Liveness formulas, brute-force oracles, Chernoff bounds and trace checks.

Everything here is pure: functions take numbers or a finished
:class:`~lbft.simnet.SimulationTrace` and return plain values.
"""

from __future__ import annotations

import bisect
import math
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

# -- liveness formulas ---------------------------------------------------


@dataclass(frozen=True)
class LivenessInputs:
    beta: float
    lam: float
    delta_net: float
    slack: float = 0.1
    horizon: Optional[float] = None

    def __post_init__(self):
        if not 0 <= self.beta < 0.5:
            raise ValueError("beta must lie in [0, 0.5)")
        if not 0 < self.slack < 1:
            raise ValueError("slack must lie in (0, 1)")
        if self.lam <= 0 or self.delta_net < 0:
            raise ValueError("lambda must be positive and delta non-negative")
        if self.horizon is not None and self.horizon <= 0:
            raise ValueError("horizon must be positive")


def eta(inputs: LivenessInputs) -> float:
    """Probability that an honest inter-block gap is at least ``2*delta``."""
    return math.exp(-2.0 * (1.0 - inputs.beta) * inputs.lam * inputs.delta_net)


@dataclass(frozen=True)
class LivenessVerdict:
    holds: bool
    margin: float
    eta: float
    lhs: float
    rhs: float

    def __bool__(self):
        return self.holds


def liveness_condition(inputs: LivenessInputs) -> LivenessVerdict:
    """Compare ``eta^2 (1-beta)`` with ``(1+slack) beta``."""
    e = eta(inputs)
    lhs = e * e * (1.0 - inputs.beta)
    rhs = (1.0 + inputs.slack) * inputs.beta
    return LivenessVerdict(lhs > rhs, lhs - rhs, e, lhs, rhs)


def unique_rate_lower_bound(inputs: LivenessInputs) -> float:
    """Per-unit-time lower bound ``(1-slack) eta^2 (1-beta) lambda``."""
    e = eta(inputs)
    return (1.0 - inputs.slack) * e * e * (1.0 - inputs.beta) * inputs.lam


# -- unique blocks -------------------------------------------------------


@dataclass(frozen=True)
class ProductionTrace:
    honest_times: tuple[float, ...]
    adversary_times: tuple[float, ...] = ()

    def __post_init__(self):
        for name in ("honest_times", "adversary_times"):
            ts = tuple(float(t) for t in getattr(self, name))
            if any(t < 0 for t in ts) or any(a > b for a, b in zip(ts, ts[1:])):
                raise ValueError(f"{name} must be sorted and non-negative")
            object.__setattr__(self, name, ts)

    @classmethod
    def from_simulation(cls, trace) -> "ProductionTrace":
        honest = [t for t, _, adv in trace.wins if not adv]
        adversary = [t for t, _, adv in trace.wins if adv]
        return cls(tuple(honest), tuple(adversary))

    def gaps(self) -> list[float]:
        ts = self.honest_times
        return [b - a for a, b in zip(ts, ts[1:])]

    def n_honest(self, t: float) -> int:
        return bisect.bisect_right(self.honest_times, t)

    def n_adversary(self, t: float) -> int:
        return bisect.bisect_right(self.adversary_times, t)


def _times(trace) -> Sequence[float]:
    return trace.honest_times if isinstance(trace, ProductionTrace) else sorted(trace)


def unique_blocks(trace, delta_net: float) -> set[float]:
    """Honest times with no other honest production in ``(t - 2d, t + 2d)``."""
    ts = list(_times(trace))
    w = 2.0 * delta_net
    out = set()
    for t in ts:
        lo = bisect.bisect_right(ts, t - w)
        hi = bisect.bisect_left(ts, t + w)
        if hi - lo == 1:
            out.add(t)
    return out


def unique_blocks_by_gaps(trace, delta_net: float) -> set[float]:
    """Same set via the gap rule: both neighbouring gaps are at least ``2d``."""
    ts = list(_times(trace))
    w = 2.0 * delta_net
    out = set()
    for i, t in enumerate(ts):
        before = math.inf if i == 0 else t - ts[i - 1]
        after = math.inf if i == len(ts) - 1 else ts[i + 1] - t
        if before >= w and after >= w:
            out.add(t)
    return out


def unique_fraction(trace, delta_net: float) -> float:
    ts = _times(trace)
    if not ts:
        return 0.0
    return len(unique_blocks(trace, delta_net)) / len(ts)


# -- Chernoff bounds -----------------------------------------------------


def chernoff_poisson(mu: float, delta: float, tail: str = "upper") -> float:
    """Bound on ``P(X >= (1+d) mu)`` (upper) or ``P(X <= (1-d) mu)`` (lower)."""
    if mu <= 0 or not 0 < delta < 1:
        raise ValueError("need mu > 0 and 0 < delta < 1")
    if tail == "upper":
        return math.exp(-delta * delta * mu / 3.0)
    if tail == "lower":
        return math.exp(-delta * delta * mu / 2.0)
    raise ValueError("tail must be 'upper' or 'lower'")


def chernoff_dependent(per_class_mu: Sequence[float], delta: float) -> float:
    """Bound on ``P(X <= (1-d) mu T)`` for a sum split into ``T`` independent classes.

    ``mu`` is the smallest class mean.
    """
    if len(per_class_mu) < 1 or any(m <= 0 for m in per_class_mu):
        raise ValueError("need at least one class and positive class means")
    if not 0 < delta < 1:
        raise ValueError("need 0 < delta < 1")
    mu = min(per_class_mu)
    return math.exp(-delta * delta * mu / 2.0)


# -- safety --------------------------------------------------------------


@dataclass(frozen=True)
class SafetyReport:
    ok: bool
    height: Optional[int] = None
    blocks: tuple = ()
    nodes: tuple = ()

    def __bool__(self):
        return self.ok


def safety_check(commit_logs: Mapping[int, Iterable[tuple]]) -> SafetyReport:
    """Cross-node check that every committed height holds a single block.

    ``commit_logs`` maps node id to ``(time, height, block_id)`` entries; all
    entries are compared regardless of when they happened.
    """
    seen: dict[int, dict] = {}
    for node in sorted(commit_logs):
        for _, height, block in commit_logs[node]:
            seen.setdefault(height, {}).setdefault(block, []).append(node)
    for height in sorted(seen):
        by_block = seen[height]
        if len(by_block) > 1:
            blocks = tuple(sorted(by_block))
            nodes = tuple(sorted({n for b in blocks for n in by_block[b]}))
            return SafetyReport(False, height, blocks, nodes)
    return SafetyReport(True)


def trace_safety(trace) -> SafetyReport:
    """:func:`safety_check` plus any violation a node raised mid-run."""
    report = safety_check(trace.commits)
    if report.ok and trace.violation is not None:
        v = trace.violation
        blocks = tuple(sorted((bytes.fromhex(v["committed"]), bytes.fromhex(v["attempted"]))))
        return SafetyReport(False, v["height"], blocks, ())
    return report


# -- propagation checks --------------------------------------------------


@dataclass(frozen=True)
class PropagationMiss:
    block: bytes
    node: int
    deadline: float
    observed: float


def check_certified_propagation(trace, tol: float = 1e-9) -> list[PropagationMiss]:
    """A block first certified at an honest node at ``t0`` is inserted and
    certified at every honest node by ``max(t0, gst) + delta``.

    Deadlines past the run's end are skipped.
    """
    misses = []
    first: dict[bytes, float] = {}
    for node in trace.honest:
        for b, t in trace.certified[node].items():
            if b not in first or t < first[b]:
                first[b] = t
    for b in sorted(first):
        deadline = max(first[b], trace.gst) + trace.delta
        if deadline > trace.end_time:
            continue
        for node in trace.honest:
            t_ins = trace.inserted[node].get(b, math.inf)
            t_cert = trace.certified[node].get(b, math.inf)
            observed = max(t_ins, t_cert)
            if observed > deadline + tol:
                misses.append(PropagationMiss(b, node, deadline, observed))
    return misses


def check_height_propagation(trace, tol: float = 1e-9) -> list[PropagationMiss]:
    """An honest block of height ``l`` produced at ``t0`` leaves every honest
    node with a certified block of height at least ``l`` by ``max(t0, gst) + 2 delta``.
    """
    # per node: sorted (time, height) of certifications, as a running maximum
    heights: dict[int, tuple[list[float], list[int]]] = {}
    for node in trace.honest:
        events = sorted((t, trace.blocks[b].height) for b, t in trace.certified[node].items() if b in trace.blocks)
        times, best, top = [], [], 0
        for t, h in events:
            top = max(top, h)
            times.append(t)
            best.append(top)
        heights[node] = (times, best)
    misses = []
    for b in sorted(trace.blocks):
        info = trace.blocks[b]
        if not info.honest:
            continue
        deadline = max(info.created, trace.gst) + 2.0 * trace.delta
        if deadline > trace.end_time:
            continue
        for node in trace.honest:
            times, best = heights[node]
            i = bisect.bisect_right(times, deadline + tol)
            reached = best[i - 1] if i else 0
            if reached < info.height:
                j = next((k for k, h in enumerate(best) if h >= info.height), None)
                observed = times[j] if j is not None else math.inf
                misses.append(PropagationMiss(b, node, deadline, observed))
    return misses


# -- hidden lead ---------------------------------------------------------


def _step_value(log: Sequence[tuple[float, int]], t: float) -> int:
    i = bisect.bisect_right([x[0] for x in log], t)
    return log[i - 1][1] if i else log[0][1]


def hidden_lead(trace, t: float) -> int:
    """Adversary's highest private height minus the best honest certified height."""
    private = _step_value(trace.private_top, t)
    public = _step_value(trace.honest_top, t)
    return max(0, private - public)


def hidden_lead_samples(trace, times: Iterable[float]) -> list[int]:
    ptimes = [x[0] for x in trace.private_top]
    htimes = [x[0] for x in trace.honest_top]
    out = []
    for t in times:
        i = bisect.bisect_right(ptimes, t)
        j = bisect.bisect_right(htimes, t)
        p = trace.private_top[i - 1][1] if i else -1
        h = trace.honest_top[j - 1][1] if j else 0
        out.append(max(0, p - h))
    return out


def poisson_tail(mean: float, k: int) -> float:
    """``P(Y >= k)`` for ``Y ~ Poisson(mean)``."""
    if k <= 0:
        return 1.0
    term = math.exp(-mean)
    cdf = term
    for i in range(1, k):
        term *= mean / i
        cdf += term
    return max(0.0, 1.0 - cdf)


# -- chain statistics ----------------------------------------------------


@dataclass
class ChainStats:
    window: float
    certified_rate: float
    committed_rate: float
    honest_committed_rate: float
    unique_certified_count: int
    committed_blocks: int
    latencies: list[float] = field(default_factory=list)
    full_latencies: list[float] = field(default_factory=list)

    def latency_summary(self) -> dict:
        if not self.latencies:
            return {"count": 0}
        xs = sorted(self.latencies)
        return {
            "count": len(xs),
            "mean": statistics.fmean(xs),
            "median": statistics.median(xs),
            "p95": xs[min(len(xs) - 1, int(0.95 * len(xs)))],
            "max": xs[-1],
        }


def first_commit_times(trace) -> dict[bytes, float]:
    first: dict[bytes, float] = {}
    for node in trace.honest:
        for t, _, b in trace.commits[node]:
            if b not in first or t < first[b]:
                first[b] = t
    return first


def chain_stats(trace, start: Optional[float] = None) -> ChainStats:
    """Rates per unit time over ``(start, end]``; ``start`` defaults to GST."""
    start = trace.gst if start is None else start
    end = trace.end_time
    window = end - start
    if not window > 0:
        return ChainStats(0.0, 0.0, 0.0, 0.0, 0, 0)
    first_cert: dict[bytes, float] = {}
    for node in trace.honest:
        for b, t in trace.certified[node].items():
            if b in trace.blocks and (b not in first_cert or t < first_cert[b]):
                first_cert[b] = t
    certified = [b for b, t in first_cert.items() if start < t <= end]
    first_commit = first_commit_times(trace)
    committed = [b for b, t in first_commit.items() if start < t <= end]
    honest_committed = [b for b in committed if trace.blocks[b].honest]

    honest_times = sorted(info.created for info in trace.blocks.values() if info.honest)
    unique = unique_blocks(honest_times, trace.delta)
    unique_certified = sum(
        1 for b in certified if trace.blocks[b].honest and trace.blocks[b].created in unique
    )

    latencies = sorted(first_commit[b] - trace.blocks[b].created for b in committed)
    full = []
    for b in committed:
        ts = [next((t for t, _, x in trace.commits[n] if x == b), None) for n in trace.honest]
        if all(t is not None for t in ts):
            full.append(max(ts) - trace.blocks[b].created)
    return ChainStats(
        window,
        len(certified) / window,
        len(committed) / window,
        len(honest_committed) / window,
        unique_certified,
        len(committed),
        latencies,
        sorted(full),
    )

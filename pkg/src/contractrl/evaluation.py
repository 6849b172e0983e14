"""Monte-Carlo estimation of satisfaction probabilities and bound auditing.

Intervals are Wilson score intervals: they stay valid at estimates of zero
and one, which are the rule rather than the exception for deterministic
closed loops.  Rollouts draw independent generators derived from the root
seed, so the estimate is a deterministic function of its inputs and could
be computed in parallel without changing the result.
"""

from __future__ import annotations

from dataclasses import dataclass
from statistics import NormalDist
from typing import Optional, Sequence

import numpy as np

from .dp import OracleUnavailableError, local_value_iteration
from .games import LIMITED, MdpNetwork, check_satisfaction, rollout_network

SLACK_TOL = 1e-9


def wilson_interval(successes: int, samples: int, level: float = 0.95):
    """Wilson score interval for a binomial proportion, clamped to [0, 1]."""
    if samples < 1:
        raise ValueError("need at least one sample")
    if not 0 < level < 1:
        raise ValueError("confidence level must lie in (0, 1)")
    z = NormalDist().inv_cdf(0.5 + level / 2.0)
    p = successes / samples
    denom = 1.0 + z * z / samples
    center = (p + z * z / (2 * samples)) / denom
    half = z * np.sqrt(p * (1 - p) / samples + z * z / (4 * samples * samples)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass
class EstimationResult:
    """Empirical satisfaction estimate with its confidence interval."""
    estimate: float
    ci_low: float
    ci_high: float
    samples: int
    successes: int
    level: float
    per_component: tuple   # (estimate, ci_low, ci_high) per component

    def to_json(self) -> dict:
        return {
            "estimate": self.estimate,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "samples": self.samples,
            "successes": self.successes,
            "level": self.level,
            "per_component": [list(x) for x in self.per_component],
        }


def estimate_satisfaction(net: MdpNetwork, dfas, policies, horizon: int,
                          samples: int, seed: int,
                          level: float = 0.95) -> EstimationResult:
    """Estimate the probability that every component's automaton accepts
    within the horizon under the given policies."""
    if samples < 1:
        raise ValueError("need at least one sample")
    global_hits = 0
    comp_hits = np.zeros(net.n_components, dtype=np.int64)
    for r in range(samples):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(r,)))
        traj = rollout_network(net, dfas, policies, horizon, rng)
        sat = check_satisfaction(traj, dfas)
        global_hits += int(sat.all_satisfied)
        for i, ok in enumerate(sat.per_component):
            comp_hits[i] += int(ok)
    lo, hi = wilson_interval(global_hits, samples, level)
    per = []
    for i in range(net.n_components):
        clo, chi = wilson_interval(int(comp_hits[i]), samples, level)
        per.append((comp_hits[i] / samples, clo, chi))
    return EstimationResult(global_hits / samples, lo, hi, samples,
                            global_hits, level, tuple(per))


@dataclass
class BoundComparison:
    """Empirical estimate against the certified multiplicative bound.

    ``violation`` is statistical: it flags only runs whose entire
    confidence interval lies below the certified bound, never point
    estimates, so Monte-Carlo noise cannot fail a build spuriously.
    """
    empirical: EstimationResult
    bound: Optional[float]
    per_component_bounds: Optional[list]
    slack: Optional[float]
    violation: Optional[bool]
    oracle_available: bool
    detail: str = ""

    def to_json(self) -> dict:
        return {
            "empirical": self.empirical.to_json(),
            "bound": self.bound,
            "per_component_bounds": self.per_component_bounds,
            "slack": self.slack,
            "violation": self.violation,
            "oracle_available": self.oracle_available,
            "detail": self.detail,
        }


def compare_bound(net: MdpNetwork, dfas, policies, horizon: int,
                  samples: int, seed: int, level: float = 0.95,
                  bound: Optional[float] = None,
                  per_component_bounds: Optional[Sequence] = None,
                  mode: str = LIMITED, cap: int = 500_000) -> BoundComparison:
    """Compare an empirical estimate with the product-of-local-values bound.

    Without a precomputed ``bound`` the local recursions run here; when they
    exceed the cap the report is empirical-only.  A statistically
    significant violation (the whole interval below the bound) marks an
    implementation error in whatever produced the policies or the bound.
    """
    emp = estimate_satisfaction(net, dfas, policies, horizon, samples, seed, level)
    detail = ""
    if bound is None:
        try:
            locals_ = [local_value_iteration(net, i, dfas, horizon, mode=mode,
                                             cap=cap)
                       for i in range(net.n_components)]
            per_component_bounds = [res.value_at_initial() for res in locals_]
            bound = float(np.prod(per_component_bounds))
        except OracleUnavailableError as exc:
            detail = str(exc)
            return BoundComparison(emp, None, None, None, None, False, detail)
    elif per_component_bounds is not None:
        per_component_bounds = list(per_component_bounds)
    slack = emp.estimate - bound
    violation = emp.ci_high < bound - SLACK_TOL
    return BoundComparison(emp, bound, per_component_bounds, slack,
                           violation, True, detail)

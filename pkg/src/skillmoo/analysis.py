"""Cross-run statistics and reporting: mean/SD summaries, Scott-Knott
effect-size-difference rank groups, search-efficiency reports, and
edit-pattern tables over persisted event logs.
"""

from __future__ import annotations

import math
import re
import statistics
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from scipy.stats import chi2

from .moo import ZeroBaseline, delta_hv_percent


class AnalysisError(Exception):
    """Base error for the analysis layer."""


class MissingBaseline(AnalysisError):
    """Pattern analysis needs a baseline evaluation to compare against."""


class DegenerateVariance(AnalysisError):
    """All observations identical across all groups; every method ties."""


class UndefinedEfficiency(AnalysisError):
    """Cost per hypervolume gain is undefined for a nonpositive gain."""


@dataclass(frozen=True)
class RunSet:
    """Final metrics of repeated runs for one method label."""

    label: str
    pass_rates: tuple[float, ...]
    costs: tuple[float, ...]
    runtimes: tuple[float, ...]

    def __post_init__(self) -> None:
        n = len(self.pass_rates)
        if len(self.costs) != n or len(self.runtimes) != n:
            raise ValueError("metric vectors must have equal length")


@dataclass(frozen=True)
class RankAssignment:
    """Method -> rank (1 = best) plus the group means the ranking used."""

    ranks: Mapping[str, int]
    group_means: Mapping[str, float]


@dataclass(frozen=True)
class EfficiencyReport:
    opt_cost_usd: float
    opt_runtime_s: float
    hv_base: float
    hv_new: float
    delta_hv_pct: float
    cost_per_hv_pct: float


@dataclass(frozen=True)
class PatternRow:
    description: str
    edits: int
    pass_improved: int
    cost_reduced: int
    time_reduced: int


def summarize(values: Sequence[float]) -> tuple[float, float]:
    """Arithmetic mean and sample SD (n-1 denominator; 0 when n == 1)."""
    if not values:
        raise ValueError("cannot summarize an empty vector")
    mean = statistics.fmean(values)
    sd = statistics.stdev(values) if len(values) > 1 else 0.0
    return mean, sd


def format_mean_sd(values: Sequence[float], digits: int = 2) -> str:
    mean, sd = summarize(values)
    return f"{mean:.{digits}f}±{sd:.{digits}f}"


# --- Scott-Knott ESD ------------------------------------------------------

_SK_LAMBDA_COEFF = math.pi / (2.0 * (math.pi - 2.0))
_SK_DF_COEFF = 1.0 / (math.pi - 2.0)


def _between_group_ss(means: Sequence[float], split: int) -> float:
    k = len(means)
    t1 = sum(means[:split])
    t2 = sum(means[split:])
    return t1**2 / split + t2**2 / (k - split) - (t1 + t2) ** 2 / k


def _cohen_d(x: Sequence[float], y: Sequence[float]) -> float:
    nx, ny = len(x), len(y)
    mx, my = statistics.fmean(x), statistics.fmean(y)
    if nx < 2 or ny < 2:
        pooled = 0.0
    else:
        pooled = math.sqrt(
            ((nx - 1) * statistics.variance(x) + (ny - 1) * statistics.variance(y))
            / (nx + ny - 2)
        )
    if pooled == 0.0:
        # zero spread: distinct means are an unambiguous difference
        return math.inf if mx != my else 0.0
    return (mx - my) / pooled


def scott_knott_esd(
    groups: Mapping[str, Sequence[float]],
    *,
    alpha: float = 0.05,
    effect_threshold: float = 0.2,
    lambda_coeff: float = _SK_LAMBDA_COEFF,
    df_coeff: float = _SK_DF_COEFF,
    transform: str | None = None,
) -> RankAssignment:
    """Cluster method means into statistically distinct, non-negligible rank
    groups; rank 1 is best (highest mean).

    Groups ordered by mean descending are recursively split at the point
    maximizing the between-group sum of squares B0; a split is kept when
    lambda = lambda_coeff * B0 / s0^2 exceeds the chi-square critical value
    at `alpha` with df_coeff * k degrees of freedom, where s0^2 blends the
    spread of the k means under test with the pooled sampling variance of a
    group mean. Adjacent clusters whose pooled Cohen's |d| falls below
    `effect_threshold` are then merged (the effect-size-difference step).
    When every observation in every group is identical, all methods share
    rank 1.
    """
    if not groups:
        raise ValueError("need at least one group")
    data: dict[str, list[float]] = {}
    for label, values in groups.items():
        values = list(values)
        if len(values) < 2:
            raise ValueError(f"group {label!r} needs >= 2 observations")
        if transform == "log1p":
            values = [math.log1p(v) for v in values]
        elif transform is not None:
            raise ValueError(f"unknown transform {transform!r}")
        data[label] = values

    means = {label: statistics.fmean(v) for label, v in data.items()}
    all_values = [v for vec in data.values() for v in vec]
    if len(set(all_values)) == 1:
        # degenerate variance: nothing distinguishes any method
        return RankAssignment(ranks={label: 1 for label in data}, group_means=means)

    # pooled within-group variance, shared by every recursion level
    sse = sum(
        sum((x - means[label]) ** 2 for x in vec) for label, vec in data.items()
    )
    dof = sum(len(v) for v in data.values()) - len(data)
    mse = sse / dof if dof > 0 else 0.0
    mean_inv_n = statistics.fmean(1.0 / len(v) for v in data.values())
    s2_mean = mse * mean_inv_n  # sampling variance of a group mean

    ordered = sorted(data, key=lambda label: -means[label])

    def split(labels: list[str]) -> list[list[str]]:
        k = len(labels)
        if k < 2:
            return [labels]
        ms = [means[label] for label in labels]
        best_j, best_b0 = 1, -math.inf
        for j in range(1, k):
            b0 = _between_group_ss(ms, j)
            if b0 > best_b0:
                best_j, best_b0 = j, b0
        if best_b0 <= 0:
            return [labels]
        grand = statistics.fmean(ms)
        s0_sq = (sum((m - grand) ** 2 for m in ms) + dof * s2_mean) / (k + dof)
        if s0_sq == 0.0:
            accept = True  # means differ with no estimated noise at all
        else:
            lam = lambda_coeff * best_b0 / s0_sq
            critical = chi2.ppf(1.0 - alpha, df_coeff * k)
            accept = lam > critical
        if not accept:
            return [labels]
        return split(labels[:best_j]) + split(labels[best_j:])

    clusters = split(list(ordered))

    # ESD step: merge adjacent clusters with a negligible pooled effect size
    merged: list[list[str]] = [clusters[0]]
    for cluster in clusters[1:]:
        left = [x for label in merged[-1] for x in data[label]]
        right = [x for label in cluster for x in data[label]]
        if abs(_cohen_d(left, right)) < effect_threshold:
            merged[-1] = merged[-1] + cluster
        else:
            merged.append(cluster)

    ranks = {}
    for rank, cluster in enumerate(merged, start=1):
        for label in cluster:
            ranks[label] = rank
    return RankAssignment(ranks=ranks, group_means=means)


# --- efficiency -----------------------------------------------------------

def efficiency_report(
    opt_cost: float, opt_runtime: float, hv_base: float, hv_new: float
) -> EfficiencyReport:
    """Search overhead against hypervolume uplift.

    Raises ZeroBaseline for hv_base == 0 and UndefinedEfficiency when the
    uplift is not positive (cost per percent gain has no meaning then).
    """
    delta = delta_hv_percent(hv_base, hv_new)
    if delta <= 0:
        raise UndefinedEfficiency(f"hypervolume gain is {delta:.4f}%; cost per gain undefined")
    return EfficiencyReport(
        opt_cost_usd=opt_cost,
        opt_runtime_s=opt_runtime,
        hv_base=hv_base,
        hv_new=hv_new,
        delta_hv_pct=delta,
        cost_per_hv_pct=opt_cost / delta,
    )


# --- edit-pattern table ---------------------------------------------------

_PUNCT_RE = re.compile(r"[^\w\s]")


def normalize_description(text: str) -> str:
    """Lowercase, strip punctuation, collapse whitespace."""
    return " ".join(_PUNCT_RE.sub(" ", text.lower()).split())


def pattern_table(events: Iterable[Mapping], baseline) -> list[PatternRow]:
    """Group logged edits by normalized operation description and count
    improvements of each edit's evaluation over the baseline.

    `events` is a stream of parsed event records (multiple runs may be
    concatenated); `baseline` is any object exposing pass_rate, cost_usd,
    and runtime_s. Rows come back sorted by edit count descending.
    """
    if baseline is None:
        raise MissingBaseline("pattern analysis requires a baseline evaluation")
    descriptions: dict[str, str] = {}  # candidate id -> raw description
    metrics: dict[str, Mapping] = {}  # candidate id -> result dict
    for e in events:
        kind = e.get("event")
        if kind == "proposal" and e.get("status", "ok") == "ok" and "candidate" in e:
            op = e.get("op", {})
            descriptions[e["candidate"]] = op.get("description") or e.get("rationale", "")
        elif kind == "child_eval" and "candidate" in e:
            metrics[e["candidate"]] = e["result"]

    grouped: dict[str, PatternRow] = {}
    for cand, raw_desc in descriptions.items():
        if cand not in metrics:
            continue  # proposal without a completed evaluation
        desc = normalize_description(raw_desc)
        result = metrics[cand]
        row = grouped.get(desc, PatternRow(desc, 0, 0, 0, 0))
        grouped[desc] = PatternRow(
            description=desc,
            edits=row.edits + 1,
            pass_improved=row.pass_improved + (result["pass_rate"] > baseline.pass_rate),
            cost_reduced=row.cost_reduced + (result["cost_usd"] < baseline.cost_usd),
            time_reduced=row.time_reduced + (result["runtime_s"] < baseline.runtime_s),
        )
    return sorted(grouped.values(), key=lambda r: (-r.edits, r.description))

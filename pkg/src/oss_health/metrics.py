"""Per-project indicator metrics computed from persisted events.

All operations are pure given their inputs.  Date arithmetic uses a fixed
month length of 30.44 days so that month-based metrics are recomputable
without calendar context.
"""

from __future__ import annotations

import math
import re
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .events import (
    COMMENT_TYPES,
    CONTRIBUTION_TYPES,
    EventRecord,
    EventType,
    apply_event_window,
)

DAY_SECONDS = 86_400
MONTH_DAYS = 30.44
MONTH_SECONDS = int(MONTH_DAYS * DAY_SECONDS)

_TOKEN_RE = re.compile(r"[0-9a-z]+")


# ---------------------------------------------------------------------------
# timezone histograms


@dataclass
class TimezoneHistogram:
    """Normalised activity histogram over 24 UTC-offset hour buckets.

    ``bins[0]`` is UTC-12, ``bins[23]`` is UTC+11.  When ``total`` is
    zero all bins are zero; otherwise bins sum to one.
    """

    bins: np.ndarray = field(default_factory=lambda: np.zeros(24))
    total: int = 0


def _offset_bucket(tz_offset_minutes: int) -> int:
    # half-hour offsets round toward zero
    hour = int(tz_offset_minutes / 60)
    return (hour + 12) % 24


def timezone_histogram(
    events: Iterable[EventRecord], window: tuple[int, int]
) -> TimezoneHistogram:
    """Histogram of event timezone offsets inside ``[start, end)``."""
    start, end = window
    counts = np.zeros(24)
    total = 0
    for event in apply_event_window(events, start, end):
        if event.tz_offset is None:
            continue
        counts[_offset_bucket(event.tz_offset)] += 1
        total += 1
    if total > 0:
        counts /= total
    return TimezoneHistogram(bins=counts, total=total)


def median_distribution(histograms: Sequence[TimezoneHistogram]) -> TimezoneHistogram:
    """Per-bin median across histograms, renormalised to sum one.

    Zero-total inputs carry no information and are excluded.
    """
    if not histograms:
        raise ValueError("median_distribution requires at least one histogram")
    active = [h for h in histograms if h.total > 0]
    if not active:
        raise ValueError("median_distribution requires at least one non-empty histogram")
    stacked = np.vstack([h.bins for h in active])
    med = np.median(stacked, axis=0)
    total = sum(h.total for h in active)
    norm = med.sum()
    if norm > 0:
        med = med / norm
    return TimezoneHistogram(bins=med, total=total)


def geo_rmse(project: TimezoneHistogram, reference: TimezoneHistogram) -> float:
    """Root mean squared difference between two 24-bin histograms."""
    diff = project.bins - reference.bins
    return float(np.sqrt(np.mean(diff**2)))


# ---------------------------------------------------------------------------
# simple counts


def count_stars(events: Iterable[EventRecord]) -> int:
    return sum(1 for e in events if e.event_type is EventType.WATCH)


def count_forks(events: Iterable[EventRecord]) -> int:
    return sum(1 for e in events if e.event_type is EventType.FORK)


def _tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def count_mentions(corpus_texts: Iterable[str], aliases: Iterable[str]) -> int:
    """Whole-token, case-insensitive occurrences of any alias in the corpus.

    Tokens split on non-alphanumerics, so "bitcoind" never matches the
    alias "bitcoin".  Multi-word aliases match as token runs.
    """
    alias_tokens = [tuple(_tokens(a)) for a in aliases if _tokens(a)]
    if not alias_tokens:
        raise ValueError("count_mentions requires at least one non-empty alias")
    total = 0
    for text in corpus_texts:
        toks = _tokens(text)
        for alias in alias_tokens:
            k = len(alias)
            total += sum(1 for i in range(len(toks) - k + 1) if tuple(toks[i : i + k]) == alias)
    return total


# ---------------------------------------------------------------------------
# criticality


@dataclass
class CriticalitySignals:
    """Named signal values with per-signal weights and saturation thresholds."""

    values: dict[str, float]
    weights: dict[str, float]
    thresholds: dict[str, float]

    def __post_init__(self) -> None:
        if set(self.values) != set(self.weights) or set(self.values) != set(self.thresholds):
            raise ValueError("signals, weights and thresholds must name the same keys")


DEFAULT_CRITICALITY_CONFIG: dict[str, tuple[float, float]] = {
    # signal -> (weight, threshold)
    "commit_frequency": (1.0, 1000.0),
    "recent_activity": (1.0, 26.0),
    "contributor_count": (2.0, 5000.0),
    "comment_frequency": (1.0, 5000.0),
}


def parse_criticality_config(text: str) -> dict[str, tuple[float, float]]:
    """Parse ``name = weight, threshold`` lines; ``#`` starts a comment."""
    config: dict[str, tuple[float, float]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            name, rest = (part.strip() for part in line.split("=", 1))
            weight_s, threshold_s = (part.strip() for part in rest.split(",", 1))
            config[name] = (float(weight_s), float(threshold_s))
        except ValueError as exc:
            raise ValueError(f"criticality config line {lineno}: {raw!r}") from exc
    return config


def criticality_score(signals: CriticalitySignals) -> float:
    """Weighted log-saturated aggregate of project signals, in [0, 1]."""
    if not signals.values:
        raise ValueError("criticality_score requires at least one signal")
    total = 0.0
    weight_sum = 0.0
    for name, value in signals.values.items():
        weight = signals.weights[name]
        threshold = signals.thresholds[name]
        if weight <= 0 or threshold <= 0:
            raise ValueError(f"signal {name}: weight and threshold must be positive")
        if value < 0:
            raise ValueError(f"signal {name}: value must be non-negative")
        total += weight * math.log1p(value) / math.log1p(max(value, threshold))
        weight_sum += weight
    return total / weight_sum


def default_criticality_signals(
    events: Sequence[EventRecord],
    as_of: int,
    config: Mapping[str, tuple[float, float]] | None = None,
) -> CriticalitySignals:
    """Event-store-derived stand-ins for the usual criticality signals."""
    config = dict(config or DEFAULT_CRITICALITY_CONFIG)
    year = apply_event_window(events, as_of - 12 * MONTH_SECONDS, as_of)
    commits = sum(e.counts or 0 for e in year if e.event_type is EventType.PUSH)
    recent = sum(
        1
        for e in apply_event_window(events, as_of - 90 * DAY_SECONDS, as_of)
        if e.event_type is EventType.PUSH
    )
    contributors = len({e.actor for e in events if e.event_type in CONTRIBUTION_TYPES})
    comments = sum(1 for e in year if e.event_type in COMMENT_TYPES)
    values = {
        "commit_frequency": commits / 12.0,
        "recent_activity": float(recent),
        "contributor_count": float(contributors),
        "comment_frequency": comments / 12.0,
    }
    values = {name: values.get(name, 0.0) for name in config}
    return CriticalitySignals(
        values=values,
        weights={name: config[name][0] for name in config},
        thresholds={name: config[name][1] for name in config},
    )


# ---------------------------------------------------------------------------
# longevity / recency / responsiveness


def longevity(events: Iterable[EventRecord]) -> float:
    """Mean per-actor active span in days over contribution events."""
    spans: dict[str, tuple[int, int]] = {}
    for event in events:
        if event.event_type not in CONTRIBUTION_TYPES:
            continue
        first, last = spans.get(event.actor, (event.created_at, event.created_at))
        spans[event.actor] = (min(first, event.created_at), max(last, event.created_at))
    if not spans:
        return 0.0
    return float(
        statistics.mean((last - first) / DAY_SECONDS for first, last in spans.values())
    )


def months_since_update(events: Iterable[EventRecord], as_of: int) -> int | None:
    """Whole 30.44-day months since the latest push or pull request.

    ``None`` means the repository has never been updated; the dataset
    stage excludes such repositories as dead.
    """
    latest: int | None = None
    for event in events:
        if event.event_type in (EventType.PUSH, EventType.PULL_REQUEST):
            if latest is None or event.created_at > latest:
                latest = event.created_at
    if latest is None:
        return None
    if latest > as_of:
        raise ValueError("as_of precedes an update event")
    return int((as_of - latest) / DAY_SECONDS // MONTH_DAYS)


def issue_response_times(events: Iterable[EventRecord]) -> tuple[float, float]:
    """(median, mean) days from an issue's open to its first close."""
    opened: dict[int, int] = {}
    deltas: list[float] = []
    closed: set[int] = set()
    for event in sorted(events, key=lambda e: e.created_at):
        if event.event_type is not EventType.ISSUES or event.number is None:
            continue
        if event.action == "opened":
            opened.setdefault(event.number, event.created_at)
        elif event.action == "closed":
            if event.number in opened and event.number not in closed:
                deltas.append((event.created_at - opened[event.number]) / DAY_SECONDS)
                closed.add(event.number)  # re-opened issues count the first close only
    if not deltas:
        return 0.0, 0.0
    return float(statistics.median(deltas)), float(statistics.mean(deltas))


def engagement_metrics(
    events: Iterable[EventRecord], as_of: int
) -> tuple[float, float, float, float]:
    """Monthly averages over the previous three months.

    Returns (commits, comments, pull requests opened, distinct authors),
    each divided by three.
    """
    window = apply_event_window(events, as_of - 3 * MONTH_SECONDS, as_of)
    commits = sum(e.counts or 0 for e in window if e.event_type is EventType.PUSH)
    comments = sum(1 for e in window if e.event_type in COMMENT_TYPES)
    pull_requests = sum(
        1
        for e in window
        if e.event_type is EventType.PULL_REQUEST and e.action == "opened"
    )
    contributing = [e for e in window if e.event_type in CONTRIBUTION_TYPES]
    authors = len({e.actor for e in contributing})
    return commits / 3.0, comments / 3.0, pull_requests / 3.0, authors / 3.0


# ---------------------------------------------------------------------------
# row assembly


@dataclass
class ExternalInputs:
    """Point-in-time inputs not derivable from the event stream."""

    cmc_rank: int
    alexa_rank: int | None = None
    mentions: int | None = None  # corpus-wide count, computed upstream
    criticality: CriticalitySignals | None = None


@dataclass
class ProjectMetrics:
    repo_id: str
    stars: int
    forks: int
    mentions: int
    criticality: float
    geo_rmse: float
    longevity_days: float
    months_since_update: int | None
    median_response_days: float
    average_response_days: float
    cmc_rank: int
    alexa_rank: int | None
    commits_3mo: float
    comments_3mo: float
    pull_requests_3mo: float
    authors_3mo: float
    as_of: int


#: Fixed CSV column order for metrics.csv.
METRICS_COLUMNS = [
    "repo_id",
    "stars",
    "forks",
    "mentions",
    "criticality",
    "geo_rmse",
    "longevity_days",
    "months_since_update",
    "median_response_days",
    "average_response_days",
    "cmc_rank",
    "alexa_rank",
    "commits_3mo",
    "comments_3mo",
    "pull_requests_3mo",
    "authors_3mo",
    "as_of",
]

#: The eleven indicator variables entering exploratory factor analysis.
EFA_COLUMNS = [
    "stars",
    "forks",
    "mentions",
    "criticality",
    "geo_rmse",
    "longevity_days",
    "months_since_update",
    "median_response_days",
    "average_response_days",
    "cmc_rank",
    "alexa_rank",
]

#: Engagement indicators (monthly three-month averages).
ENGAGEMENT_COLUMNS = ["commits_3mo", "comments_3mo", "pull_requests_3mo", "authors_3mo"]


def build_metrics_row(
    repo_id: str,
    events: Sequence[EventRecord],
    externals: ExternalInputs,
    reference: TimezoneHistogram,
    as_of: int,
) -> ProjectMetrics:
    """Assemble one metrics row by delegating to the individual operations."""
    tz = timezone_histogram(events, (as_of - 6 * MONTH_SECONDS, as_of))
    median_days, average_days = issue_response_times(events)
    commits, comments, pull_requests, authors = engagement_metrics(events, as_of)
    if externals.criticality is not None:
        crit = criticality_score(externals.criticality)
    else:
        crit = criticality_score(default_criticality_signals(events, as_of))
    return ProjectMetrics(
        repo_id=repo_id,
        stars=count_stars(events),
        forks=count_forks(events),
        mentions=externals.mentions if externals.mentions is not None else 0,
        criticality=crit,
        geo_rmse=geo_rmse(tz, reference),
        longevity_days=longevity(events),
        months_since_update=months_since_update(events, as_of),
        median_response_days=median_days,
        average_response_days=average_days,
        cmc_rank=externals.cmc_rank,
        alexa_rank=externals.alexa_rank,
        commits_3mo=commits,
        comments_3mo=comments,
        pull_requests_3mo=pull_requests,
        authors_3mo=authors,
        as_of=as_of,
    )

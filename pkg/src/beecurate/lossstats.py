"""Normal-model fit and sigma-rule partition of per-sample losses.

The loss population is modeled as a normal distribution; samples whose
loss strictly exceeds ``mu + n * sigma`` are discarded as hard-negative
outliers and everything else is kept.  Boundary samples (loss exactly at
the threshold) are kept.

``sigma`` is the population standard deviation (divide by N): the scored
dataset is treated as the full population being modeled, not a sample
from a larger one.  Mean and variance are accumulated with compensated
summation in a fixed order so reports are bit-reproducible and
permutation of the inputs moves the fit by less than 1e-12 relative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .records import LossRecord, SampleRecord

HISTOGRAM_BINS = 50
SIGMA_CONVENTION = "population"


@dataclass(frozen=True)
class LossStats:
    """Fitted location/scale of a loss population."""

    count: int
    mu: float
    sigma: float
    min_loss: float
    max_loss: float


@dataclass(frozen=True)
class FilterConfig:
    """Sigma multiplier and the scorer whose losses drive the filter."""

    n: float
    scorer_id: str

    def __post_init__(self) -> None:
        if not (self.n > 0):
            raise ValueError(f"sigma multiplier n must be > 0, got {self.n}")

    def warnings(self) -> list[str]:
        if not (1.0 <= self.n <= 3.0):
            return [f"sigma multiplier n={self.n} is outside the conventional [1, 3] range"]
        return []


@dataclass(frozen=True)
class FilterReport:
    """Kept/discarded partition with the fit it was derived from."""

    stats: LossStats
    threshold: float
    n: float
    kept_count: int
    discarded_count: int
    discarded_ids: tuple[str, ...]
    histogram: tuple[tuple[float, int], ...]
    warnings: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.kept_count + self.discarded_count != self.stats.count:
            raise ValueError("kept_count + discarded_count must equal stats.count")

    def to_dict(self) -> dict:
        return {
            "stats": {
                "count": self.stats.count,
                "mu": self.stats.mu,
                "sigma": self.stats.sigma,
                "min_loss": self.stats.min_loss,
                "max_loss": self.stats.max_loss,
            },
            "sigma_convention": SIGMA_CONVENTION,
            "threshold": self.threshold,
            "n": self.n,
            "kept_count": self.kept_count,
            "discarded_count": self.discarded_count,
            "discarded_ids": list(self.discarded_ids),
            "histogram": [[edge, count] for edge, count in self.histogram],
            "warnings": list(self.warnings),
        }

    def histogram_csv(self) -> str:
        lines = ["bin_lower,count"]
        lines += [f"{edge!r},{count}" for edge, count in self.histogram]
        return "\n".join(lines) + "\n"


def _compensated_sum(values: Sequence[float]) -> float:
    # Neumaier variant of Kahan summation, sequential in input order.
    total = 0.0
    comp = 0.0
    for v in values:
        t = total + v
        if abs(total) >= abs(v):
            comp += (total - t) + v
        else:
            comp += (v - t) + total
        total = t
    return total + comp


def fit_normal(losses: Sequence[float]) -> LossStats:
    """Fit mean and population standard deviation to a loss list.

    Two-pass: compensated mean first, then compensated sum of squared
    deviations.  Requires at least two finite values.
    """
    count = len(losses)
    if count < 2:
        raise ValueError(f"need at least 2 losses to fit a distribution, got {count}")
    for i, v in enumerate(losses):
        if not math.isfinite(v):
            raise ValueError(f"loss at index {i} is not finite: {v!r}")
    lo = min(losses)
    hi = max(losses)
    if lo == hi:
        # Degenerate population: sigma is exactly zero by definition.
        return LossStats(count=count, mu=lo, sigma=0.0, min_loss=lo, max_loss=hi)
    mu = min(max(_compensated_sum(losses) / count, lo), hi)
    deviations = [v - mu for v in losses]
    # Scaling by the largest deviation keeps the squares away from
    # underflow/overflow, so sigma == 0 exactly iff all losses are equal.
    scale = max(abs(d) for d in deviations)
    if scale == 0.0:
        sigma = 0.0
    else:
        ssq = _compensated_sum([(d / scale) ** 2 for d in deviations])
        sigma = scale * math.sqrt(max(ssq, 0.0) / count)
    return LossStats(count=count, mu=mu, sigma=sigma, min_loss=lo, max_loss=hi)


def normal_pdf(x: float, mu: float, sigma: float) -> float:
    """Density of the normal distribution at ``x``; requires ``sigma > 0``."""
    if not (sigma > 0):
        raise ValueError(f"sigma must be > 0, got {sigma}")
    var = sigma * sigma
    return math.exp(-((x - mu) ** 2) / (2.0 * var)) / math.sqrt(2.0 * math.pi * var)


def outlier_threshold(stats: LossStats, n: float) -> float:
    """The cut point ``mu + n * sigma`` above which samples are discarded."""
    if not (n > 0):
        raise ValueError(f"sigma multiplier n must be > 0, got {n}")
    return stats.mu + n * stats.sigma


def is_outlier(loss: float, threshold: float) -> bool:
    """Strictly above the threshold counts as an outlier; boundary is kept."""
    if not (math.isfinite(loss) and math.isfinite(threshold)):
        raise ValueError("loss and threshold must be finite")
    return loss > threshold


def expected_retention(n: float) -> float:
    """Retained fraction under exact normality: the standard normal CDF at n."""
    if not (n > 0):
        raise ValueError(f"sigma multiplier n must be > 0, got {n}")
    return 0.5 * (1.0 + math.erf(n / math.sqrt(2.0)))


def loss_histogram(
    losses: Sequence[float], bins: int = HISTOGRAM_BINS
) -> tuple[tuple[float, int], ...]:
    """Equal-width histogram over [min, max]; descriptive only.

    Collapses to a single bin when the population is constant.
    """
    lo = min(losses)
    hi = max(losses)
    if lo == hi:
        return ((lo, len(losses)),)
    counts, edges = np.histogram(np.asarray(losses, dtype=np.float64), bins=bins, range=(lo, hi))
    return tuple((float(edge), int(count)) for edge, count in zip(edges[:-1], counts))


def filter_dataset(
    samples: Sequence[SampleRecord],
    losses: Sequence[LossRecord],
    config: FilterConfig,
) -> tuple[list[SampleRecord], FilterReport]:
    """Partition samples into kept and discarded by the sigma rule.

    Every sample must have exactly one loss record from
    ``config.scorer_id``; loss records from other scorers are ignored.
    The fit runs over losses in sample order, and the kept list preserves
    the input sample order.
    """
    by_id: dict[str, float] = {}
    for record in losses:
        if record.scorer_id != config.scorer_id:
            continue
        if record.sample_id in by_id:
            raise ValueError(f"duplicate loss record for sample {record.sample_id!r}")
        by_id[record.sample_id] = record.loss

    sample_ids = {s.id for s in samples}
    orphans = [sid for sid in by_id if sid not in sample_ids]
    if orphans:
        raise ValueError(f"loss records reference unknown sample ids: {sorted(orphans)[:5]}")
    missing = [s.id for s in samples if s.id not in by_id]
    if missing:
        raise ValueError(
            f"samples have no loss record from scorer {config.scorer_id!r}: {missing[:5]}"
        )

    ordered_losses = [by_id[s.id] for s in samples]
    stats = fit_normal(ordered_losses)
    threshold = outlier_threshold(stats, config.n)

    kept: list[SampleRecord] = []
    discarded_ids: list[str] = []
    for sample, loss in zip(samples, ordered_losses):
        if is_outlier(loss, threshold):
            discarded_ids.append(sample.id)
        else:
            kept.append(sample)

    report = FilterReport(
        stats=stats,
        threshold=threshold,
        n=config.n,
        kept_count=len(kept),
        discarded_count=len(discarded_ids),
        discarded_ids=tuple(discarded_ids),
        histogram=loss_histogram(ordered_losses),
        warnings=tuple(config.warnings()),
    )
    return kept, report

import csv
import io
import math
from pathlib import Path

import numpy as np
from judge_agent_forest.engine import AcceptanceProfile
from judge_agent_forest.errors import EmptyProfile
from pydantic import BaseModel

DEFAULT_BINS = 10


class ProfileSummary(BaseModel):
    mean: float
    std: float
    n: int


class HistogramReport(BaseModel):
    """
    Distribution of acceptance probabilities. Bins are half-open [lo, hi)
    except the last, which is closed at 1.0.
    """

    edges: list[float]
    counts: list[int]
    mean: float
    std: float
    n: int

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, count in zip(self.edges, self.edges[1:], self.counts):
            writer.writerow([repr(lo), repr(hi), count])
        writer.writerow([f"mean={self.mean!r}", f"std={self.std!r}", self.n])
        return buffer.getvalue()


class ProfileComparison(BaseModel):
    first: ProfileSummary
    second: ProfileSummary
    mean_delta: float
    std_delta: float


def _values(profile: AcceptanceProfile) -> np.ndarray:
    if not profile.p_hat:
        raise EmptyProfile("Acceptance profile has no instances")
    return np.asarray(profile.p_hat, dtype=np.float64)


def summarize(profile: AcceptanceProfile) -> ProfileSummary:
    values = _values(profile)
    return ProfileSummary(mean=float(values.mean()), std=float(values.std()), n=len(values))


def make_histogram(profile: AcceptanceProfile, bins: int = DEFAULT_BINS) -> HistogramReport:
    """
    Histogram of p_hat over [0, 1] with population mean and standard deviation.
    :raises EmptyProfile: if the profile has no instances.
    """
    if bins < 1:
        raise ValueError(f"bins must be at least 1, got {bins}")
    values = _values(profile)
    counts = [0] * bins
    for p in values:
        # Rounding keeps exact fractions such as 3/10 on their own bin edge.
        index = min(int(math.floor(round(p * bins, 9))), bins - 1)
        counts[max(index, 0)] += 1
    summary = summarize(profile)
    return HistogramReport(
        edges=[i / bins for i in range(bins + 1)],
        counts=counts,
        mean=summary.mean,
        std=summary.std,
        n=summary.n,
    )


def compare_profiles(first: AcceptanceProfile, second: AcceptanceProfile) -> ProfileComparison:
    a, b = summarize(first), summarize(second)
    return ProfileComparison(first=a, second=b, mean_delta=a.mean - b.mean, std_delta=a.std - b.std)


def write_histogram_csv(report: HistogramReport, path: str | Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(report.to_csv())

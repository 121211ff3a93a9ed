import logging
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Literal

import numpy as np
from judge_agent_forest.cohort import CohortSchema, FeatureVector, feature_matrix
from judge_agent_forest.divergence import (
    DEFAULT_MIN_GAIN,
    DualScorer,
    ScorerConfig,
    best_contiguous_cut,
    log_mean_exp,
    train_dual_scorer,
)
from judge_agent_forest.errors import (
    DegenerateInput,
    EmptyReference,
    LengthMismatch,
    NoInformativeSplit,
    ReferenceIsWholeRegion,
    SchemaError,
    TooFewPoints,
    UnknownField,
)
from pydantic import BaseModel, model_validator

logger = logging.getLogger(__name__)

MAX_ONE_HOT_ARITY = 8
MIN_VALUE_SHARE = 0.05

ThresholdKind = Literal["smooth", "max"]


@dataclass(frozen=True)
class FeatureTable:
    """
    Column view of a list of feature vectors: the numeric matrix plus one
    string array per categorical field.
    """

    matrix: np.ndarray
    columns: dict[str, np.ndarray]

    @property
    def n(self) -> int:
        return len(self.matrix)

    @classmethod
    def from_features(cls, features: Sequence[FeatureVector]) -> "FeatureTable":
        matrix = feature_matrix(features)
        if not features:
            return cls(matrix=matrix, columns={})
        names = [name for name, _ in features[0].categorical]
        columns = {name: np.empty(len(features), dtype=object) for name in names}
        for i, vector in enumerate(features):
            if [name for name, _ in vector.categorical] != names:
                raise SchemaError("Feature vectors of one cohort must share their categorical fields")
            for name, value in vector.categorical:
                columns[name][i] = value
        return cls(matrix=matrix, columns=columns)

    def subset(self, rows) -> "FeatureTable":
        return FeatureTable(
            matrix=self.matrix[rows],
            columns={name: column[rows] for name, column in self.columns.items()},
        )

    def column(self, field: str) -> np.ndarray:
        if field not in self.columns:
            raise UnknownField(f"Field {field!r} is not part of the feature table")
        return self.columns[field]


def as_table(features: FeatureTable | Sequence[FeatureVector]) -> FeatureTable:
    if isinstance(features, FeatureTable):
        return features
    return FeatureTable.from_features(list(features))


class OodThresholds(BaseModel):
    tau_smooth: float
    tau_max: float

    @model_validator(mode="after")
    def check_order(self) -> "OodThresholds":
        if self.tau_smooth > self.tau_max:
            raise ValueError(f"tau_smooth {self.tau_smooth} exceeds tau_max {self.tau_max}")
        return self

    def pick(self, kind: ThresholdKind) -> float:
        return self.tau_smooth if kind == "smooth" else self.tau_max


def ood_thresholds(reference_scores) -> OodThresholds:
    """
    Parameter-free thresholds from reference scores: the log-mean-exp (a smooth
    maximum) and the hard maximum.
    """
    scores = np.asarray(reference_scores, dtype=np.float64).ravel()
    if len(scores) == 0:
        raise EmptyReference("Thresholds need at least one reference score")
    tau_max = float(scores.max())
    # log-mean-exp never exceeds the max; rounding on constant scores may.
    tau_smooth = min(log_mean_exp(scores), tau_max)
    return OodThresholds(tau_smooth=tau_smooth, tau_max=tau_max)


@dataclass(frozen=True, eq=False)
class DivergencePredicate:
    """h(x) = 1{f(x) >= cut}, learned to split a region into two dissimilar halves."""

    scorer: DualScorer
    cut: float
    active_region: str | None = None
    objective: float = 0.0
    kind: Literal["divergence"] = "divergence"

    def evaluate(self, table: FeatureTable) -> np.ndarray:
        return self.scorer(table.matrix) >= self.cut

    def describe(self) -> str:
        return f"divergence split f(x) >= {self.cut:.4f}"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "active_region": self.active_region,
            "scorer": self.scorer.to_dict(),
            "cut": self.cut,
            "objective": self.objective,
        }


@dataclass(frozen=True, eq=False)
class OodPredicate:
    """h(x) = 1{f(x) > tau}, flagging points unlike a reference subset."""

    scorer: DualScorer
    thresholds: OodThresholds
    threshold_kind: ThresholdKind = "max"
    active_region: str | None = None
    kind: Literal["ood"] = "ood"

    @property
    def threshold(self) -> float:
        return self.thresholds.pick(self.threshold_kind)

    def evaluate(self, table: FeatureTable) -> np.ndarray:
        return self.scorer(table.matrix) > self.threshold

    def describe(self) -> str:
        return f"out-of-distribution f(x) > {self.threshold:.4f} ({self.threshold_kind})"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "active_region": self.active_region,
            "scorer": self.scorer.to_dict(),
            "threshold_kind": self.threshold_kind,
            "tau_smooth": self.thresholds.tau_smooth,
            "tau_max": self.thresholds.tau_max,
        }


@dataclass(frozen=True)
class CategoricalPredicate:
    field: str
    value: str
    active_region: str | None = None
    kind: Literal["categorical"] = "categorical"

    def evaluate(self, table: FeatureTable) -> np.ndarray:
        return np.asarray(table.column(self.field) == self.value, dtype=bool)

    def describe(self) -> str:
        return f"{self.field} == {self.value!r}"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "active_region": self.active_region,
            "field": self.field,
            "value": self.value,
        }


HashPredicate = DivergencePredicate | OodPredicate | CategoricalPredicate


def predicate_from_dict(data: dict) -> HashPredicate:
    try:
        kind = data["kind"]
        region = data.get("active_region")
        if kind == "divergence":
            return DivergencePredicate(
                scorer=DualScorer.from_dict(data["scorer"]),
                cut=float(data["cut"]),
                active_region=region,
                objective=float(data.get("objective", 0.0)),
            )
        if kind == "ood":
            return OodPredicate(
                scorer=DualScorer.from_dict(data["scorer"]),
                thresholds=OodThresholds(tau_smooth=data["tau_smooth"], tau_max=data["tau_max"]),
                threshold_kind=data["threshold_kind"],
                active_region=region,
            )
        if kind == "categorical":
            return CategoricalPredicate(field=data["field"], value=data["value"], active_region=region)
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"Invalid predicate document: {e}") from e
    raise SchemaError(f"Unknown predicate kind: {kind!r}")


def learn_split_predicate(
        region_features: np.ndarray,
        cfg: ScorerConfig,
        rng: np.random.Generator,
        alternations: int = 3,
        min_gain: float = DEFAULT_MIN_GAIN,
        active_region: str | None = None,
) -> DivergencePredicate:
    """
    Learn a divergence split of one region by alternating optimization.

    The initial partition is the median of a random projection. Each alternation
    trains a scorer on the symmetric objective between the current halves and
    re-partitions at the best contiguous cut of its scores.
    :raises TooFewPoints: for a region of fewer than two points.
    :raises NoInformativeSplit: if the region has no informative cut.
    """
    x = np.asarray(region_features, dtype=np.float64)
    if x.ndim != 2 or len(x) < 2:
        raise TooFewPoints(f"A split needs at least two points, got {len(x)}")
    if x.shape[1] == 0 or np.all(x == x[0]):
        raise NoInformativeSplit("Region has no numeric variation to split on")

    projection = x @ rng.normal(size=x.shape[1])
    order = np.argsort(projection, kind="stable")
    upper = np.zeros(len(x), dtype=bool)
    upper[order[len(x) // 2:]] = True

    scorer = None
    cut = None
    for step in range(alternations):
        if upper.sum() < 2 or (~upper).sum() < 2:
            break
        try:
            candidate = train_dual_scorer(x[upper], x[~upper], cfg, rng, objective="symmetric")
            candidate_cut = best_contiguous_cut(candidate(x), min_gain=min_gain)
        except (NoInformativeSplit, TooFewPoints, DegenerateInput):
            # Later alternations only refine; keep the last informative split.
            if scorer is None:
                raise
            break
        scorer, cut = candidate, candidate_cut
        upper = scorer(x) >= cut.cut_value
        logger.debug(
            f"Split alternation {step}: cut {cut.cut_value:.4f}, "
            f"{cut.left_count}/{cut.right_count} points, objective {cut.objective:.4f}"
        )

    if scorer is None:
        raise NoInformativeSplit("Initial partition leaves fewer than two points on a side")
    return DivergencePredicate(
        scorer=scorer, cut=cut.cut_value, active_region=active_region, objective=cut.objective
    )


def _reference_mask(reference_rows, n: int) -> np.ndarray:
    """
    Normalize a reference subset given as a boolean mask, an index array or a
    set of row indices.
    :raises LengthMismatch: if a boolean mask does not cover the region.
    """
    if isinstance(reference_rows, (set, frozenset)):
        reference_rows = sorted(reference_rows)
    rows = np.asarray(reference_rows)
    mask = np.zeros(n, dtype=bool)
    if rows.dtype == bool:
        if rows.shape != (n,):
            raise LengthMismatch(f"Reference mask has shape {rows.shape}, region has {n} points")
        mask[rows] = True
    else:
        mask[np.fromiter(rows.ravel(), dtype=np.intp, count=rows.size)] = True
    return mask


def learn_ood_predicate(
        region_features: np.ndarray,
        reference_rows,
        cfg: ScorerConfig,
        threshold_kind: ThresholdKind,
        rng: np.random.Generator,
        active_region: str | None = None,
) -> tuple[OodPredicate, OodThresholds]:
    """
    Train a scorer for D(candidates || reference) and threshold it with the
    reference scores only.
    :param reference_rows: Boolean mask, index array or index set of the reference subset.
    :raises EmptyReference: if the reference subset has fewer than two points.
    :raises ReferenceIsWholeRegion: if no candidate rows remain.
    """
    x = np.asarray(region_features, dtype=np.float64)
    reference = _reference_mask(reference_rows, len(x))
    n_reference = int(reference.sum())
    if n_reference == 0:
        raise EmptyReference("Reference subset is empty")
    if reference.all():
        raise ReferenceIsWholeRegion("Reference subset covers the whole region")
    if n_reference < 2:
        raise EmptyReference(f"Reference subset needs at least two points, got {n_reference}")

    scorer = train_dual_scorer(x[~reference], x[reference], cfg, rng, objective="forward")
    thresholds = ood_thresholds(scorer(x[reference]))
    predicate = OodPredicate(
        scorer=scorer,
        thresholds=thresholds,
        threshold_kind=threshold_kind,
        active_region=active_region,
    )
    logger.debug(
        f"OOD predicate on {len(x)} points ({int(reference.sum())} reference): "
        f"tau_smooth {thresholds.tau_smooth:.4f}, tau_max {thresholds.tau_max:.4f}"
    )
    return predicate, thresholds


def categorical_bits(
        schema: CohortSchema,
        field: str,
        values: Sequence[str],
        counts: dict[str, int] | None = None,
) -> list[CategoricalPredicate]:
    """
    One-hot predicates for a categorical field.
    :param values: Values present, in the order predicates are emitted.
    :param counts: Occurrences per value; needed to filter fields of arity > 8.
    :return: No bit for a constant field, one bit for a binary field, one bit per
        value up to arity 8, otherwise bits only for values covering >= 5%.
    :raises UnknownField: if the field is not in the schema.
    """
    schema.side_of(field)
    values = list(dict.fromkeys(values))
    if len(values) <= 1:
        return []
    if len(values) == 2:
        return [CategoricalPredicate(field=field, value=values[0])]
    if len(values) <= MAX_ONE_HOT_ARITY:
        return [CategoricalPredicate(field=field, value=value) for value in values]
    if counts is None:
        raise ValueError(f"Field {field!r} has {len(values)} values; counts are required")
    total = sum(counts.get(value, 0) for value in values)
    return [
        CategoricalPredicate(field=field, value=value)
        for value in values
        if total and counts.get(value, 0) / total >= MIN_VALUE_SHARE
    ]

import logging
from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from judge_agent_forest.cohort import FeatureVector
from judge_agent_forest.common.jsonio import read_json, write_json
from judge_agent_forest.divergence import DEFAULT_MIN_GAIN, ScorerConfig
from judge_agent_forest.errors import (
    DegenerateInput,
    DimensionError,
    EmptyReference,
    LengthMismatch,
    NoInformativeSplit,
    ReferenceIsWholeRegion,
    SchemaError,
    TooFewPoints,
)
from judge_agent_forest.hashing.metrics import (
    CodeMetrics,
    ObjectiveWeights,
    bit_redundancy,
    code_information_metrics,
    information_metrics,
    plugin_entropy,
)
from judge_agent_forest.hashing.predicates import (
    CategoricalPredicate,
    FeatureTable,
    HashPredicate,
    ThresholdKind,
    as_table,
    categorical_bits,
    learn_ood_predicate,
    learn_split_predicate,
    predicate_from_dict,
)
from pydantic import BaseModel, Field, NonNegativeInt, PositiveInt

logger = logging.getLogger(__name__)

SplitKind = Literal["categorical", "divergence", "ood"]

_SPLIT_FAILURES = (
    NoInformativeSplit,
    TooFewPoints,
    DegenerateInput,
    EmptyReference,
    ReferenceIsWholeRegion,
)


@dataclass(frozen=True)
class HashCode:
    bits: tuple[int, ...]
    active_mask: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.bits)

    @property
    def effective_bits(self) -> tuple[int, ...]:
        return tuple(b & m for b, m in zip(self.bits, self.active_mask))

    @property
    def bucket_key(self) -> str:
        return "".join(str(b) for b in self.effective_bits)

    @property
    def prefix_key(self) -> str:
        """The realized path: one of '0', '1' or '-' (inactive) per predicate."""
        return "".join(str(b) if m else "-" for b, m in zip(self.bits, self.active_mask))


@dataclass
class HashForest:
    """
    Ordered predicates forming a forest of decision paths. A predicate with
    ``active_region`` None is global; otherwise it only applies to instances
    whose path over the earlier predicates equals that prefix.
    """

    predicates: list[HashPredicate] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.predicates)

    @property
    def input_dim(self) -> int | None:
        for predicate in self.predicates:
            scorer = getattr(predicate, "scorer", None)
            if scorer is not None:
                return scorer.input_dim
        return None

    def describe(self) -> list[dict]:
        return [
            {"index": j, "kind": p.kind, "active_region": p.active_region, "rule": p.describe()}
            for j, p in enumerate(self.predicates)
        ]


def _assign_arrays(forest: HashForest, table: FeatureTable) -> tuple[np.ndarray, np.ndarray]:
    n, width = table.n, len(forest.predicates)
    expected = forest.input_dim
    if expected is not None and table.matrix.shape[1] != expected:
        raise DimensionError(
            f"Forest expects numeric features of dimension {expected}, got {table.matrix.shape[1]}"
        )
    bits = np.zeros((n, width), dtype=np.int8)
    mask = np.zeros((n, width), dtype=np.int8)
    prefixes = [""] * n
    for j, predicate in enumerate(forest.predicates):
        if predicate.active_region is None:
            active = np.ones(n, dtype=bool)
        else:
            active = np.fromiter((p == predicate.active_region for p in prefixes), dtype=bool, count=n)
        if active.any():
            bits[active, j] = predicate.evaluate(table.subset(active))
        mask[:, j] = active
        prefixes = [
            p + (str(bits[i, j]) if active[i] else "-") for i, p in enumerate(prefixes)
        ]
    return bits, mask


def assign_codes(forest: HashForest, features: FeatureTable | Sequence[FeatureVector]) -> list[HashCode]:
    """
    Codes of many instances. Bits outside an instance's path are 0 with mask 0.
    :raises DimensionError: if the numeric features do not fit the scorers.
    """
    bits, mask = _assign_arrays(forest, as_table(features))
    return [
        HashCode(bits=tuple(int(b) for b in row_bits), active_mask=tuple(int(m) for m in row_mask))
        for row_bits, row_mask in zip(bits, mask)
    ]


def assign_code(forest: HashForest, x: FeatureVector) -> HashCode:
    return assign_codes(forest, [x])[0]


class ReferenceFilter(BaseModel):
    """Selects the reference subset X_ref as the instances with ``field == value``."""

    field: str
    value: str

    def mask(self, table: FeatureTable) -> np.ndarray:
        return np.asarray(table.column(self.field) == self.value, dtype=bool)


class GrowthConfig(BaseModel):
    max_bits: NonNegativeInt = 8
    min_bucket_size: PositiveInt = 8
    min_info_gain: float = 0.02
    split_kinds: tuple[SplitKind, ...] = ("categorical", "divergence", "ood")
    redundancy_ratio: float = Field(default=0.9, gt=0.0, le=1.0)
    alternations: PositiveInt = 3
    cut_min_gain: float = DEFAULT_MIN_GAIN
    ood_threshold_kind: ThresholdKind = "max"
    categorical_fields: tuple[str, ...] | None = None
    reference: ReferenceFilter | None = None
    scorer: ScorerConfig = Field(default_factory=ScorerConfig)
    weights: ObjectiveWeights = Field(default_factory=ObjectiveWeights)


@dataclass
class _Candidate:
    predicate: HashPredicate
    column: np.ndarray
    active: np.ndarray
    gain: float


class _ForestGrower:
    """Greedy state of one growth run: accepted bits, paths and exhausted leaves."""

    def __init__(self, table: FeatureTable, labels: np.ndarray, growth: GrowthConfig, rng: np.random.Generator):
        self.table = table
        self.labels = labels
        self.growth = growth
        self.rng = rng
        self.predicates: list[HashPredicate] = []
        self.effective = np.zeros((table.n, 0), dtype=np.int8)
        self.prefixes = [""] * table.n
        self.exhausted: set[str] = set()
        self.value = self._objective(self.effective)
        self.history: list[CodeMetrics] = [information_metrics(self.effective, labels)]

    def _objective(self, effective: np.ndarray) -> float:
        return information_metrics(effective, self.labels).weighted_objective(self.growth.weights)

    def _candidate(self, predicate: HashPredicate, column: np.ndarray, active: np.ndarray) -> _Candidate:
        effective = np.column_stack([self.effective, (column & active).astype(np.int8)])
        return _Candidate(predicate, column, active, self._objective(effective) - self.value)

    def acceptable(self, candidate: _Candidate) -> bool:
        if candidate.gain < self.growth.min_info_gain:
            return False
        rows = candidate.active
        new_bit = candidate.column[rows].astype(np.int8)
        own_entropy = plugin_entropy(new_bit)
        if own_entropy <= 0.0:
            return False
        redundancy = bit_redundancy(new_bit, self.effective[rows])
        return redundancy < self.growth.redundancy_ratio * own_entropy

    def accept(self, candidate: _Candidate):
        column = candidate.column & candidate.active
        self.predicates.append(candidate.predicate)
        self.effective = np.column_stack([self.effective, column.astype(np.int8)])
        old_prefixes = self.prefixes
        self.prefixes = [
            p + (("1" if column[i] else "0") if candidate.active[i] else "-")
            for i, p in enumerate(old_prefixes)
        ]
        # Children of an exhausted leaf stay exhausted.
        self.exhausted = {
            new for old, new in zip(old_prefixes, self.prefixes) if old in self.exhausted
        }
        self.value += candidate.gain
        self.history.append(information_metrics(self.effective, self.labels))
        logger.info(
            f"Accepted predicate {len(self.predicates) - 1}: {candidate.predicate.describe()} "
            f"(gain {candidate.gain:.4f} nats)"
        )

    def best_categorical(self, pool: list[CategoricalPredicate]) -> _Candidate | None:
        used = {(p.field, p.value) for p in self.predicates if isinstance(p, CategoricalPredicate)}
        everyone = np.ones(self.table.n, dtype=bool)
        best = None
        for predicate in pool:
            if (predicate.field, predicate.value) in used:
                continue
            candidate = self._candidate(predicate, predicate.evaluate(self.table), everyone)
            if best is None or candidate.gain > best.gain:
                best = candidate
        return best

    def largest_leaf(self) -> str | None:
        sizes = Counter(self.prefixes)
        splittable = [
            (-size, key)
            for key, size in sizes.items()
            if size >= 2 * self.growth.min_bucket_size and key not in self.exhausted
        ]
        return min(splittable)[1] if splittable else None

    def local_candidates(self, leaf: str, reference: np.ndarray | None):
        rows = np.fromiter((p == leaf for p in self.prefixes), dtype=bool, count=self.table.n)
        region = self.table.matrix[rows]
        if "divergence" in self.growth.split_kinds:
            try:
                predicate = learn_split_predicate(
                    region,
                    self.growth.scorer,
                    self.rng,
                    alternations=self.growth.alternations,
                    min_gain=self.growth.cut_min_gain,
                    active_region=leaf,
                )
                yield self._local(predicate, rows)
            except _SPLIT_FAILURES as e:
                logger.debug(f"No divergence split for leaf {leaf!r}: {e}")
        if "ood" in self.growth.split_kinds and reference is not None:
            try:
                predicate, _ = learn_ood_predicate(
                    region,
                    reference[rows],
                    self.growth.scorer,
                    self.growth.ood_threshold_kind,
                    self.rng,
                    active_region=leaf,
                )
                yield self._local(predicate, rows)
            except _SPLIT_FAILURES as e:
                logger.debug(f"No OOD split for leaf {leaf!r}: {e}")

    def _local(self, predicate: HashPredicate, rows: np.ndarray) -> _Candidate:
        column = np.zeros(self.table.n, dtype=bool)
        column[rows] = predicate.evaluate(self.table.subset(rows))
        return self._candidate(predicate, column, rows)

    def children_large_enough(self, candidate: _Candidate) -> bool:
        ones = int((candidate.column & candidate.active).sum())
        zeros = int(candidate.active.sum()) - ones
        return min(ones, zeros) >= self.growth.min_bucket_size


def _categorical_pool(table: FeatureTable, growth: GrowthConfig, schema, label_field: str | None) -> list[CategoricalPredicate]:
    if "categorical" not in growth.split_kinds or schema is None:
        return []
    names = growth.categorical_fields
    if names is None:
        names = tuple(name for name in schema.fields() if name != label_field)
    pool = []
    for name in names:
        counts = Counter(str(v) for v in table.column(name))
        ordered = sorted(counts, key=lambda value: (-counts[value], value))
        pool.extend(categorical_bits(schema, name, ordered, dict(counts)))
    return pool


@dataclass
class GrowthResult:
    forest: HashForest
    history: list[CodeMetrics]


def grow_forest(
        features: FeatureTable | Sequence[FeatureVector],
        labels: Sequence,
        growth: GrowthConfig,
        rng: np.random.Generator,
        schema=None,
        label_field: str | None = None,
        reference_mask: np.ndarray | None = None,
) -> HashForest:
    return grow_forest_with_history(
        features, labels, growth, rng, schema, label_field, reference_mask
    ).forest


def grow_forest_with_history(
        features: FeatureTable | Sequence[FeatureVector],
        labels: Sequence,
        growth: GrowthConfig,
        rng: np.random.Generator,
        schema=None,
        label_field: str | None = None,
        reference_mask: np.ndarray | None = None,
) -> GrowthResult:
    """
    Greedily add predicates while fewer than ``max_bits`` exist.

    Each step first tries the unused global categorical bit with the best
    objective gain. Failing that, the largest splittable leaf gets a local
    divergence split, then an OOD split if a reference subset is configured.
    A candidate is accepted iff it gains at least ``min_info_gain`` nats and
    the information it shares with the existing bits in its region stays below
    ``redundancy_ratio`` times its own entropy there. A leaf with no acceptable
    candidate is never tried again.
    :param schema: Cohort schema; required for categorical bits.
    :param label_field: Side-info field used as labels, never offered as a bit.
    :param reference_mask: Rows forming X_ref; overrides ``growth.reference``.
    """
    table = as_table(features)
    labels = np.asarray([str(v) for v in labels])
    if len(labels) != table.n:
        raise LengthMismatch(f"{table.n} feature vectors but {len(labels)} labels")
    if table.n == 0:
        raise SchemaError("Cannot grow a forest on an empty cohort")

    if reference_mask is None and growth.reference is not None:
        reference_mask = growth.reference.mask(table)
    grower = _ForestGrower(table, labels, growth, rng)
    pool = _categorical_pool(table, growth, schema, label_field)

    while len(grower.predicates) < growth.max_bits:
        candidate = grower.best_categorical(pool)
        if candidate is not None and grower.acceptable(candidate):
            grower.accept(candidate)
            continue

        leaf = grower.largest_leaf()
        if leaf is None:
            break
        for candidate in grower.local_candidates(leaf, reference_mask):
            if grower.children_large_enough(candidate) and grower.acceptable(candidate):
                grower.accept(candidate)
                break
        else:
            grower.exhausted.add(leaf)

    logger.info(
        f"Grew forest with {len(grower.predicates)} predicates; "
        f"I(Y:C) = {grower.history[-1].mutual_info:.4f} nats"
    )
    return GrowthResult(forest=HashForest(predicates=list(grower.predicates)), history=grower.history)


def forest_to_dict(forest: HashForest) -> dict:
    return {"predicates": [p.to_dict() for p in forest.predicates]}


def forest_from_dict(data: dict) -> HashForest:
    if not isinstance(data, dict) or not isinstance(data.get("predicates"), list):
        raise SchemaError("Forest document must be an object with a 'predicates' list")
    return HashForest(predicates=[predicate_from_dict(p) for p in data["predicates"]])


def save_forest(forest: HashForest, path: str | Path):
    write_json(path, forest_to_dict(forest))


def load_forest(path: str | Path) -> HashForest:
    return forest_from_dict(read_json(path))


def hash_report(forest: HashForest, codes: Sequence[HashCode], labels: Sequence) -> dict:
    """Predicate descriptions, bucket sizes and code metrics of one cohort."""
    buckets = Counter(code.bucket_key for code in codes)
    return {
        "predicates": forest.describe(),
        "buckets": [
            {"key": key, "size": size}
            for key, size in sorted(buckets.items(), key=lambda item: (-item[1], item[0]))
        ],
        "metrics": code_information_metrics(codes, labels).to_dict(),
    }

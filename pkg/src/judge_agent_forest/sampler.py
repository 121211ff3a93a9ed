import logging
from abc import ABC, abstractmethod
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Literal

import numpy as np
from judge_agent_forest.cohort import Cohort, cohort_features, split_multi_value
from judge_agent_forest.common.rng import derive_rng, sample_without_replacement
from judge_agent_forest.errors import ConfigError
from judge_agent_forest.graph import (
    KnowledgeGraph,
    PruneConfig,
    RelationSpec,
    build_graph,
    sample_neighbors,
)
from judge_agent_forest.hashing.forest import (
    GrowthConfig,
    HashCode,
    HashForest,
    assign_codes,
    grow_forest,
)
from pydantic import BaseModel, NonNegativeInt, model_validator

logger = logging.getLogger(__name__)

Scheme = Literal["lsh", "label-overlap", "graph"]


class SamplerConfig(BaseModel):
    """
    How judge neighbourhoods are drawn. ``k = 0`` gives isolated judging under
    every scheme. For ``label-overlap`` the split defaults to ceil(k/2)
    positives and floor(k/2) negatives.
    """

    scheme: Scheme = "label-overlap"
    k: NonNegativeInt = 8
    max_hamming_radius: NonNegativeInt = 1
    k_pos: NonNegativeInt | None = None
    k_neg: NonNegativeInt | None = None
    overlap_field: str | None = None

    @model_validator(mode="after")
    def check_scheme(self) -> "SamplerConfig":
        if self.scheme != "label-overlap":
            return self
        if self.k_pos is None and self.k_neg is None:
            self.k_pos = (self.k + 1) // 2
            self.k_neg = self.k // 2
        elif self.k_pos is None:
            self.k_pos = self.k - self.k_neg
        elif self.k_neg is None:
            self.k_neg = self.k - self.k_pos
        if self.k_pos < 0 or self.k_neg < 0 or self.k_pos + self.k_neg != self.k:
            raise ValueError(f"k_pos + k_neg must equal k ({self.k_pos} + {self.k_neg} != {self.k})")
        if self.k > 0 and not self.overlap_field:
            raise ValueError("The label-overlap scheme needs an overlap_field")
        return self


@dataclass(frozen=True)
class BucketIndex:
    """Instances grouped by masked bucket key; keys kept in lexicographic order."""

    buckets: dict[str, tuple[int, ...]]
    codes: tuple[HashCode, ...]

    def bucket_of(self, i: int) -> tuple[int, ...]:
        return self.buckets[self.codes[i].bucket_key]


def bucket_index(codes: Sequence[HashCode]) -> BucketIndex:
    groups: dict[str, list[int]] = {}
    for i, code in enumerate(codes):
        groups.setdefault(code.bucket_key, []).append(i)
    return BucketIndex(
        buckets={key: tuple(groups[key]) for key in sorted(groups)},
        codes=tuple(codes),
    )


def masked_hamming(a: HashCode, b: HashCode) -> int:
    """Differing bits counted over the positions active in both codes."""
    return sum(
        1
        for bit_a, bit_b, mask_a, mask_b in zip(a.bits, b.bits, a.active_mask, b.active_mask)
        if mask_a and mask_b and bit_a != bit_b
    )


def sample_lsh_neighborhood(
        index: BucketIndex, focal: int, cfg: SamplerConfig, rng: np.random.Generator
) -> list[int]:
    """
    Sample from the focal bucket, widening by Hamming radius only while the
    pool holds fewer than ``k`` candidates. A different bucket whose active bits
    agree with the focal code counts as distance 1.
    """
    code = index.codes[focal]
    own_key = code.bucket_key
    pool = [i for i in index.buckets[own_key] if i != focal]
    if len(pool) < cfg.k and cfg.max_hamming_radius > 0:
        # Activity follows the realized prefix, so codes in one bucket share their
        # active mask and members[0] stands for the bucket.
        distances = {
            key: max(1, masked_hamming(code, index.codes[members[0]]))
            for key, members in index.buckets.items()
            if key != own_key
        }
        for radius in range(1, cfg.max_hamming_radius + 1):
            if len(pool) >= cfg.k:
                break
            for key in sorted(k for k, d in distances.items() if d == radius):
                pool.extend(index.buckets[key])
    return sample_without_replacement(sorted(pool), cfg.k, rng)


def _overlap_sample(
        value_sets: Sequence[frozenset[str]], focal: int, k_pos: int, k: int, rng: np.random.Generator
) -> list[int]:
    focal_values = value_sets[focal]
    positives_pool = [
        j for j, values in enumerate(value_sets) if j != focal and values & focal_values
    ]
    positives = sample_without_replacement(positives_pool, k_pos, rng)
    chosen = set(positives)
    remaining = [j for j in range(len(value_sets)) if j != focal and j not in chosen]
    # A positive shortfall is filled with negatives.
    negatives = sample_without_replacement(remaining, k - len(positives), rng)
    return sorted(positives + negatives)


def overlap_value_sets(cohort: Cohort, field: str) -> list[frozenset[str]]:
    cohort.side_info_schema.side_of(field)
    return [split_multi_value(pair.side_info.value(field)) for pair in cohort.instances]


def sample_label_neighborhood(
        cohort: Cohort, focal: int, cfg: SamplerConfig, rng: np.random.Generator
) -> list[int]:
    """
    Positives share at least one value of the multi-valued ``overlap_field``
    with the focal instance; negatives are uniform over the other instances.
    :raises UnknownField: if ``overlap_field`` is not in the schema.
    """
    value_sets = overlap_value_sets(cohort, cfg.overlap_field)
    return _overlap_sample(value_sets, focal, cfg.k_pos, cfg.k, rng)


class Neighborhoods(ABC):
    """Neighbour source over one snapshot of the cohort."""

    @abstractmethod
    def sample(self, focal: int, rng: np.random.Generator) -> list[int]:
        pass


class NeighborhoodBuilder(ABC):
    """Builds a fresh neighbour source from the current cohort of each round."""

    @abstractmethod
    def build(self, cohort: Cohort, round: int = 0) -> Neighborhoods:
        pass


class _EmptyNeighborhoods(Neighborhoods):
    def sample(self, focal: int, rng: np.random.Generator) -> list[int]:
        return []


class IsolatedNeighborhoodBuilder(NeighborhoodBuilder):
    def build(self, cohort: Cohort, round: int = 0) -> Neighborhoods:
        return _EmptyNeighborhoods()


class _OverlapNeighborhoods(Neighborhoods):
    def __init__(self, value_sets: list[frozenset[str]], k_pos: int, k: int):
        self.value_sets = value_sets
        self.k_pos = k_pos
        self.k = k

    def sample(self, focal: int, rng: np.random.Generator) -> list[int]:
        return _overlap_sample(self.value_sets, focal, self.k_pos, self.k, rng)


class LabelOverlapNeighborhoodBuilder(NeighborhoodBuilder):
    def __init__(self, cfg: SamplerConfig):
        self.cfg = cfg

    def build(self, cohort: Cohort, round: int = 0) -> Neighborhoods:
        return _OverlapNeighborhoods(
            overlap_value_sets(cohort, self.cfg.overlap_field), self.cfg.k_pos, self.cfg.k
        )


class _GraphNeighborhoods(Neighborhoods):
    def __init__(self, graph: KnowledgeGraph, k: int):
        self.graph = graph
        self.k = k

    def sample(self, focal: int, rng: np.random.Generator) -> list[int]:
        return sample_neighbors(self.graph, focal, self.k, rng)


class GraphNeighborhoodBuilder(NeighborhoodBuilder):
    """Rebuilds the knowledge graph from the current cohort every round."""

    def __init__(self, relations: Sequence[RelationSpec], prune: PruneConfig, k: int):
        self.relations = list(relations)
        self.prune = prune
        self.k = k

    def build(self, cohort: Cohort, round: int = 0) -> Neighborhoods:
        return _GraphNeighborhoods(build_graph(cohort, self.relations, self.prune), self.k)


class _BucketNeighborhoods(Neighborhoods):
    def __init__(self, index: BucketIndex, cfg: SamplerConfig):
        self.index = index
        self.cfg = cfg

    def sample(self, focal: int, rng: np.random.Generator) -> list[int]:
        return sample_lsh_neighborhood(self.index, focal, self.cfg, rng)


class LshNeighborhoodBuilder(NeighborhoodBuilder):
    """
    Hash predicates stay fixed while codes are recomputed from the current
    cohort. With ``retrain_every = m`` the forest is regrown every m rounds.
    """

    def __init__(
            self,
            forest: HashForest,
            cfg: SamplerConfig,
            growth: GrowthConfig | None = None,
            label_field: str | None = None,
            retrain_every: int | None = None,
            seed: int = 0,
    ):
        self.forest = forest
        self.cfg = cfg
        self.growth = growth
        self.label_field = label_field
        self.retrain_every = retrain_every
        self.seed = seed

    def _due_for_regrowth(self, round: int) -> bool:
        return (
                self.retrain_every is not None
                and self.growth is not None
                and self.label_field is not None
                and round > 0
                and round % self.retrain_every == 0
        )

    def build(self, cohort: Cohort, round: int = 0) -> Neighborhoods:
        features = cohort_features(cohort)
        if self._due_for_regrowth(round):
            labels = [pair.side_info.value(self.label_field) for pair in cohort.instances]
            self.forest = grow_forest(
                features,
                labels,
                self.growth,
                derive_rng(self.seed, "forest", "regrow", round),
                schema=cohort.side_info_schema,
                label_field=self.label_field,
            )
            logger.info(f"Regrew forest at round {round} with {len(self.forest)} predicates")
        index = bucket_index(assign_codes(self.forest, features))
        logger.debug(f"Round {round}: {len(index.buckets)} buckets over {cohort.n} instances")
        return _BucketNeighborhoods(index, self.cfg)


def create_neighborhood_builder(
        cfg: SamplerConfig,
        *,
        forest: HashForest | None = None,
        relations: Sequence[RelationSpec] | None = None,
        prune: PruneConfig | None = None,
        growth: GrowthConfig | None = None,
        label_field: str | None = None,
        retrain_every: int | None = None,
        seed: int = 0,
) -> NeighborhoodBuilder:
    """
    Create the neighbour builder for a sampler configuration.
    :raises ConfigError: if the scheme's inputs are missing.
    """
    if cfg.k == 0:
        return IsolatedNeighborhoodBuilder()
    if cfg.scheme == "label-overlap":
        return LabelOverlapNeighborhoodBuilder(cfg)
    if cfg.scheme == "graph":
        if not relations or prune is None:
            raise ConfigError("The graph scheme needs relations and a prune configuration")
        return GraphNeighborhoodBuilder(relations, prune, cfg.k)
    if cfg.scheme == "lsh":
        if forest is None:
            raise ConfigError("The lsh scheme needs a trained forest")
        return LshNeighborhoodBuilder(
            forest, cfg, growth=growth, label_field=label_field, retrain_every=retrain_every, seed=seed
        )
    raise ConfigError(f"Unsupported sampler scheme: {cfg.scheme}")

import logging
from collections import defaultdict
from collections.abc import Sequence
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Annotated, Literal

import numpy as np
from judge_agent_forest.cohort import Cohort
from judge_agent_forest.common.jsonio import read_json, write_json
from judge_agent_forest.common.rng import sample_without_replacement
from judge_agent_forest.errors import ConfigError, SchemaError
from pydantic import BaseModel, Field, PositiveInt

logger = logging.getLogger(__name__)

Edge = tuple[int, int]


class SharedCategoricalRelation(BaseModel):
    """Connect instances that share a side-information value."""

    kind: Literal["shared-categorical"] = "shared-categorical"
    field: str
    priority: int = 0


class KnnEmbeddingRelation(BaseModel):
    """Connect every instance to its ``k`` most cosine-similar instances."""

    kind: Literal["knn-embedding"] = "knn-embedding"
    k: PositiveInt
    priority: int = 0


class MetadataEqualRelation(BaseModel):
    kind: Literal["metadata-equal"] = "metadata-equal"
    key: str
    priority: int = 0


RelationSpec = Annotated[
    SharedCategoricalRelation | KnnEmbeddingRelation | MetadataEqualRelation,
    Field(discriminator="kind"),
]


class PruneConfig(BaseModel):
    max_degree: PositiveInt
    partition_key: str | None = None


@dataclass(frozen=True)
class KnowledgeGraph:
    """
    Binary undirected adjacency over cohort indices. ``adjacency[i]`` is the
    sorted neighbour tuple N(i).
    """

    n: int
    adjacency: tuple[tuple[int, ...], ...]

    def neighbors(self, i: int) -> tuple[int, ...]:
        return self.adjacency[i]

    def edges(self) -> list[Edge]:
        return [(i, j) for i, row in enumerate(self.adjacency) for j in row if i < j]

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])


def _group_edges(groups: dict[str, list[int]]) -> set[Edge]:
    edges = set()
    for members in groups.values():
        edges.update(combinations(sorted(members), 2))
    return edges


def _shared_categorical_edges(cohort: Cohort, field: str) -> set[Edge]:
    try:
        cohort.side_info_schema.side_of(field)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    groups: dict[str, list[int]] = defaultdict(list)
    for i, pair in enumerate(cohort.instances):
        groups[pair.side_info.value(field)].append(i)
    return _group_edges(groups)


def _metadata_equal_edges(cohort: Cohort, key: str) -> set[Edge]:
    groups: dict[str, list[int]] = defaultdict(list)
    for i, pair in enumerate(cohort.instances):
        if key in pair.metadata:
            groups[pair.metadata[key]].append(i)
    return _group_edges(groups)


def _knn_edges(cohort: Cohort, k: int) -> set[Edge]:
    if cohort.instances[0].embedding is None:
        raise ConfigError("knn-embedding relation requires a cohort with embeddings")
    matrix = np.asarray([pair.embedding for pair in cohort.instances], dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=1)
    norms[norms == 0.0] = 1.0
    unit = matrix / norms[:, None]
    similarity = unit @ unit.T
    edges = set()
    for i in range(cohort.n):
        # Stable sort keeps the lower index first among equal similarities.
        order = np.argsort(-similarity[i], kind="stable")
        taken = 0
        for j in order:
            j = int(j)
            if j == i:
                continue
            edges.add((min(i, j), max(i, j)))
            taken += 1
            if taken == k:
                break
    return edges


def _relation_edges(cohort: Cohort, relation) -> set[Edge]:
    if isinstance(relation, SharedCategoricalRelation):
        return _shared_categorical_edges(cohort, relation.field)
    if isinstance(relation, KnnEmbeddingRelation):
        return _knn_edges(cohort, relation.k)
    if isinstance(relation, MetadataEqualRelation):
        return _metadata_equal_edges(cohort, relation.key)
    raise ConfigError(f"Unsupported relation kind: {relation!r}")


def build_graph(
        cohort: Cohort,
        relations: Sequence[SharedCategoricalRelation | KnnEmbeddingRelation | MetadataEqualRelation],
        prune: PruneConfig,
) -> KnowledgeGraph:
    """
    Build the cohort knowledge graph: union of candidate edges from all relations,
    minus edges crossing the partition key, then symmetric degree capping.

    Capping repeatedly removes, among edges touching an over-cap node, the edge
    with the largest priority number; ties remove the larger index pair first.
    :raises ConfigError: if a relation cannot be evaluated on this cohort.
    """
    priorities: dict[Edge, int] = {}
    for relation in relations:
        for edge in _relation_edges(cohort, relation):
            current = priorities.get(edge)
            if current is None or relation.priority < current:
                priorities[edge] = relation.priority

    if prune.partition_key is not None:
        key = prune.partition_key
        kept = {}
        for (i, j), priority in priorities.items():
            if cohort.instances[i].metadata.get(key) == cohort.instances[j].metadata.get(key):
                kept[(i, j)] = priority
        logger.debug(f"Partition on {key!r} dropped {len(priorities) - len(kept)} edges")
        priorities = kept

    degree = [0] * cohort.n
    for i, j in priorities:
        degree[i] += 1
        degree[j] += 1

    # Degrees only decrease, so one pass in removal order reproduces the iterative rule.
    removal_order = sorted(priorities, key=lambda e: (priorities[e], e), reverse=True)
    removed = set()
    for i, j in removal_order:
        if degree[i] > prune.max_degree or degree[j] > prune.max_degree:
            removed.add((i, j))
            degree[i] -= 1
            degree[j] -= 1

    adjacency: list[list[int]] = [[] for _ in range(cohort.n)]
    for i, j in priorities:
        if (i, j) in removed:
            continue
        adjacency[i].append(j)
        adjacency[j].append(i)

    graph = KnowledgeGraph(
        n=cohort.n, adjacency=tuple(tuple(sorted(row)) for row in adjacency)
    )
    logger.info(
        f"Built knowledge graph over {cohort.n} instances with {len(graph.edges())} edges "
        f"({len(removed)} removed by degree cap {prune.max_degree})"
    )
    return graph


def sample_neighbors(graph: KnowledgeGraph, i: int, k: int, rng: np.random.Generator) -> list[int]:
    """
    Uniformly sample up to ``k`` neighbours of ``i`` without replacement.
    An isolated node yields an empty list.
    """
    if not 0 <= i < graph.n:
        raise IndexError(f"Node {i} outside graph of size {graph.n}")
    return sample_without_replacement(list(graph.neighbors(i)), k, rng)


def graph_to_dict(graph: KnowledgeGraph) -> dict:
    return {"n": graph.n, "edges": [list(edge) for edge in graph.edges()]}


def graph_from_dict(data: dict) -> KnowledgeGraph:
    try:
        n = int(data["n"])
        edges = [(int(i), int(j)) for i, j in data["edges"]]
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"Invalid graph document: {e}") from e
    adjacency: list[set[int]] = [set() for _ in range(n)]
    for i, j in edges:
        if i == j or not (0 <= i < n and 0 <= j < n):
            raise SchemaError(f"Invalid edge ({i}, {j}) for graph of size {n}")
        adjacency[i].add(j)
        adjacency[j].add(i)
    return KnowledgeGraph(n=n, adjacency=tuple(tuple(sorted(row)) for row in adjacency))


def save_graph(graph: KnowledgeGraph, path: str | Path):
    write_json(path, graph_to_dict(graph))


def load_graph(path: str | Path) -> KnowledgeGraph:
    return graph_from_dict(read_json(path))

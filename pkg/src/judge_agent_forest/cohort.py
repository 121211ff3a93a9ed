import logging
import math
import re
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Literal

import numpy as np
from judge_agent_forest.common.jsonio import read_json, write_json
from judge_agent_forest.errors import ParseError, SchemaError, UnknownField
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PositiveInt,
    ValidationError,
    field_validator,
    model_validator,
)

logger = logging.getLogger(__name__)

UNKNOWN = "unknown"
MULTI_VALUE_SEPARATOR = ","


class CohortSchema(BaseModel):
    """
    Names of the categorical side-information fields every instance defines.
    """

    model_config = ConfigDict(frozen=True)

    query_side: tuple[str, ...] = ()
    response_side: tuple[str, ...] = ()

    @model_validator(mode="after")
    def check_unique_names(self) -> "CohortSchema":
        names = self.query_side + self.response_side
        if len(set(names)) != len(names):
            raise ValueError(f"Side-info field names must be unique across sides: {names}")
        return self

    def fields(self) -> tuple[str, ...]:
        return self.query_side + self.response_side

    def side_of(self, field: str) -> Literal["query_side", "response_side"]:
        if field in self.query_side:
            return "query_side"
        if field in self.response_side:
            return "response_side"
        raise UnknownField(f"Field {field!r} is not part of the cohort schema")


class SideInfo(BaseModel):
    model_config = ConfigDict(frozen=True)

    query_side: dict[str, str] = Field(default_factory=dict)
    response_side: dict[str, str] = Field(default_factory=dict)

    def value(self, field: str) -> str:
        if field in self.query_side:
            return self.query_side[field]
        if field in self.response_side:
            return self.response_side[field]
        raise UnknownField(f"Field {field!r} is not defined in this side info")


class QueryResponsePair(BaseModel):
    """
    A single instance of the cohort: the query, the primary agent's response and
    everything derived from them.
    """

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    id: str
    query_text: str = Field(alias="query")
    response_text: str = Field(alias="response")
    side_info: SideInfo = Field(default_factory=SideInfo)
    embedding: tuple[float, ...] | None = None
    metadata: dict[str, str] = Field(default_factory=dict)

    @field_validator("embedding")
    @classmethod
    def check_finite(cls, value: tuple[float, ...] | None) -> tuple[float, ...] | None:
        if value is not None and not all(math.isfinite(v) for v in value):
            raise ValueError("Embedding values must be finite")
        return value


class Cohort(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    cohort_id: str
    embedding_dim: PositiveInt | None = None
    side_info_schema: CohortSchema = Field(alias="schema", default_factory=CohortSchema)
    instances: tuple[QueryResponsePair, ...]

    @model_validator(mode="after")
    def check_invariants(self) -> "Cohort":
        if not self.instances:
            raise ValueError("A cohort must contain at least one instance")

        seen: set[str] = set()
        for pair in self.instances:
            if pair.id in seen:
                raise ValueError(f"Duplicate instance id {pair.id!r}")
            seen.add(pair.id)

        dims = {len(p.embedding) for p in self.instances if p.embedding is not None}
        with_embedding = sum(1 for p in self.instances if p.embedding is not None)
        if with_embedding not in (0, len(self.instances)):
            raise ValueError("Either every instance carries an embedding or none does")
        if len(dims) > 1:
            raise ValueError(f"Inconsistent embedding dimensions: {sorted(dims)}")
        if dims and self.embedding_dim is not None and dims != {self.embedding_dim}:
            raise ValueError(
                f"Embeddings have dimension {dims.pop()}, cohort declares {self.embedding_dim}"
            )
        if not dims and self.embedding_dim is not None:
            raise ValueError(f"Cohort declares embedding_dim={self.embedding_dim} but has no embeddings")

        for pair in self.instances:
            for side in ("query_side", "response_side"):
                declared = set(getattr(self.side_info_schema, side))
                present = set(getattr(pair.side_info, side))
                missing = declared - present
                if missing:
                    raise ValueError(f"Instance {pair.id!r} is missing {side} fields {sorted(missing)}")
                extra = present - declared
                if extra:
                    raise ValueError(f"Instance {pair.id!r} defines undeclared {side} fields {sorted(extra)}")
        return self

    @property
    def n(self) -> int:
        return len(self.instances)

    def ids(self) -> list[str]:
        return [pair.id for pair in self.instances]

    def index_of(self, instance_id: str) -> int:
        for i, pair in enumerate(self.instances):
            if pair.id == instance_id:
                return i
        raise KeyError(instance_id)

    def responses(self) -> list[str]:
        return [pair.response_text for pair in self.instances]


@dataclass(frozen=True)
class FeatureVector:
    """
    Numeric part (the ingested embedding, possibly empty) plus the schema-ordered
    categorical side information of one instance.
    """

    numeric: tuple[float, ...]
    categorical: tuple[tuple[str, str], ...]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.numeric, dtype=np.float64)


class MetadataRule(BaseModel):
    kind: Literal["metadata"] = "metadata"
    key: str


class RegexRule(BaseModel):
    kind: Literal["regex"] = "regex"
    pattern: str
    source: Literal["response", "query"] = "response"
    group: int = 1

    @field_validator("pattern")
    @classmethod
    def check_pattern(cls, value: str) -> str:
        try:
            re.compile(value)
        except re.error as e:
            raise ValueError(f"Invalid regular expression {value!r}: {e}") from e
        return value


class ConstantRule(BaseModel):
    kind: Literal["constant"] = "constant"
    value: str


ExtractionRule = Annotated[
    MetadataRule | RegexRule | ConstantRule, Field(discriminator="kind")
]


class SideInfoExtractor(BaseModel):
    """
    The deterministic featurization map from a pair to its side information, one
    rule per schema field.
    """

    query_side: dict[str, ExtractionRule] = Field(default_factory=dict)
    response_side: dict[str, ExtractionRule] = Field(default_factory=dict)

    def to_schema(self) -> CohortSchema:
        return CohortSchema(
            query_side=tuple(self.query_side), response_side=tuple(self.response_side)
        )


def _apply_rule(pair: QueryResponsePair, rule: MetadataRule | RegexRule | ConstantRule) -> str:
    if isinstance(rule, ConstantRule):
        return rule.value
    if isinstance(rule, MetadataRule):
        return pair.metadata.get(rule.key, UNKNOWN) or UNKNOWN
    text = pair.response_text if rule.source == "response" else pair.query_text
    match = re.search(rule.pattern, text)
    if match is None:
        return UNKNOWN
    try:
        captured = match.group(rule.group)
    except IndexError:
        return UNKNOWN
    captured = (captured or "").strip()
    return captured or UNKNOWN


def extract_side_info(pair: QueryResponsePair, extractor: SideInfoExtractor) -> SideInfo:
    """
    Apply the extraction rules to a pair. Fields that cannot be extracted get the
    sentinel value "unknown".
    """
    return SideInfo(
        query_side={name: _apply_rule(pair, rule) for name, rule in extractor.query_side.items()},
        response_side={name: _apply_rule(pair, rule) for name, rule in extractor.response_side.items()},
    )


def refresh_side_info(cohort: Cohort, extractor: SideInfoExtractor) -> Cohort:
    """
    Re-run extraction on every instance; fields without a rule keep their value.
    """
    instances = []
    for pair in cohort.instances:
        extracted = extract_side_info(pair, extractor)
        side_info = SideInfo(
            query_side={**pair.side_info.query_side, **extracted.query_side},
            response_side={**pair.side_info.response_side, **extracted.response_side},
        )
        instances.append(pair.model_copy(update={"side_info": side_info}))
    return cohort.model_copy(update={"instances": tuple(instances)})


def with_responses(cohort: Cohort, responses: Sequence[str]) -> Cohort:
    if len(responses) != cohort.n:
        raise ValueError(f"Expected {cohort.n} responses, got {len(responses)}")
    instances = tuple(
        pair if pair.response_text == response else pair.model_copy(update={"response_text": response})
        for pair, response in zip(cohort.instances, responses)
    )
    return cohort.model_copy(update={"instances": instances})


def split_multi_value(value: str) -> frozenset[str]:
    """Values of a multi-valued field, stored as a comma-separated string."""
    parts = (part.strip() for part in value.split(MULTI_VALUE_SEPARATOR))
    return frozenset(part for part in parts if part and part != UNKNOWN)


def build_feature_vector(pair: QueryResponsePair, schema: CohortSchema) -> FeatureVector:
    categorical = []
    for side in ("query_side", "response_side"):
        values = getattr(pair.side_info, side)
        for field in getattr(schema, side):
            if field not in values:
                raise SchemaError(f"Instance {pair.id!r} does not define {side} field {field!r}")
            categorical.append((field, values[field]))
    numeric = pair.embedding if pair.embedding is not None else ()
    return FeatureVector(numeric=tuple(numeric), categorical=tuple(categorical))


def cohort_features(cohort: Cohort) -> list[FeatureVector]:
    return [build_feature_vector(pair, cohort.side_info_schema) for pair in cohort.instances]


def feature_matrix(features: Sequence[FeatureVector]) -> np.ndarray:
    if not features:
        return np.zeros((0, 0), dtype=np.float64)
    dim = len(features[0].numeric)
    matrix = np.zeros((len(features), dim), dtype=np.float64)
    for i, vector in enumerate(features):
        if len(vector.numeric) != dim:
            raise SchemaError("Feature vectors of one cohort must have identical numeric length")
        matrix[i] = vector.numeric
    return matrix


def validate_cohort(data: object) -> Cohort:
    try:
        return Cohort.model_validate(data)
    except ValidationError as e:
        raise SchemaError(f"Invalid cohort: {e}") from e


def load_cohort(path: str | Path) -> Cohort:
    """
    Load a cohort JSON file and validate all invariants.
    :param path: The file to read.
    :return: The cohort, instance order preserved.
    :raises ParseError: if the file is not valid JSON.
    :raises SchemaError: if the document violates the cohort schema.
    """
    data = read_json(path)
    if not isinstance(data, dict):
        raise ParseError(f"{path}: expected a JSON object at top level")
    cohort = validate_cohort(data)
    logger.info(f"Loaded cohort {cohort.cohort_id} with {cohort.n} instances from {path}")
    return cohort


def cohort_to_dict(cohort: Cohort) -> dict:
    return cohort.model_dump(mode="json", by_alias=True)


def save_cohort(cohort: Cohort, path: str | Path):
    write_json(path, cohort_to_dict(cohort))

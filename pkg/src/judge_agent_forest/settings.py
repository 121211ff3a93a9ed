import logging
import os
from pathlib import Path
from typing import Annotated, Any, Literal

from judge_agent_forest.agents.prompts import PromptConfig
from judge_agent_forest.agents.types import AgentType
from judge_agent_forest.cohort import SideInfoExtractor
from judge_agent_forest.common.jsonio import read_json
from judge_agent_forest.engine import RefinementConfig
from judge_agent_forest.errors import ConfigError
from judge_agent_forest.graph import PruneConfig, RelationSpec
from judge_agent_forest.hashing.forest import GrowthConfig
from judge_agent_forest.sampler import SamplerConfig
from pydantic import (
    BaseModel,
    Field,
    NonNegativeInt,
    PositiveFloat,
    PositiveInt,
    ValidationError,
    ValidationInfo,
    model_validator,
)
from pydantic_settings import BaseSettings

logger = logging.getLogger(__name__)


class LlmSettings(BaseSettings):
    """
    Configuration for the HTTP chat-completion agents.
    """

    endpoint: str | None = Field(default=None, validation_alias="JAF_LLM_ENDPOINT")
    api_key: str | None = Field(default=None, validation_alias="JAF_LLM_API_KEY")
    model: str = Field(default="default", validation_alias="JAF_LLM_MODEL")
    temperature: float = Field(default=0.7, validation_alias="JAF_LLM_TEMPERATURE")
    max_retries: NonNegativeInt = Field(default=2, validation_alias="JAF_LLM_MAX_RETRIES")
    backoff_seconds: float = Field(default=1.0, validation_alias="JAF_LLM_BACKOFF_SECONDS")
    timeout_seconds: PositiveFloat = Field(default=60.0, validation_alias="JAF_LLM_TIMEOUT_SECONDS")
    max_concurrency: PositiveInt = Field(default=8, validation_alias="JAF_MAX_CONCURRENCY")


class SimAgentConfig(BaseModel):
    type: Literal["sim"] = "sim"
    world: Path


class HttpAgentConfig(BaseModel):
    type: Literal["http"] = "http"
    endpoint: str | None = None
    model: str | None = None
    temperature: float | None = None

    def apply(self, settings: LlmSettings) -> LlmSettings:
        """Config values override the environment."""
        update = {
            name: value
            for name, value in (
                ("endpoint", self.endpoint),
                ("model", self.model),
                ("temperature", self.temperature),
            )
            if value is not None
        }
        return settings.model_copy(update=update)


AgentConfig = Annotated[SimAgentConfig | HttpAgentConfig, Field(discriminator="type")]


class ForestConfig(BaseModel):
    label_field: str
    growth: GrowthConfig = Field(default_factory=GrowthConfig)
    path: Path | None = None


class GraphConfig(BaseModel):
    relations: list[RelationSpec]
    prune: PruneConfig


class EvaluationConfig(BaseModel):
    runs: PositiveInt = 10
    bins: PositiveInt = 10
    # Sampler for the evaluation runs; None reuses the refinement sampler.
    sampler: SamplerConfig | None = None


class RunConfig(BaseModel):
    """
    One run document. Relative paths resolve against the directory of the
    config file; the cohort and the simulated world must exist.
    """

    cohort: Path
    seed: NonNegativeInt
    output_dir: Path = Path("out")
    sampler: SamplerConfig
    refinement: RefinementConfig = Field(default_factory=RefinementConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    agent: AgentConfig
    extractor: SideInfoExtractor | None = None
    forest: ForestConfig | None = None
    graph: GraphConfig | None = None
    prompts: PromptConfig = Field(default_factory=PromptConfig)
    max_concurrency: PositiveInt | None = None

    @model_validator(mode="after")
    def resolve_and_check(self, info: ValidationInfo) -> "RunConfig":
        base_dir = (info.context or {}).get("base_dir")

        def resolve(path: Path | None) -> Path | None:
            if path is None or path.is_absolute() or base_dir is None:
                return path
            return Path(base_dir) / path

        self.cohort = resolve(self.cohort)
        self.output_dir = resolve(self.output_dir)
        if not self.cohort.is_file():
            raise ValueError(f"Cohort file {self.cohort} does not exist")
        if isinstance(self.agent, SimAgentConfig):
            self.agent.world = resolve(self.agent.world)
            if not self.agent.world.is_file():
                raise ValueError(f"Simulated world file {self.agent.world} does not exist")
        if self.forest is not None:
            self.forest.path = resolve(self.forest.path)
        self.prompts.template_dir = resolve(self.prompts.template_dir)

        for sampler in (self.sampler, self.evaluation.sampler):
            if sampler is None or sampler.k == 0:
                continue
            if sampler.scheme == "graph" and self.graph is None:
                raise ValueError("The graph scheme needs a 'graph' section")
            if sampler.scheme == "lsh" and self.forest is None:
                raise ValueError("The lsh scheme needs a 'forest' section")
        if self.prompts.overlap_field is None and self.sampler.overlap_field is not None:
            self.prompts.overlap_field = self.sampler.overlap_field

        # The run seed drives every random stream.
        self.refinement = self.refinement.model_copy(update={"seed": self.seed})
        return self

    @property
    def evaluation_sampler(self) -> SamplerConfig:
        return self.evaluation.sampler or self.sampler

    @property
    def agent_type(self) -> AgentType:
        return AgentType(self.agent.type)

    def forest_path(self) -> Path:
        if self.forest is not None and self.forest.path is not None:
            return self.forest.path
        return self.output_dir / "forest.json"

    def to_effective_dict(self) -> dict[str, Any]:
        """
        The validated document with paths written relative to the output
        directory, so the echo does not depend on where the run happens.
        """
        data = self.model_dump(mode="json")

        def relative(path: Path | None) -> str | None:
            return None if path is None else os.path.relpath(path, self.output_dir)

        data["cohort"] = relative(self.cohort)
        data["output_dir"] = "."
        if isinstance(self.agent, SimAgentConfig):
            data["agent"]["world"] = relative(self.agent.world)
        if self.forest is not None:
            data["forest"]["path"] = relative(self.forest.path)
        data["prompts"]["template_dir"] = relative(self.prompts.template_dir)
        return data


def _merge(base: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_run_config(path: str | Path, overrides: dict[str, Any] | None = None) -> RunConfig:
    """
    Read a run document, merge flag overrides into it and validate.
    :param path: The JSON config file.
    :param overrides: Nested values that replace those of the document.
    :raises ConfigError: if the document is invalid or references missing files.
    """
    path = Path(path)
    try:
        raw = read_json(path)
    except FileNotFoundError as e:
        raise ConfigError(f"Config file {path} does not exist") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a JSON object at top level")
    raw = _merge(raw, overrides or {})
    try:
        config = RunConfig.model_validate(raw, context={"base_dir": path.resolve().parent})
    except ValidationError as e:
        raise ConfigError(f"Invalid run config {path}: {e}") from e
    logger.info(f"Loaded run config {path} (seed {config.seed})")
    return config

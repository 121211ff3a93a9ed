from enum import Enum
from typing import Literal

from judge_agent_forest.cohort import QueryResponsePair
from pydantic import BaseModel, ConfigDict, Field, model_validator

Phase = Literal["single", "refine", "eval"]


class AgentType(Enum):
    SIM = "sim"
    HTTP = "http"


class JudgeVerdict(BaseModel):
    model_config = ConfigDict(frozen=True)

    label: Literal["accept", "refine"]
    critique: str = ""
    raw: str | None = None

    @model_validator(mode="after")
    def check_critique(self) -> "JudgeVerdict":
        if self.label == "refine" and not self.critique.strip():
            raise ValueError("A refine verdict needs a non-empty critique")
        return self

    @property
    def accepted(self) -> bool:
        return self.label == "accept"


class NeighborContext(BaseModel):
    """A neighbour shown to the judge, with its prompt summary."""

    model_config = ConfigDict(frozen=True)

    pair: QueryResponsePair
    summary: str


class JudgeRequest(BaseModel):
    model_config = ConfigDict(frozen=True)

    focal: QueryResponsePair
    neighbors: tuple[NeighborContext, ...] = ()
    round: int = 0
    phase: Phase = "single"

    @model_validator(mode="after")
    def check_focal_not_neighbor(self) -> "JudgeRequest":
        if any(n.pair.id == self.focal.id for n in self.neighbors):
            raise ValueError(f"Focal instance {self.focal.id!r} is among its own neighbours")
        return self


class RefineRequest(BaseModel):
    model_config = ConfigDict(frozen=True)

    instance_id: str
    round: int
    query: str
    prior_response: str
    critique: str
    # (response, critique) of earlier rounds, oldest first.
    history: tuple[tuple[str, str], ...] = Field(default_factory=tuple)

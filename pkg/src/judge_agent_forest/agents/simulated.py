"""
Deterministic stand-ins for the primary agent and the judge.

The world hides one correct answer per instance. Responses have the form
``REQUIRES: <answer>``. The simulated judge knows the truth but errs with a
probability that shrinks as more of its neighbours are correct, so peer
context helps the judge. Critiques carry the corrected answer in a
``CORRECTION: <answer>`` line that the simulated primary adopts with a fixed
probability.
"""

import logging
import re
from pathlib import Path
from typing import Annotated

import numpy as np
from judge_agent_forest.agents.base import Judge, PrimaryAgent
from judge_agent_forest.agents.types import JudgeRequest, JudgeVerdict, RefineRequest
from judge_agent_forest.cohort import (
    Cohort,
    MetadataRule,
    QueryResponsePair,
    RegexRule,
    SideInfoExtractor,
    extract_side_info,
)
from judge_agent_forest.common.jsonio import read_json, write_json
from judge_agent_forest.common.rng import derive_rng
from judge_agent_forest.errors import ConfigError
from pydantic import BaseModel, Field, PositiveInt, ValidationError

logger = logging.getLogger(__name__)

RESPONSE_PREFIX = "REQUIRES: "
CORRECTION_PATTERN = re.compile(r"^CORRECTION:\s*(\S+)\s*$", re.MULTILINE)

COMPONENTS = (
    "openssl",
    "nginx",
    "postgres",
    "redis",
    "kafka",
    "tomcat",
    "log4j",
    "openssh",
    "bind9",
    "samba",
    "docker",
    "kubelet",
)
ASSET_TYPES = ("vm", "container", "database", "appliance")

Rate = Annotated[float, Field(ge=0.0, le=1.0)]


class SimWorld(BaseModel):
    truth: dict[str, str]
    primary_error_rate: Rate
    judge_error_rate: Rate
    context_benefit: Rate
    refine_adoption: Rate

    def answer_of(self, response: str) -> str | None:
        response = response.strip()
        if not response.startswith(RESPONSE_PREFIX):
            return None
        return response[len(RESPONSE_PREFIX):].strip() or None

    def is_correct(self, pair: QueryResponsePair) -> bool:
        return self.answer_of(pair.response_text) == self.truth.get(pair.id)


def format_answer(answer: str) -> str:
    return f"{RESPONSE_PREFIX}{answer}"


def effective_judge_error(world: SimWorld, neighbor_correct_fraction: float) -> float:
    return world.judge_error_rate * (1.0 - world.context_benefit * neighbor_correct_fraction)


def simulated_judge_decision(
        world: SimWorld,
        focal_correct: bool,
        neighbor_correct_fraction: float,
        rng: np.random.Generator,
        truth: str = "",
) -> JudgeVerdict:
    """
    Flip the oracle decision (accept iff correct) with probability
    eps_J * (1 - beta * fraction).
    """
    if not 0.0 <= neighbor_correct_fraction <= 1.0:
        raise ValueError(f"Neighbour fraction must lie in [0, 1], got {neighbor_correct_fraction}")
    flipped = rng.random() < effective_judge_error(world, neighbor_correct_fraction)
    if focal_correct != flipped:
        return JudgeVerdict(label="accept")
    critique = f"The claimed component does not match the findings.\nCORRECTION: {truth or 'unknown'}"
    return JudgeVerdict(label="refine", critique=critique)


class SimulatedJudge(Judge):
    """
    Draws from the stream ("judge", phase, focal id, round) of the run seed, so
    verdicts do not depend on call order.
    """

    def __init__(self, world: SimWorld, seed: int):
        self.world = world
        self.seed = seed

    async def judge(self, request: JudgeRequest) -> JudgeVerdict:
        focal = request.focal
        if request.neighbors:
            fraction = sum(self.world.is_correct(n.pair) for n in request.neighbors) / len(request.neighbors)
        else:
            fraction = 0.0
        rng = derive_rng(self.seed, "judge", request.phase, focal.id, request.round)
        return simulated_judge_decision(
            self.world,
            self.world.is_correct(focal),
            fraction,
            rng,
            truth=self.world.truth.get(focal.id, ""),
        )


class SimulatedPrimary(PrimaryAgent):
    def __init__(self, world: SimWorld, seed: int):
        self.world = world
        self.seed = seed

    async def refine(self, request: RefineRequest) -> str:
        match = CORRECTION_PATTERN.search(request.critique or "")
        if match is None:
            return request.prior_response
        rng = derive_rng(self.seed, "primary", request.instance_id, request.round)
        if rng.random() < self.world.refine_adoption:
            return format_answer(match.group(1))
        return request.prior_response


def synthetic_extractor() -> SideInfoExtractor:
    return SideInfoExtractor(
        query_side={
            "tenant": MetadataRule(key="tenant"),
            "asset_type": MetadataRule(key="asset_type"),
        },
        response_side={
            "software": RegexRule(pattern=r"REQUIRES:\s*([\w,.-]+)", source="response"),
        },
    )


def generate_synthetic_world(
        n: PositiveInt,
        primary_error_rate: float,
        judge_error_rate: float,
        context_benefit: float,
        refine_adoption: float,
        seed: int,
        n_components: int = 8,
        n_tenants: int = 3,
        embedding_dim: int = 8,
) -> tuple[Cohort, SimWorld, SideInfoExtractor]:
    """
    Generate a cohort of asset findings with hidden component answers.

    Query embeddings cluster by true component. Each initial response names the
    true component, or with probability ``primary_error_rate`` a different one.
    """
    if not 2 <= n_components <= len(COMPONENTS):
        raise ConfigError(f"n_components must lie in [2, {len(COMPONENTS)}]")
    rng = derive_rng(seed, "world")
    components = COMPONENTS[:n_components]
    centers = rng.normal(0.0, 3.0, size=(n_components, embedding_dim))
    extractor = synthetic_extractor()

    instances = []
    truth = {}
    for i in range(n):
        instance_id = f"asset-{i:04d}"
        true_index = int(rng.integers(n_components))
        answer = components[true_index]
        if rng.random() < primary_error_rate:
            others = [c for c in components if c != answer]
            claimed = others[int(rng.integers(len(others)))]
        else:
            claimed = answer
        tenant = f"tenant-{int(rng.integers(n_tenants))}"
        asset_type = ASSET_TYPES[int(rng.integers(len(ASSET_TYPES)))]
        embedding = centers[true_index] + rng.normal(0.0, 1.0, size=embedding_dim)
        pair = QueryResponsePair(
            id=instance_id,
            query_text=(
                f"Misconfiguration findings for {asset_type} {instance_id} of {tenant}. "
                f"Which software component requires remediation?"
            ),
            response_text=format_answer(claimed),
            embedding=tuple(float(v) for v in embedding),
            metadata={"tenant": tenant, "asset_type": asset_type},
        )
        instances.append(pair.model_copy(update={"side_info": extract_side_info(pair, extractor)}))
        truth[instance_id] = answer

    cohort = Cohort(
        cohort_id=f"synthetic-{seed}",
        embedding_dim=embedding_dim,
        side_info_schema=extractor.to_schema(),
        instances=tuple(instances),
    )
    world = SimWorld(
        truth=truth,
        primary_error_rate=primary_error_rate,
        judge_error_rate=judge_error_rate,
        context_benefit=context_benefit,
        refine_adoption=refine_adoption,
    )
    logger.info(f"Generated synthetic cohort of {n} instances over {n_components} components")
    return cohort, world, extractor


def save_world(world: SimWorld, path: str | Path):
    write_json(path, world.model_dump(mode="json"))


def load_world(path: str | Path) -> SimWorld:
    try:
        return SimWorld.model_validate(read_json(path))
    except ValidationError as e:
        raise ConfigError(f"Invalid simulated world {path}: {e}") from e

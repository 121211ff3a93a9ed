"""
The three judging procedures: one pass over a cohort, iterative
self-refinement with per-instance freezing, and probabilistic evaluation of
fixed final responses.

Every random draw comes from a stream keyed by (seed, purpose, phase,
instance id, round or run), so concurrent calls give the same results in any
order, and a longer run repeats the rounds of a shorter one exactly.
"""

import asyncio
import logging
from collections.abc import Awaitable, Sequence
from dataclasses import dataclass, field
from typing import TypeVar

from judge_agent_forest.agents.base import Judge, PrimaryAgent
from judge_agent_forest.agents.prompts import PromptConfig, neighbor_context
from judge_agent_forest.agents.types import JudgeRequest, JudgeVerdict, Phase, RefineRequest
from judge_agent_forest.cohort import (
    Cohort,
    SideInfoExtractor,
    refresh_side_info,
    with_responses,
)
from judge_agent_forest.common.rng import derive_rng
from judge_agent_forest.errors import AgentError
from judge_agent_forest.sampler import (
    IsolatedNeighborhoodBuilder,
    NeighborhoodBuilder,
    Neighborhoods,
)
from pydantic import BaseModel, NonNegativeInt, PositiveInt, model_validator

logger = logging.getLogger(__name__)

T = TypeVar("T")

DEFAULT_MAX_CONCURRENCY = 8


class RefinementConfig(BaseModel):
    t_min: PositiveInt = 2
    t_max: PositiveInt = 5
    seed: NonNegativeInt = 0
    retrain_every: PositiveInt | None = None

    @model_validator(mode="after")
    def check_rounds(self) -> "RefinementConfig":
        if self.t_min > self.t_max:
            raise ValueError(f"t_min ({self.t_min}) must not exceed t_max ({self.t_max})")
        return self


@dataclass
class InstanceState:
    current_response: str
    frozen: bool = False
    accept_count: int = 0
    # (response, critique) per judged round, oldest first.
    history: list[tuple[str, str]] = field(default_factory=list)


class VerdictRecord(BaseModel):
    phase: Phase
    round: int
    instance_id: str
    label: str
    critique: str
    neighbors: list[str]


class RoundRecord(BaseModel):
    round: int
    verdicts: list[VerdictRecord]
    responses: list[str]
    newly_frozen: list[str]


class RefinementTrace(BaseModel):
    cohort_id: str
    t_min: int
    t_max: int
    seed: int
    rounds: list[RoundRecord]
    t_star: int
    all_frozen: bool
    judge_calls: int
    frozen_round: dict[str, int | None]
    final_responses: dict[str, str]

    def verdict_log(self) -> list[VerdictRecord]:
        return [verdict for record in self.rounds for verdict in record.verdicts]


class AcceptanceProfile(BaseModel):
    cohort_id: str
    runs: PositiveInt
    instance_ids: list[str]
    accept_counts: list[NonNegativeInt]
    p_hat: list[float]

    @model_validator(mode="after")
    def check_counts(self) -> "AcceptanceProfile":
        if not len(self.instance_ids) == len(self.accept_counts) == len(self.p_hat):
            raise ValueError("Profile columns must have equal length")
        for count, p in zip(self.accept_counts, self.p_hat):
            if count > self.runs or p != count / self.runs:
                raise ValueError(f"p_hat {p} does not equal {count}/{self.runs}")
        return self

    @classmethod
    def from_counts(cls, cohort_id: str, runs: int, instance_ids: Sequence[str], counts: Sequence[int]):
        return cls(
            cohort_id=cohort_id,
            runs=runs,
            instance_ids=list(instance_ids),
            accept_counts=list(counts),
            p_hat=[count / runs for count in counts],
        )


async def _gather_in_cohort_order(
        calls: dict[int, Awaitable[T]],
        cohort: Cohort,
        semaphore: asyncio.Semaphore,
        *,
        round: int | None = None,
        run: int | None = None,
) -> dict[int, T]:
    """
    Await all calls under the semaphore. If any failed, raise the failure of
    the first instance in cohort order with its context attached.
    """

    async def guarded(call: Awaitable[T]) -> T:
        async with semaphore:
            return await call

    keys = sorted(calls)
    results = await asyncio.gather(*(guarded(calls[key]) for key in keys), return_exceptions=True)
    for key, result in zip(keys, results):
        if isinstance(result, AgentError):
            instance_id = cohort.instances[key].id
            logger.error(f"Agent call failed for {instance_id}: {result}")
            raise result.with_context(instance_id=instance_id, round=round, run=run) from result
        if isinstance(result, BaseException):
            raise result
    return dict(zip(keys, results))


def _judge_request(
        cohort: Cohort,
        focal: int,
        neighborhoods: Neighborhoods,
        seed: int,
        phase: Phase,
        index: int,
        prompts: PromptConfig,
) -> JudgeRequest:
    pair = cohort.instances[focal]
    rng = derive_rng(seed, "neighbors", phase, pair.id, index)
    neighbors = tuple(
        neighbor_context(cohort.instances[j], prompts)
        for j in neighborhoods.sample(focal, rng)
        if j != focal
    )
    return JudgeRequest(focal=pair, neighbors=neighbors, round=index, phase=phase)


def _record(request: JudgeRequest, verdict: JudgeVerdict) -> VerdictRecord:
    return VerdictRecord(
        phase=request.phase,
        round=request.round,
        instance_id=request.focal.id,
        label=verdict.label,
        critique=verdict.critique,
        neighbors=[n.pair.id for n in request.neighbors],
    )


def _warn_on_empty(requests: dict[int, JudgeRequest], builder: NeighborhoodBuilder, label: str):
    if isinstance(builder, IsolatedNeighborhoodBuilder):
        return
    empty = sum(1 for request in requests.values() if not request.neighbors)
    if empty:
        logger.warning(f"{label}: {empty} of {len(requests)} judge calls have an empty neighbourhood")


async def run_single_pass(
        cohort: Cohort,
        builder: NeighborhoodBuilder,
        judge: Judge,
        seed: int,
        prompts: PromptConfig | None = None,
        max_concurrency: int = DEFAULT_MAX_CONCURRENCY,
) -> list[JudgeVerdict]:
    """
    Judge every instance once with a sampled neighbourhood.
    :return: Verdicts in cohort order.
    :raises AgentError: with the failing instance id.
    """
    prompts = prompts or PromptConfig()
    neighborhoods = builder.build(cohort, 0)
    requests = {
        i: _judge_request(cohort, i, neighborhoods, seed, "single", 0, prompts)
        for i in range(cohort.n)
    }
    _warn_on_empty(requests, builder, "Single pass")
    verdicts = await _gather_in_cohort_order(
        {i: judge.judge(request) for i, request in requests.items()},
        cohort,
        asyncio.Semaphore(max_concurrency),
        round=0,
    )
    return [verdicts[i] for i in range(cohort.n)]


async def run_refinement(
        cohort: Cohort,
        primary: PrimaryAgent,
        judge: Judge,
        cfg: RefinementConfig,
        builder: NeighborhoodBuilder,
        extractor: SideInfoExtractor | None = None,
        prompts: PromptConfig | None = None,
        max_concurrency: int = DEFAULT_MAX_CONCURRENCY,
) -> RefinementTrace:
    """
    Iterative self-refinement with per-instance freezing.

    Each round rebuilds the neighbourhoods over the current cohort, judges the
    instances that are not frozen, refines those with a refine verdict
    (resetting their accept count) and carries accepted responses forward. An
    instance freezes once accepted ``t_min`` rounds in a row; frozen instances
    are still eligible as neighbours. The loop stops early once every instance
    is frozen, otherwise ``t_star`` is the last round.
    :raises AgentError: with round and instance context. The failing round
        leaves no partial updates.
    """
    prompts = prompts or PromptConfig()
    semaphore = asyncio.Semaphore(max_concurrency)
    states = [InstanceState(current_response=pair.response_text) for pair in cohort.instances]
    frozen_round: dict[str, int | None] = {pair.id: None for pair in cohort.instances}
    current = cohort
    rounds: list[RoundRecord] = []
    judge_calls = 0
    t_star = cfg.t_max - 1
    all_frozen = False

    for t in range(cfg.t_max):
        neighborhoods = builder.build(current, t)
        active = [i for i, state in enumerate(states) if not state.frozen]
        logger.info(f"Round {t}: judging {len(active)} of {cohort.n} instances")
        requests = {
            i: _judge_request(current, i, neighborhoods, cfg.seed, "refine", t, prompts)
            for i in active
        }
        _warn_on_empty(requests, builder, f"Round {t}")
        verdicts = await _gather_in_cohort_order(
            {i: judge.judge(request) for i, request in requests.items()},
            current,
            semaphore,
            round=t,
        )
        judge_calls += len(active)

        refine_requests = {
            i: RefineRequest(
                instance_id=current.instances[i].id,
                round=t,
                query=current.instances[i].query_text,
                prior_response=states[i].current_response,
                critique=verdicts[i].critique,
                history=tuple(states[i].history),
            )
            for i in active
            if not verdicts[i].accepted
        }
        revised = await _gather_in_cohort_order(
            {i: primary.refine(request) for i, request in refine_requests.items()},
            current,
            semaphore,
            round=t,
        )

        # Both loops succeeded; apply the round.
        newly_frozen = []
        for i in active:
            state = states[i]
            verdict = verdicts[i]
            state.history.append((state.current_response, verdict.critique))
            if verdict.accepted:
                state.accept_count += 1
                if state.accept_count >= cfg.t_min:
                    state.frozen = True
                    instance_id = current.instances[i].id
                    frozen_round[instance_id] = t
                    newly_frozen.append(instance_id)
            else:
                state.current_response = revised[i]
                state.accept_count = 0

        responses = [state.current_response for state in states]
        current = with_responses(current, responses)
        if extractor is not None:
            current = refresh_side_info(current, extractor)
        rounds.append(
            RoundRecord(
                round=t,
                verdicts=[_record(requests[i], verdicts[i]) for i in active],
                responses=responses,
                newly_frozen=newly_frozen,
            )
        )
        logger.info(
            f"Round {t}: {len(refine_requests)} refined, {len(newly_frozen)} newly frozen, "
            f"{sum(s.frozen for s in states)} frozen in total"
        )
        if all(state.frozen for state in states):
            t_star = t
            all_frozen = True
            break

    return RefinementTrace(
        cohort_id=cohort.cohort_id,
        t_min=cfg.t_min,
        t_max=cfg.t_max,
        seed=cfg.seed,
        rounds=rounds,
        t_star=t_star,
        all_frozen=all_frozen,
        judge_calls=judge_calls,
        frozen_round=frozen_round,
        final_responses={pair.id: state.current_response for pair, state in zip(cohort.instances, states)},
    )


def apply_trace(
        cohort: Cohort, trace: RefinementTrace, extractor: SideInfoExtractor | None = None
) -> Cohort:
    """The cohort with the trace's final responses (R_i^*)."""
    refined = with_responses(cohort, [trace.final_responses[pair.id] for pair in cohort.instances])
    return refresh_side_info(refined, extractor) if extractor is not None else refined


async def evaluate_probabilistic(
        final_cohort: Cohort,
        judge: Judge,
        builder: NeighborhoodBuilder,
        runs: int,
        seed: int,
        prompts: PromptConfig | None = None,
        max_concurrency: int = DEFAULT_MAX_CONCURRENCY,
        verdict_log: list[VerdictRecord] | None = None,
) -> AcceptanceProfile:
    """
    Judge each fixed final response ``runs`` times, each with a freshly sampled
    neighbourhood; p_hat_i is the fraction of accepts. The primary agent is
    never called and the cohort is not modified.
    :raises AgentError: with run and instance context.
    """
    if runs < 1:
        raise ValueError(f"runs must be at least 1, got {runs}")
    prompts = prompts or PromptConfig()
    semaphore = asyncio.Semaphore(max_concurrency)
    neighborhoods = builder.build(final_cohort, 0)
    counts = [0] * final_cohort.n

    for r in range(runs):
        requests = {
            i: _judge_request(final_cohort, i, neighborhoods, seed, "eval", r, prompts)
            for i in range(final_cohort.n)
        }
        if r == 0:
            _warn_on_empty(requests, builder, "Evaluation")
        verdicts = await _gather_in_cohort_order(
            {i: judge.judge(request) for i, request in requests.items()},
            final_cohort,
            semaphore,
            run=r,
        )
        for i in range(final_cohort.n):
            counts[i] += int(verdicts[i].accepted)
            if verdict_log is not None:
                verdict_log.append(_record(requests[i], verdicts[i]))

    profile = AcceptanceProfile.from_counts(final_cohort.cohort_id, runs, final_cohort.ids(), counts)
    logger.info(
        f"Evaluated {final_cohort.n} instances over {runs} runs: "
        f"mean acceptance {sum(profile.p_hat) / final_cohort.n:.4f}"
    )
    return profile

import pytest
from judge_agent_forest.agents.base import Judge, PrimaryAgent
from judge_agent_forest.agents.simulated import SimulatedJudge, SimulatedPrimary, generate_synthetic_world
from judge_agent_forest.agents.types import JudgeRequest, JudgeVerdict, RefineRequest
from judge_agent_forest.engine import (
    AcceptanceProfile,
    RefinementConfig,
    apply_trace,
    evaluate_probabilistic,
    run_refinement,
    run_single_pass,
)
from judge_agent_forest.errors import AgentError
from judge_agent_forest.sampler import (
    IsolatedNeighborhoodBuilder,
    LabelOverlapNeighborhoodBuilder,
    NeighborhoodBuilder,
    Neighborhoods,
    SamplerConfig,
)
from pydantic import ValidationError

from .conftest import make_cohort, make_pair


class ScriptedJudge(Judge):
    """Labels from ``script(instance_id, round)``; records every request."""

    def __init__(self, script):
        self.script = script
        self.requests: list[JudgeRequest] = []

    async def judge(self, request: JudgeRequest) -> JudgeVerdict:
        self.requests.append(request)
        label = self.script(request.focal.id, request.round)
        if label == "fail":
            raise AgentError("scripted failure")
        if label == "accept":
            return JudgeVerdict(label="accept")
        return JudgeVerdict(label="refine", critique=f"fix {request.focal.id} at {request.round}")


class AppendingPrimary(PrimaryAgent):
    def __init__(self):
        self.requests: list[RefineRequest] = []

    async def refine(self, request: RefineRequest) -> str:
        self.requests.append(request)
        return f"{request.prior_response}|{request.round}"


class ForbiddenPrimary(PrimaryAgent):
    async def refine(self, request: RefineRequest) -> str:
        raise AssertionError("the primary agent must not be called")


class _Everyone(Neighborhoods):
    def __init__(self, n):
        self.n = n

    def sample(self, focal, rng):
        return [j for j in range(self.n) if j != focal]


class EveryoneBuilder(NeighborhoodBuilder):
    def build(self, cohort, round=0):
        return _Everyone(cohort.n)


@pytest.fixture
def pair_cohort():
    return make_cohort([make_pair("x", response="orig-x"), make_pair("y", response="orig-y")])


class TestRefinement:
    async def test_always_accept_freezes_after_t_min(self, pair_cohort):
        judge = ScriptedJudge(lambda instance_id, t: "accept")
        trace = await run_refinement(
            pair_cohort, AppendingPrimary(), judge, RefinementConfig(t_min=2, t_max=5), IsolatedNeighborhoodBuilder()
        )
        assert trace.t_star == 1
        assert trace.all_frozen
        assert trace.judge_calls == 4
        assert trace.frozen_round == {"x": 1, "y": 1}
        assert trace.final_responses == {"x": "orig-x", "y": "orig-y"}
        assert [r.newly_frozen for r in trace.rounds] == [[], ["x", "y"]]

    async def test_always_refine_runs_to_t_max(self, pair_cohort):
        primary = AppendingPrimary()
        trace = await run_refinement(
            pair_cohort,
            primary,
            ScriptedJudge(lambda instance_id, t: "refine"),
            RefinementConfig(t_min=2, t_max=3),
            IsolatedNeighborhoodBuilder(),
        )
        assert trace.t_star == 2
        assert not trace.all_frozen
        assert trace.judge_calls == 6
        assert trace.frozen_round == {"x": None, "y": None}
        assert trace.final_responses["x"] == "orig-x|0|1|2"
        assert len(trace.rounds) == 3
        last = [r for r in primary.requests if r.instance_id == "x"][-1]
        assert last.history == (
            ("orig-x", "fix x at 0"),
            ("orig-x|0", "fix x at 1"),
        )

    async def test_refine_resets_accept_count(self, pair_cohort):
        script = {("x", 0): "accept", ("x", 1): "refine"}
        judge = ScriptedJudge(lambda instance_id, t: script.get((instance_id, t), "accept"))
        primary = AppendingPrimary()
        trace = await run_refinement(
            pair_cohort, primary, judge, RefinementConfig(t_min=2, t_max=5), EveryoneBuilder()
        )
        assert trace.frozen_round == {"x": 3, "y": 1}
        assert trace.t_star == 3
        assert trace.all_frozen
        assert trace.judge_calls == 6
        assert trace.final_responses == {"x": "orig-x|1", "y": "orig-y"}
        assert [r.round for r in primary.requests] == [1]

        # Frozen y stays a neighbour of x, and x is judged on its refined response.
        round_two = [r for r in judge.requests if r.round == 2]
        assert [r.focal.id for r in round_two] == ["x"]
        assert [n.pair.id for n in round_two[0].neighbors] == ["y"]
        assert round_two[0].focal.response_text == "orig-x|1"
        assert trace.rounds[1].responses == ["orig-x|1", "orig-y"]

    async def test_single_round(self, pair_cohort):
        trace = await run_refinement(
            pair_cohort,
            AppendingPrimary(),
            ScriptedJudge(lambda instance_id, t: "accept"),
            RefinementConfig(t_min=1, t_max=1),
            IsolatedNeighborhoodBuilder(),
        )
        assert trace.t_star == 0
        assert trace.all_frozen

    async def test_agent_failure_carries_context(self, pair_cohort):
        judge = ScriptedJudge(lambda instance_id, t: "fail" if t == 1 else "refine")
        with pytest.raises(AgentError) as info:
            await run_refinement(
                pair_cohort, AppendingPrimary(), judge, RefinementConfig(t_min=2, t_max=3), IsolatedNeighborhoodBuilder()
            )
        assert info.value.instance_id == "x"
        assert info.value.round == 1
        assert "instance=x" in str(info.value)

    def test_round_bounds(self):
        with pytest.raises(ValidationError):
            RefinementConfig(t_min=4, t_max=3)

    async def test_apply_trace(self, pair_cohort):
        trace = await run_refinement(
            pair_cohort,
            AppendingPrimary(),
            ScriptedJudge(lambda instance_id, t: "refine"),
            RefinementConfig(t_min=1, t_max=1),
            IsolatedNeighborhoodBuilder(),
        )
        refined = apply_trace(pair_cohort, trace)
        assert refined.responses() == ["orig-x|0", "orig-y|0"]
        assert pair_cohort.responses() == ["orig-x", "orig-y"]


class TestEvaluation:
    async def test_acceptance_fractions(self, pair_cohort):
        judge = ScriptedJudge(lambda instance_id, r: "accept" if instance_id == "y" or r % 2 == 0 else "refine")
        log = []
        profile = await evaluate_probabilistic(
            pair_cohort, judge, IsolatedNeighborhoodBuilder(), runs=4, seed=0, verdict_log=log
        )
        assert profile.instance_ids == ["x", "y"]
        assert profile.accept_counts == [2, 4]
        assert profile.p_hat == [0.5, 1.0]
        assert len(log) == 8
        assert {record.phase for record in log} == {"eval"}
        assert all(r.focal.response_text.startswith("orig-") for r in judge.requests)

    async def test_failure_names_run(self, pair_cohort):
        judge = ScriptedJudge(lambda instance_id, r: "fail" if (instance_id, r) == ("y", 2) else "accept")
        with pytest.raises(AgentError) as info:
            await evaluate_probabilistic(pair_cohort, judge, IsolatedNeighborhoodBuilder(), runs=3, seed=0)
        assert (info.value.instance_id, info.value.run) == ("y", 2)

    def test_profile_counts_must_match(self):
        with pytest.raises(ValidationError):
            AcceptanceProfile(cohort_id="c", runs=4, instance_ids=["x"], accept_counts=[1], p_hat=[0.5])

    async def test_runs_must_be_positive(self, pair_cohort):
        with pytest.raises(ValueError):
            await evaluate_probabilistic(
                pair_cohort, ScriptedJudge(lambda i, r: "accept"), IsolatedNeighborhoodBuilder(), runs=0, seed=0
            )


class TestSimulatedRuns:
    @pytest.fixture
    def world(self):
        return generate_synthetic_world(
            40, primary_error_rate=0.5, judge_error_rate=0.3, context_benefit=0.8, refine_adoption=1.0, seed=2
        )

    async def test_refinement_is_reproducible(self, world):
        cohort, sim_world, extractor = world
        builder = LabelOverlapNeighborhoodBuilder(SamplerConfig(k=4, overlap_field="software"))
        cfg = RefinementConfig(t_min=2, t_max=4, seed=2)
        traces = [
            await run_refinement(
                cohort,
                SimulatedPrimary(sim_world, 2),
                SimulatedJudge(sim_world, 2),
                cfg,
                builder,
                extractor=extractor,
                max_concurrency=concurrency,
            )
            for concurrency in (1, 8)
        ]
        assert traces[0] == traces[1]

    async def test_longer_run_repeats_shorter_one(self, world):
        cohort, sim_world, extractor = world
        builder = IsolatedNeighborhoodBuilder()
        short, long = [
            await run_refinement(
                cohort,
                SimulatedPrimary(sim_world, 5),
                SimulatedJudge(sim_world, 5),
                RefinementConfig(t_min=2, t_max=t_max, seed=5),
                builder,
                extractor=extractor,
            )
            for t_max in (3, 6)
        ]
        assert long.rounds[: len(short.rounds)] == short.rounds

    async def test_evaluation_is_reproducible(self, world):
        cohort, sim_world, _ = world
        builder = LabelOverlapNeighborhoodBuilder(SamplerConfig(k=4, overlap_field="software"))
        profiles = [
            await evaluate_probabilistic(cohort, SimulatedJudge(sim_world, 3), builder, runs=5, seed=3)
            for _ in range(2)
        ]
        assert profiles[0] == profiles[1]
        assert all(p == count / 5 for p, count in zip(profiles[0].p_hat, profiles[0].accept_counts))

    async def test_single_pass_order(self, world):
        cohort, sim_world, _ = world
        verdicts = await run_single_pass(cohort, IsolatedNeighborhoodBuilder(), SimulatedJudge(sim_world, 0), seed=0)
        assert len(verdicts) == cohort.n
        sequential = await run_single_pass(
            cohort, IsolatedNeighborhoodBuilder(), SimulatedJudge(sim_world, 0), seed=0, max_concurrency=1
        )
        assert verdicts == sequential

    async def test_single_pass_with_neighbourhoods(self, world):
        cohort, _, _ = world
        judge = ScriptedJudge(lambda instance_id, round: "accept")
        builder = LabelOverlapNeighborhoodBuilder(SamplerConfig(k=4, overlap_field="software"))
        verdicts = await run_single_pass(cohort, builder, judge, seed=0)
        assert len(verdicts) == cohort.n
        assert len(judge.requests) == cohort.n
        assert sorted(r.focal.id for r in judge.requests) == sorted(p.id for p in cohort.instances)
        for request in judge.requests:
            assert request.phase == "single"
            assert len(request.neighbors) == 4
            assert request.focal.id not in {n.pair.id for n in request.neighbors}

import numpy as np
import pytest
from judge_agent_forest.agents.simulated import SimulatedJudge, SimulatedPrimary, generate_synthetic_world
from judge_agent_forest.engine import RefinementConfig, apply_trace, evaluate_probabilistic, run_refinement
from judge_agent_forest.reporting import summarize
from judge_agent_forest.sampler import (
    IsolatedNeighborhoodBuilder,
    LabelOverlapNeighborhoodBuilder,
    SamplerConfig,
)

pytestmark = pytest.mark.slow

# A judge that is a coin flip on its own and exact with fully correct
# context; a primary that adopts seven corrections in ten.
WORLD = dict(primary_error_rate=0.5, judge_error_rate=0.5, context_benefit=1.0, refine_adoption=0.7)
T_MIN = 4
SEEDS = range(10)


def _label_overlap(k: int) -> LabelOverlapNeighborhoodBuilder:
    return LabelOverlapNeighborhoodBuilder(SamplerConfig(k=k, k_pos=k // 2, k_neg=k // 2, overlap_field="software"))


async def _refine_and_evaluate(seed: int, k: int, t_max: int):
    cohort, world, extractor = generate_synthetic_world(200, seed=seed, **WORLD)
    refine_builder = _label_overlap(k) if k else IsolatedNeighborhoodBuilder()
    trace = await run_refinement(
        cohort,
        SimulatedPrimary(world, seed),
        SimulatedJudge(world, seed),
        RefinementConfig(t_min=T_MIN, t_max=t_max, seed=seed),
        refine_builder,
        extractor=extractor,
    )
    refined = apply_trace(cohort, trace, extractor)
    # Both refined cohorts are scored by the same evaluator.
    profile = await evaluate_probabilistic(refined, SimulatedJudge(world, seed), _label_overlap(8), runs=10, seed=seed)
    return summarize(profile)


async def _averaged(k: int, t_max: int) -> tuple[float, float]:
    summaries = [await _refine_and_evaluate(seed, k, t_max) for seed in SEEDS]
    return float(np.mean([s.mean for s in summaries])), float(np.mean([s.std for s in summaries]))


async def test_neighbourhoods_shift_acceptance_up():
    jaf_mean, jaf_std = await _averaged(k=8, t_max=5)
    isolated_mean, isolated_std = await _averaged(k=0, t_max=5)
    assert jaf_mean >= isolated_mean + 0.05
    assert jaf_std < isolated_std


async def test_extra_rounds_help_isolated_judging_more():
    jaf_gain = (await _averaged(k=8, t_max=10))[0] - (await _averaged(k=8, t_max=5))[0]
    isolated_gain = (await _averaged(k=0, t_max=10))[0] - (await _averaged(k=0, t_max=5))[0]
    assert isolated_gain > 0
    assert jaf_gain < isolated_gain

from judge_agent_forest.agents.base import Judge, PrimaryAgent
from judge_agent_forest.agents.types import AgentType
from judge_agent_forest.settings import LlmSettings, RunConfig


def create_judge(config: RunConfig, llm_settings: LlmSettings | None = None) -> Judge:
    """
    Create a judge based on the run's agent selection.
    :param config: The validated run configuration.
    :param llm_settings: Environment settings for HTTP agents.
    :return: An instance of the selected judge.
    """
    if config.agent_type == AgentType.SIM:
        from judge_agent_forest.agents.simulated import SimulatedJudge, load_world

        return SimulatedJudge(load_world(config.agent.world), config.seed)
    elif config.agent_type == AgentType.HTTP:
        from judge_agent_forest.agents.chat import HttpJudge

        settings = config.agent.apply(llm_settings or LlmSettings())
        return HttpJudge(settings, config.prompts)
    else:
        raise ValueError(f"Unsupported agent type: {config.agent_type}")


def create_primary(config: RunConfig, llm_settings: LlmSettings | None = None) -> PrimaryAgent:
    if config.agent_type == AgentType.SIM:
        from judge_agent_forest.agents.simulated import SimulatedPrimary, load_world

        return SimulatedPrimary(load_world(config.agent.world), config.seed)
    elif config.agent_type == AgentType.HTTP:
        from judge_agent_forest.agents.chat import HttpPrimary

        settings = config.agent.apply(llm_settings or LlmSettings())
        return HttpPrimary(settings, config.prompts)
    else:
        raise ValueError(f"Unsupported agent type: {config.agent_type}")

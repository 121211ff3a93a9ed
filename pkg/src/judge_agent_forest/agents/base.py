from abc import ABC, abstractmethod

from judge_agent_forest.agents.types import JudgeRequest, JudgeVerdict, RefineRequest


class Judge(ABC):
    """Abstract base class for judge agents."""

    @abstractmethod
    async def judge(self, request: JudgeRequest) -> JudgeVerdict:
        """Review the focal pair in the context of its neighbours."""
        pass

    async def aclose(self):
        """Release held resources."""
        pass


class PrimaryAgent(ABC):
    """Abstract base class for the agent that produces and revises responses."""

    @abstractmethod
    async def refine(self, request: RefineRequest) -> str:
        """Produce a revised response from the judge's critique."""
        pass

    async def aclose(self):
        pass

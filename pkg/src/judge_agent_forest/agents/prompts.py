from importlib.resources import files
from pathlib import Path

from judge_agent_forest.agents.types import JudgeRequest, NeighborContext, RefineRequest
from judge_agent_forest.cohort import QueryResponsePair, split_multi_value
from judge_agent_forest.errors import ConfigError
from pydantic import BaseModel, PositiveInt

NO_NEIGHBORS = "(none)"
NO_HISTORY = "(none)"


class PromptConfig(BaseModel):
    """
    Prompt texts and neighbour summary lengths. Templates are read from
    ``template_dir`` when given, otherwise from the packaged defaults.
    """

    template_dir: Path | None = None
    query_chars: PositiveInt = 200
    response_chars: PositiveInt = 300
    overlap_field: str | None = None

    def template(self, name: str) -> str:
        if self.template_dir is not None:
            path = self.template_dir / f"{name}.txt"
            if path.exists():
                return path.read_text(encoding="utf-8")
        resource = files("judge_agent_forest.agents").joinpath("templates", f"{name}.txt")
        try:
            return resource.read_text(encoding="utf-8")
        except FileNotFoundError as e:
            raise ConfigError(f"Prompt template {name!r} not found") from e


def truncate(text: str, limit: int) -> str:
    text = " ".join(text.split())
    return text if len(text) <= limit else text[: limit - 3].rstrip() + "..."


def summarize_neighbor(pair: QueryResponsePair, cfg: PromptConfig) -> str:
    parts = [
        f"[{pair.id}]",
        f"query: {truncate(pair.query_text, cfg.query_chars)}",
        f"answer: {truncate(pair.response_text, cfg.response_chars)}",
    ]
    if cfg.overlap_field:
        try:
            values = split_multi_value(pair.side_info.value(cfg.overlap_field))
        except ValueError:
            values = frozenset()
        parts.append(f"{cfg.overlap_field}: {', '.join(sorted(values)) or 'unknown'}")
    return " | ".join(parts)


def neighbor_context(pair: QueryResponsePair, cfg: PromptConfig) -> NeighborContext:
    return NeighborContext(pair=pair, summary=summarize_neighbor(pair, cfg))


def render_judge_prompt(request: JudgeRequest, cfg: PromptConfig) -> list[dict[str, str]]:
    neighbors = "\n".join(f"- {n.summary}" for n in request.neighbors) or NO_NEIGHBORS
    user = cfg.template("judge").format(
        focal_query=request.focal.query_text,
        focal_response=request.focal.response_text,
        neighbors=neighbors,
    )
    return [
        {"role": "system", "content": cfg.template("judge_system")},
        {"role": "user", "content": user},
    ]


def render_refine_prompt(request: RefineRequest, cfg: PromptConfig) -> list[dict[str, str]]:
    history = "\n".join(
        f"{t}. answer: {truncate(response, cfg.response_chars)} | critique: {truncate(critique, cfg.response_chars)}"
        for t, (response, critique) in enumerate(request.history)
    ) or NO_HISTORY
    user = cfg.template("refine").format(
        query=request.query,
        prior_response=request.prior_response,
        critique=request.critique,
        history=history,
    )
    return [
        {"role": "system", "content": cfg.template("refine_system")},
        {"role": "user", "content": user},
    ]

import asyncio
import logging
from typing import Any

import httpx
from judge_agent_forest.agents.base import Judge, PrimaryAgent
from judge_agent_forest.agents.prompts import (
    PromptConfig,
    render_judge_prompt,
    render_refine_prompt,
)
from judge_agent_forest.agents.types import JudgeRequest, JudgeVerdict, RefineRequest
from judge_agent_forest.errors import AgentError, VerdictParseError
from judge_agent_forest.settings import LlmSettings

logger = logging.getLogger(__name__)

VERDICT_LINES = {"VERDICT: ACCEPT": "accept", "VERDICT: REFINE": "refine"}
CRITIQUE_PREFIX = "CRITIQUE:"


class _Retryable(Exception):
    pass


async def _with_retry(operation, retries: int, delay: float):
    """Run ``operation``; retry on transient failures with exponential backoff."""
    last_error = None
    for attempt in range(retries + 1):
        try:
            return await operation()
        except _Retryable as e:
            last_error = e
            if attempt == retries:
                break
            wait = delay * (2 ** attempt)
            logger.warning(f"Attempt {attempt + 1} failed, retrying in {wait:.2f}s: {e}")
            await asyncio.sleep(wait)
    logger.error(f"Giving up after {retries + 1} attempts: {last_error}")
    raise AgentError(f"Chat request failed after {retries + 1} attempts: {last_error}")


async def llm_chat(
        endpoint: str,
        payload: dict[str, Any],
        *,
        client: httpx.AsyncClient,
        api_key: str | None = None,
        max_retries: int = 2,
        backoff_seconds: float = 1.0,
) -> str:
    """
    Send one chat-completion request and return the first completion's text.
    Transport errors and 5xx replies are retried up to ``max_retries`` times.
    :raises AgentError: on exhausted retries, a non-2xx reply or a malformed body.
    """
    headers = {"Content-Type": "application/json"}
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"

    async def _post() -> httpx.Response:
        try:
            response = await client.post(endpoint, json=payload, headers=headers)
        except httpx.TransportError as e:
            raise _Retryable(f"transport error: {e}") from e
        if response.status_code >= 500:
            raise _Retryable(f"HTTP {response.status_code}")
        return response

    response = await _with_retry(_post, max_retries, backoff_seconds)
    if not response.is_success:
        raise AgentError(f"Chat endpoint returned HTTP {response.status_code}: {response.text[:200]}")
    try:
        content = response.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as e:
        raise AgentError(f"Malformed chat completion: {response.text[:200]}") from e
    if not isinstance(content, str):
        raise AgentError("Chat completion content is not text")
    return content


def parse_verdict(text: str) -> JudgeVerdict:
    """
    Parse the two-line verdict grammar: the first line that is exactly
    ``VERDICT: ACCEPT`` or ``VERDICT: REFINE``, optionally followed directly by a
    line starting with ``CRITIQUE:`` whose text runs to the end of the reply.
    :raises VerdictParseError: if no verdict line exists or a refine verdict
        has no critique.
    """
    lines = text.splitlines()
    for i, line in enumerate(lines):
        label = VERDICT_LINES.get(line)
        if label is None:
            continue
        critique = ""
        if i + 1 < len(lines) and lines[i + 1].startswith(CRITIQUE_PREFIX):
            first = lines[i + 1][len(CRITIQUE_PREFIX):]
            critique = "\n".join([first, *lines[i + 2:]]).strip()
        if label == "refine" and not critique:
            raise VerdictParseError("REFINE verdict without a critique")
        return JudgeVerdict(label=label, critique=critique, raw=text)
    raise VerdictParseError("Reply has no VERDICT line")


class _ChatAgent:
    def __init__(self, settings: LlmSettings, prompts: PromptConfig, client: httpx.AsyncClient | None = None):
        if not settings.endpoint:
            raise AgentError("No chat endpoint configured (JAF_LLM_ENDPOINT)")
        self.settings = settings
        self.prompts = prompts
        self.client = client or httpx.AsyncClient(timeout=settings.timeout_seconds)

    async def _chat(self, messages: list[dict[str, str]]) -> str:
        payload = {
            "model": self.settings.model,
            "messages": messages,
            "temperature": self.settings.temperature,
        }
        return await llm_chat(
            self.settings.endpoint,
            payload,
            client=self.client,
            api_key=self.settings.api_key,
            max_retries=self.settings.max_retries,
            backoff_seconds=self.settings.backoff_seconds,
        )

    async def aclose(self):
        await self.client.aclose()


class HttpJudge(_ChatAgent, Judge):
    async def judge(self, request: JudgeRequest) -> JudgeVerdict:
        messages = render_judge_prompt(request, self.prompts)
        reply = await self._chat(messages)
        try:
            return parse_verdict(reply)
        except VerdictParseError as e:
            logger.warning(f"Judge reply for {request.focal.id} did not parse ({e}); re-prompting")
        reminder = self.prompts.template("format_reminder")
        messages[-1] = {"role": "user", "content": f"{messages[-1]['content']}\n\n{reminder}"}
        return parse_verdict(await self._chat(messages))


class HttpPrimary(_ChatAgent, PrimaryAgent):
    async def refine(self, request: RefineRequest) -> str:
        reply = (await self._chat(render_refine_prompt(request, self.prompts))).strip()
        if not reply:
            raise AgentError("Primary agent returned an empty response")
        return reply

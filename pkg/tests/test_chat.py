import json

import httpx
import pytest
from judge_agent_forest.agents.chat import HttpJudge, HttpPrimary, llm_chat, parse_verdict
from judge_agent_forest.agents.prompts import (
    PromptConfig,
    neighbor_context,
    render_judge_prompt,
    render_refine_prompt,
    truncate,
)
from judge_agent_forest.agents.types import JudgeRequest, RefineRequest
from judge_agent_forest.errors import AgentError, VerdictParseError
from judge_agent_forest.settings import LlmSettings

from .conftest import make_pair

ENDPOINT = "http://llm.test/v1/chat/completions"


def _completion(text: str) -> dict:
    return {"choices": [{"message": {"role": "assistant", "content": text}}]}


def _client(replies: list, calls: list) -> httpx.AsyncClient:
    """A client whose n-th request gets the n-th reply (a status code, a text or an exception)."""

    def handler(request: httpx.Request) -> httpx.Response:
        calls.append(json.loads(request.content))
        reply = replies[min(len(calls), len(replies)) - 1]
        if isinstance(reply, Exception):
            raise reply
        if isinstance(reply, int):
            return httpx.Response(reply, text="upstream trouble")
        return httpx.Response(200, json=_completion(reply))

    return httpx.AsyncClient(transport=httpx.MockTransport(handler))


def _settings(**kwargs) -> LlmSettings:
    return LlmSettings(JAF_LLM_ENDPOINT=ENDPOINT, JAF_LLM_BACKOFF_SECONDS=0.0, **kwargs)


class TestLlmChat:
    async def test_returns_content(self):
        calls = []
        async with _client(["hello"], calls) as client:
            text = await llm_chat(ENDPOINT, {"messages": []}, client=client, backoff_seconds=0.0)
        assert text == "hello"
        assert len(calls) == 1

    async def test_retries_server_errors(self):
        calls = []
        async with _client([503, 502, "ok"], calls) as client:
            text = await llm_chat(ENDPOINT, {}, client=client, max_retries=2, backoff_seconds=0.0)
        assert text == "ok"
        assert len(calls) == 3

    async def test_gives_up_after_retries(self):
        calls = []
        async with _client([500], calls) as client:
            with pytest.raises(AgentError):
                await llm_chat(ENDPOINT, {}, client=client, max_retries=2, backoff_seconds=0.0)
        assert len(calls) == 3

    async def test_transport_errors_are_retried(self):
        calls = []
        async with _client([httpx.ConnectError("refused"), "ok"], calls) as client:
            assert await llm_chat(ENDPOINT, {}, client=client, max_retries=1, backoff_seconds=0.0) == "ok"

    async def test_client_errors_are_not_retried(self):
        calls = []
        async with _client([404, "ok"], calls) as client:
            with pytest.raises(AgentError):
                await llm_chat(ENDPOINT, {}, client=client, max_retries=3, backoff_seconds=0.0)
        assert len(calls) == 1

    async def test_malformed_body(self):
        def handler(request):
            return httpx.Response(200, json={"choices": []})

        async with httpx.AsyncClient(transport=httpx.MockTransport(handler)) as client:
            with pytest.raises(AgentError):
                await llm_chat(ENDPOINT, {}, client=client)


class TestParseVerdict:
    def test_accept(self):
        verdict = parse_verdict("Looks fine.\nVERDICT: ACCEPT")
        assert verdict.accepted
        assert verdict.critique == ""

    def test_refine_with_multiline_critique(self):
        verdict = parse_verdict("VERDICT: REFINE\nCRITIQUE: wrong package.\nUse etcd instead.")
        assert verdict.label == "refine"
        assert verdict.critique == "wrong package.\nUse etcd instead."

    def test_first_verdict_line_wins(self):
        assert parse_verdict("VERDICT: ACCEPT\nVERDICT: REFINE\nCRITIQUE: x").accepted

    def test_lines_must_match_exactly(self):
        with pytest.raises(VerdictParseError):
            parse_verdict("verdict: accept")
        with pytest.raises(VerdictParseError):
            parse_verdict("VERDICT: MAYBE")

    def test_refine_needs_critique(self):
        with pytest.raises(VerdictParseError):
            parse_verdict("VERDICT: REFINE")

    def test_indented_verdict_is_not_a_verdict(self):
        with pytest.raises(VerdictParseError):
            parse_verdict("  VERDICT: ACCEPT")
        with pytest.raises(VerdictParseError):
            parse_verdict("VERDICT: ACCEPT ")

    def test_critique_must_follow_the_verdict(self):
        with pytest.raises(VerdictParseError):
            parse_verdict("VERDICT: REFINE\nSome thoughts.\nCRITIQUE: wrong package.")
        with pytest.raises(VerdictParseError):
            parse_verdict("VERDICT: REFINE\n  CRITIQUE: wrong package.")
        assert parse_verdict("VERDICT: ACCEPT\n\nCRITIQUE: minor nit").critique == ""


class TestPrompts:
    def test_truncate(self):
        assert truncate("a  b\nc", 10) == "a b c"
        assert truncate("x" * 20, 10) == "xxxxxxx..."

    def test_judge_prompt_lists_neighbors(self):
        cfg = PromptConfig(overlap_field="software")
        request = JudgeRequest(
            focal=make_pair("a1", "etcd"),
            neighbors=(neighbor_context(make_pair("a2", "nginx,etcd"), cfg),),
        )
        system, user = render_judge_prompt(request, cfg)
        assert system["role"] == "system"
        assert "VERDICT: ACCEPT" in system["content"]
        assert "REQUIRES: etcd" in user["content"]
        assert "[a2]" in user["content"]
        assert "software: etcd, nginx" in user["content"]

    def test_isolated_judge_prompt(self):
        _, user = render_judge_prompt(JudgeRequest(focal=make_pair("a1")), PromptConfig())
        assert "(none)" in user["content"]

    def test_refine_prompt_history(self):
        request = RefineRequest(
            instance_id="a1",
            round=1,
            query="q?",
            prior_response="REQUIRES: redis",
            critique="wrong",
            history=(("REQUIRES: nginx", "also wrong"),),
        )
        _, user = render_refine_prompt(request, PromptConfig())
        assert "0. answer: REQUIRES: nginx | critique: also wrong" in user["content"]
        assert "REQUIRES: redis" in user["content"]

    def test_template_override(self, tmp_path):
        (tmp_path / "judge_system.txt").write_text("custom system", encoding="utf-8")
        cfg = PromptConfig(template_dir=tmp_path)
        system, _ = render_judge_prompt(JudgeRequest(focal=make_pair("a1")), cfg)
        assert system["content"] == "custom system"


class TestHttpAgents:
    async def test_judge_reprompts_once(self):
        calls = []
        judge = HttpJudge(_settings(), PromptConfig(), client=_client(["I think so", "VERDICT: ACCEPT"], calls))
        verdict = await judge.judge(JudgeRequest(focal=make_pair("a1")))
        await judge.aclose()
        assert verdict.accepted
        assert len(calls) == 2
        assert "did not follow the required format" in calls[1]["messages"][-1]["content"]

    async def test_judge_fails_after_reprompt(self):
        calls = []
        judge = HttpJudge(_settings(), PromptConfig(), client=_client(["no", "still no"], calls))
        with pytest.raises(VerdictParseError):
            await judge.judge(JudgeRequest(focal=make_pair("a1")))

    async def test_payload(self):
        calls = []
        settings = _settings(JAF_LLM_MODEL="judge-model", JAF_LLM_TEMPERATURE=0.0)
        judge = HttpJudge(settings, PromptConfig(), client=_client(["VERDICT: ACCEPT"], calls))
        await judge.judge(JudgeRequest(focal=make_pair("a1")))
        assert calls[0]["model"] == "judge-model"
        assert calls[0]["temperature"] == 0.0
        assert [m["role"] for m in calls[0]["messages"]] == ["system", "user"]

    async def test_primary_returns_reply(self):
        calls = []
        primary = HttpPrimary(_settings(), PromptConfig(), client=_client(["  REQUIRES: etcd \n"], calls))
        request = RefineRequest(instance_id="a1", round=0, query="q", prior_response="r", critique="c")
        assert await primary.refine(request) == "REQUIRES: etcd"

    async def test_primary_empty_reply(self):
        primary = HttpPrimary(_settings(), PromptConfig(), client=_client(["   "], []))
        request = RefineRequest(instance_id="a1", round=0, query="q", prior_response="r", critique="c")
        with pytest.raises(AgentError):
            await primary.refine(request)

    def test_endpoint_required(self):
        with pytest.raises(AgentError):
            HttpJudge(LlmSettings(JAF_LLM_ENDPOINT=None), PromptConfig())

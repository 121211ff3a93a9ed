import json

import pytest
from judge_agent_forest.agents.chat import HttpJudge, HttpPrimary
from judge_agent_forest.agents.factory import create_judge, create_primary
from judge_agent_forest.agents.simulated import SimulatedJudge, SimulatedPrimary, SimWorld, save_world
from judge_agent_forest.agents.types import AgentType
from judge_agent_forest.cohort import save_cohort
from judge_agent_forest.errors import ConfigError
from judge_agent_forest.settings import HttpAgentConfig, LlmSettings, load_run_config


@pytest.fixture
def run_dir(tmp_path, small_cohort):
    save_cohort(small_cohort, tmp_path / "cohort.json")
    save_world(
        SimWorld(
            truth={pair.id: "etcd" for pair in small_cohort.instances},
            primary_error_rate=0.5,
            judge_error_rate=0.3,
            context_benefit=0.8,
            refine_adoption=1.0,
        ),
        tmp_path / "world.json",
    )
    return tmp_path


def _write_config(run_dir, **overrides):
    document = {
        "cohort": "cohort.json",
        "seed": 7,
        "output_dir": "out",
        "sampler": {"scheme": "label-overlap", "k": 4, "overlap_field": "software"},
        "agent": {"type": "sim", "world": "world.json"},
    }
    document.update(overrides)
    path = run_dir / "config.json"
    path.write_text(json.dumps(document), encoding="utf-8")
    return path


class TestLlmSettings:
    def test_default_values(self, monkeypatch):
        for name in ("JAF_LLM_ENDPOINT", "JAF_LLM_MODEL", "JAF_MAX_CONCURRENCY"):
            monkeypatch.delenv(name, raising=False)
        settings = LlmSettings()
        assert settings.endpoint is None
        assert settings.model == "default"
        assert settings.max_retries == 2
        assert settings.max_concurrency == 8

    def test_environment(self, monkeypatch):
        monkeypatch.setenv("JAF_LLM_ENDPOINT", "http://llm.test")
        monkeypatch.setenv("JAF_LLM_API_KEY", "secret")
        monkeypatch.setenv("JAF_MAX_CONCURRENCY", "3")
        settings = LlmSettings()
        assert settings.endpoint == "http://llm.test"
        assert settings.api_key == "secret"
        assert settings.max_concurrency == 3

    def test_config_overrides_environment(self, monkeypatch):
        monkeypatch.setenv("JAF_LLM_MODEL", "env-model")
        settings = HttpAgentConfig(model="config-model").apply(LlmSettings())
        assert settings.model == "config-model"
        assert HttpAgentConfig().apply(LlmSettings()).model == "env-model"


class TestRunConfig:
    def test_paths_resolve_against_config(self, run_dir):
        config = load_run_config(_write_config(run_dir))
        run_dir = run_dir.resolve()
        assert config.cohort == run_dir / "cohort.json"
        assert config.output_dir == run_dir / "out"
        assert config.agent.world == run_dir / "world.json"
        assert config.agent_type == AgentType.SIM
        assert config.forest_path() == run_dir / "out" / "forest.json"

    def test_seed_and_overlap_field_propagate(self, run_dir):
        config = load_run_config(_write_config(run_dir))
        assert config.refinement.seed == 7
        assert config.prompts.overlap_field == "software"
        assert (config.sampler.k_pos, config.sampler.k_neg) == (2, 2)

    def test_overrides(self, run_dir):
        overrides = {"seed": 11, "sampler": {"k": 0, "k_pos": None, "k_neg": None}, "refinement": {"t_max": 9}}
        config = load_run_config(_write_config(run_dir), overrides)
        assert config.seed == 11
        assert config.sampler.k == 0
        assert config.sampler.scheme == "label-overlap"
        assert config.refinement.t_max == 9
        assert config.refinement.seed == 11

    def test_missing_cohort(self, run_dir):
        with pytest.raises(ConfigError):
            load_run_config(_write_config(run_dir, cohort="missing.json"))

    def test_missing_config(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(tmp_path / "nope.json")

    def test_scheme_needs_its_section(self, run_dir):
        with pytest.raises(ConfigError):
            load_run_config(_write_config(run_dir, sampler={"scheme": "graph", "k": 4}))
        with pytest.raises(ConfigError):
            load_run_config(_write_config(run_dir, sampler={"scheme": "lsh", "k": 4}))
        config = load_run_config(_write_config(run_dir, sampler={"scheme": "lsh", "k": 0}))
        assert config.forest is None

    def test_evaluation_sampler(self, run_dir):
        config = load_run_config(_write_config(run_dir))
        assert config.evaluation_sampler is config.sampler
        evaluation = {"sampler": {"scheme": "label-overlap", "k": 8, "overlap_field": "software"}}
        config = load_run_config(_write_config(run_dir, evaluation=evaluation), {"sampler": {"k": 0}})
        assert config.sampler.k == 0
        assert config.evaluation_sampler.k == 8
        with pytest.raises(ConfigError):
            load_run_config(_write_config(run_dir, evaluation={"sampler": {"scheme": "graph", "k": 4}}))

    def test_rounds_validated(self, run_dir):
        with pytest.raises(ConfigError):
            load_run_config(_write_config(run_dir, refinement={"t_min": 5, "t_max": 2}))

    def test_effective_dict_is_relative(self, run_dir):
        config = load_run_config(_write_config(run_dir))
        effective = config.to_effective_dict()
        assert effective["cohort"] == "../cohort.json"
        assert effective["agent"]["world"] == "../world.json"
        assert effective["output_dir"] == "."
        assert effective["refinement"]["seed"] == 7


class TestFactory:
    def test_simulated_agents(self, run_dir):
        config = load_run_config(_write_config(run_dir))
        assert isinstance(create_judge(config), SimulatedJudge)
        assert isinstance(create_primary(config), SimulatedPrimary)

    def test_http_agents(self, run_dir):
        config = load_run_config(_write_config(run_dir, agent={"type": "http", "endpoint": "http://llm.test"}))
        settings = LlmSettings(JAF_LLM_ENDPOINT=None)
        judge = create_judge(config, settings)
        assert isinstance(judge, HttpJudge)
        assert judge.settings.endpoint == "http://llm.test"
        assert isinstance(create_primary(config, settings), HttpPrimary)

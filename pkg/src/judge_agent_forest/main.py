import argparse
import asyncio
import logging
import sys
from pathlib import Path
from typing import Any

from judge_agent_forest.common.jsonio import read_json, write_json, write_json_lines
from judge_agent_forest.errors import AgentError, JafError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_AGENT = 2


def _add_run_flags(parser: argparse.ArgumentParser, config_required: bool = True):
    parser.add_argument("--config", required=config_required, help="Run configuration (JSON)")
    parser.add_argument("--seed", type=int, help="Override the run seed")
    parser.add_argument("--out", help="Override the output directory")
    parser.add_argument("--cohort", help="Override the cohort file")
    parser.add_argument("--scheme", choices=["lsh", "label-overlap", "graph"])
    parser.add_argument("--k", type=int, help="Neighbourhood size; 0 judges in isolation")
    parser.add_argument("--tmin", type=int)
    parser.add_argument("--tmax", type=int)
    parser.add_argument("--runs", type=int, help="Evaluation runs R")
    parser.add_argument("--agent", choices=["sim", "http"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jaf", description="judge-agent-forest")
    parser.add_argument("--log-level", default="WARNING", help="Logging level (default WARNING)")
    commands = parser.add_subparsers(dest="command", required=True)

    hash_parser = commands.add_parser("hash", help="Hash forest commands")
    hash_commands = hash_parser.add_subparsers(dest="action", required=True)
    _add_run_flags(hash_commands.add_parser("train", help="Grow a hash forest over the cohort"))

    graph_parser = commands.add_parser("graph", help="Knowledge graph commands")
    graph_commands = graph_parser.add_subparsers(dest="action", required=True)
    _add_run_flags(graph_commands.add_parser("build", help="Build the cohort knowledge graph"))

    _add_run_flags(commands.add_parser("refine", help="Iterative self-refinement"))
    _add_run_flags(commands.add_parser("eval", help="Probabilistic evaluation of refined responses"))

    report = commands.add_parser("report", help="Histogram and summary of an acceptance profile")
    _add_run_flags(report, config_required=False)
    report.add_argument("--profile", help="Profile to report on (default <out>/profile.json)")
    report.add_argument("--bins", type=int)
    report.add_argument("--compare", help="Second profile for a delta summary")

    simulate = commands.add_parser("simulate", help="Generate a synthetic cohort and simulated world")
    simulate.add_argument("--out", required=True)
    simulate.add_argument("--seed", type=int, required=True)
    simulate.add_argument("--n", type=int, default=200)
    simulate.add_argument("--components", type=int, default=8)
    simulate.add_argument("--primary-error", type=float, default=0.5)
    simulate.add_argument("--judge-error", type=float, default=0.5)
    simulate.add_argument("--context-benefit", type=float, default=1.0)
    simulate.add_argument("--refine-adoption", type=float, default=0.7)
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    overrides: dict[str, Any] = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out:
        overrides["output_dir"] = str(Path(args.out).resolve())
    if args.cohort:
        overrides["cohort"] = str(Path(args.cohort).resolve())
    sampler: dict[str, Any] = {}
    if args.scheme:
        sampler["scheme"] = args.scheme
    if args.k is not None:
        # The positive/negative split is re-derived from the new k.
        sampler.update(k=args.k, k_pos=None, k_neg=None)
    if sampler:
        overrides["sampler"] = sampler
    refinement: dict[str, Any] = {}
    if args.tmin is not None:
        refinement["t_min"] = args.tmin
    if args.tmax is not None:
        refinement["t_max"] = args.tmax
    if refinement:
        overrides["refinement"] = refinement
    if args.runs is not None:
        overrides["evaluation"] = {"runs": args.runs}
    if args.agent:
        overrides["agent"] = {"type": args.agent}
    return overrides


def _load_config(args: argparse.Namespace):
    from judge_agent_forest.settings import load_run_config

    config = load_run_config(args.config, _overrides(args))
    write_json(config.output_dir / "effective-config.json", config.to_effective_dict())
    return config


def _max_concurrency(config) -> int:
    from judge_agent_forest.settings import LlmSettings

    return config.max_concurrency or LlmSettings().max_concurrency


def _builder(config, sampler):
    from judge_agent_forest.hashing.forest import load_forest
    from judge_agent_forest.sampler import create_neighborhood_builder

    forest = None
    if sampler.k > 0 and sampler.scheme == "lsh":
        forest = load_forest(config.forest_path())
    return create_neighborhood_builder(
        sampler,
        forest=forest,
        relations=config.graph.relations if config.graph else None,
        prune=config.graph.prune if config.graph else None,
        growth=config.forest.growth if config.forest else None,
        label_field=config.forest.label_field if config.forest else None,
        retrain_every=config.refinement.retrain_every,
        seed=config.seed,
    )


def cmd_hash_train(args: argparse.Namespace) -> int:
    from judge_agent_forest.cohort import cohort_features, load_cohort
    from judge_agent_forest.common.rng import derive_rng
    from judge_agent_forest.errors import ConfigError
    from judge_agent_forest.hashing.forest import (
        assign_codes,
        grow_forest,
        hash_report,
        save_forest,
    )

    config = _load_config(args)
    if config.forest is None:
        raise ConfigError("hash train needs a 'forest' section")
    cohort = load_cohort(config.cohort)
    features = cohort_features(cohort)
    try:
        labels = [pair.side_info.value(config.forest.label_field) for pair in cohort.instances]
    except ValueError as e:
        raise ConfigError(str(e)) from e
    forest = grow_forest(
        features,
        labels,
        config.forest.growth,
        derive_rng(config.seed, "forest", "grow"),
        schema=cohort.side_info_schema,
        label_field=config.forest.label_field,
    )
    codes = assign_codes(forest, features)
    save_forest(forest, config.output_dir / "forest.json")
    write_json(config.output_dir / "hash-report.json", hash_report(forest, codes, labels))
    return EXIT_OK


def cmd_graph_build(args: argparse.Namespace) -> int:
    from judge_agent_forest.cohort import load_cohort
    from judge_agent_forest.errors import ConfigError
    from judge_agent_forest.graph import build_graph, save_graph

    config = _load_config(args)
    if config.graph is None:
        raise ConfigError("graph build needs a 'graph' section")
    cohort = load_cohort(config.cohort)
    graph = build_graph(cohort, config.graph.relations, config.graph.prune)
    save_graph(graph, config.output_dir / "graph.json")
    return EXIT_OK


async def _close(*agents):
    for agent in agents:
        await agent.aclose()


def cmd_refine(args: argparse.Namespace) -> int:
    from judge_agent_forest.agents.factory import create_judge, create_primary
    from judge_agent_forest.cohort import cohort_to_dict, load_cohort
    from judge_agent_forest.engine import apply_trace, run_refinement

    config = _load_config(args)
    cohort = load_cohort(config.cohort)
    builder = _builder(config, config.sampler)
    judge = create_judge(config)
    primary = create_primary(config)

    async def _run():
        try:
            return await run_refinement(
                cohort,
                primary,
                judge,
                config.refinement,
                builder,
                extractor=config.extractor,
                prompts=config.prompts,
                max_concurrency=_max_concurrency(config),
            )
        finally:
            await _close(judge, primary)

    trace = asyncio.run(_run())
    out = config.output_dir
    write_json(out / "trace.json", trace.model_dump(mode="json"))
    write_json_lines(out / "verdicts.jsonl", [r.model_dump(mode="json") for r in trace.verdict_log()])
    write_json(out / "refined-cohort.json", cohort_to_dict(apply_trace(cohort, trace, config.extractor)))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    from judge_agent_forest.agents.factory import create_judge
    from judge_agent_forest.cohort import load_cohort
    from judge_agent_forest.engine import evaluate_probabilistic
    from judge_agent_forest.errors import ConfigError

    config = _load_config(args)
    refined_path = config.output_dir / "refined-cohort.json"
    if not refined_path.is_file():
        raise ConfigError(f"{refined_path} not found; run 'jaf refine' first")
    cohort = load_cohort(refined_path)
    builder = _builder(config, config.evaluation_sampler)
    judge = create_judge(config)
    log = []

    async def _run():
        try:
            return await evaluate_probabilistic(
                cohort,
                judge,
                builder,
                config.evaluation.runs,
                config.seed,
                prompts=config.prompts,
                max_concurrency=_max_concurrency(config),
                verdict_log=log,
            )
        finally:
            await judge.aclose()

    profile = asyncio.run(_run())
    write_json(config.output_dir / "profile.json", profile.model_dump(mode="json"))
    write_json_lines(config.output_dir / "eval-verdicts.jsonl", [r.model_dump(mode="json") for r in log])
    return EXIT_OK


def _read_profile(path: Path):
    from judge_agent_forest.engine import AcceptanceProfile
    from judge_agent_forest.errors import ConfigError, SchemaError
    from pydantic import ValidationError

    if not path.is_file():
        raise ConfigError(f"Profile {path} not found; run 'jaf eval' first")
    try:
        return AcceptanceProfile.model_validate(read_json(path))
    except ValidationError as e:
        raise SchemaError(f"Invalid profile {path}: {e}") from e


def cmd_report(args: argparse.Namespace) -> int:
    from judge_agent_forest.errors import ConfigError
    from judge_agent_forest.reporting import (
        DEFAULT_BINS,
        compare_profiles,
        make_histogram,
        write_histogram_csv,
    )

    bins = args.bins
    if args.config:
        config = _load_config(args)
        out = config.output_dir
        bins = bins or config.evaluation.bins
    elif args.out:
        out = Path(args.out)
    elif args.profile:
        out = Path(args.profile).parent
    else:
        raise ConfigError("report needs --config, --out or --profile")
    profile_path = Path(args.profile) if args.profile else out / "profile.json"
    profile = _read_profile(profile_path)

    report = make_histogram(profile, bins or DEFAULT_BINS)
    write_histogram_csv(report, out / "histogram.csv")
    write_json(out / "report.json", report.model_dump(mode="json"))
    if args.compare:
        comparison = compare_profiles(profile, _read_profile(Path(args.compare)))
        write_json(out / "comparison.json", comparison.model_dump(mode="json"))
    return EXIT_OK


def simulation_config(world_seed: int, extractor) -> dict[str, Any]:
    """A ready-to-run configuration whose paths are relative to itself."""
    return {
        "cohort": "cohort.json",
        "seed": world_seed,
        "output_dir": ".",
        "sampler": {
            "scheme": "label-overlap",
            "k": 8,
            "k_pos": 4,
            "k_neg": 4,
            "overlap_field": "software",
            "max_hamming_radius": 1,
        },
        "refinement": {"t_min": 4, "t_max": 5},
        "evaluation": {
            "runs": 10,
            "bins": 10,
            "sampler": {"scheme": "label-overlap", "k": 8, "k_pos": 4, "k_neg": 4, "overlap_field": "software"},
        },
        "agent": {"type": "sim", "world": "world.json"},
        "extractor": extractor.model_dump(mode="json"),
        "forest": {
            "label_field": "software",
            "growth": {"max_bits": 6, "split_kinds": ["categorical", "divergence"]},
        },
        "graph": {
            "relations": [
                {"kind": "shared-categorical", "field": "software", "priority": 0},
                {"kind": "knn-embedding", "k": 5, "priority": 1},
            ],
            "prune": {"max_degree": 16, "partition_key": "tenant"},
        },
    }


def cmd_simulate(args: argparse.Namespace) -> int:
    from judge_agent_forest.agents.simulated import generate_synthetic_world, save_world
    from judge_agent_forest.cohort import save_cohort

    cohort, world, extractor = generate_synthetic_world(
        args.n,
        primary_error_rate=args.primary_error,
        judge_error_rate=args.judge_error,
        context_benefit=args.context_benefit,
        refine_adoption=args.refine_adoption,
        seed=args.seed,
        n_components=args.components,
    )
    out = Path(args.out)
    save_cohort(cohort, out / "cohort.json")
    save_world(world, out / "world.json")
    write_json(out / "config.json", simulation_config(args.seed, extractor))
    return EXIT_OK


COMMANDS = {
    ("hash", "train"): cmd_hash_train,
    ("graph", "build"): cmd_graph_build,
    ("refine", None): cmd_refine,
    ("eval", None): cmd_eval,
    ("report", None): cmd_report,
    ("simulate", None): cmd_simulate,
}


def run(argv: list[str] | None = None) -> int:
    """
    Dispatch one command. Exit codes: 0 on success, 1 on validation errors,
    2 when an agent fails. Argument errors exit through argparse.
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level.upper(),
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    handler = COMMANDS[(args.command, getattr(args, "action", None))]
    try:
        return handler(args)
    except AgentError as e:
        print(f"jaf: agent error: {e}", file=sys.stderr)
        return EXIT_AGENT
    except (JafError, ValueError, FileNotFoundError) as e:
        print(f"jaf: {e}", file=sys.stderr)
        return EXIT_VALIDATION


def main():
    """
    Main entry point for the jaf script defined in pyproject.toml.
    """
    sys.exit(run())

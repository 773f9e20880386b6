"""Command-line entry point: ``analogylab {bound,cases,check,demo}``.

Exit status is 0 on success, 1 when a verification fails and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .analogy import SemanticMap, check_affordance_preserving
from .bounds import BoundConfig, run_bound_experiment, write_bound_reports
from .gridworld import CaseFixture, make_case_fixture
from .harness import (
    VARIANTS,
    EpisodeSetup,
    Pipeline,
    PipelineConfig,
    aggregate,
    check_fixture,
    episode_layout,
    evaluate,
    run_episode,
    write_eval_reports,
    write_trace,
)
from .mdp import TabularMdp
from .semantics.client import FallbackOperator, LlmOperator, RemoteEndpoint, RetryPolicy
from .semantics.operator import rule_operator

log = logging.getLogger("analogylab")


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--operator", choices=("rule", "remote", "fallback"), help="semantic operator")
    common.add_argument("--episodes", type=int, help="episodes per seed")
    common.add_argument("--seeds", type=int, help="number of evaluation seeds")
    common.add_argument("--noise", type=float, help="artifact noise rate in [0, 1]")
    common.add_argument("--endpoint", help="remote operator base URL")
    common.add_argument("--model", help="remote operator model name")
    common.add_argument("--cache", type=Path, help="remote operator cache file")
    common.add_argument("--retries", type=int, help="remote operator attempts")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="analogylab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("bound", parents=[common], help="degradation-bound experiments")
    sub.add_parser("cases", parents=[common], help="evaluate variants on the transfer cases")
    sub.add_parser("check", parents=[common], help="verify analogy certificates and value preservation")
    sub.add_parser("demo", parents=[common], help="print one traced episode")
    return parser


def _load_config(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc


def _pipeline_config(args, cfg: dict) -> PipelineConfig:
    try:
        return PipelineConfig(
            operator=args.operator or cfg.get("operator", "rule"),
            artifact_noise_rate=args.noise if args.noise is not None else cfg.get("noise", 0.0),
            rng_seed=_master_seed(args, cfg),
            episodes=args.episodes or cfg.get("episodes", 100),
            policy_mode=cfg.get("policy_mode", "greedy"),
            temperature=cfg.get("temperature", 0.1),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _master_seed(args, cfg: dict) -> int:
    return args.seed if args.seed is not None else int(cfg.get("seed", 0))


def _operator(args, cfg: dict, mode: str):
    if mode == "rule":
        return rule_operator
    remote = cfg.get("remote", {})
    url = args.endpoint or remote.get("endpoint")
    model = args.model or remote.get("model")
    if not url or not model:
        raise UsageError(f"operator mode {mode!r} needs --endpoint and --model")
    endpoint = RemoteEndpoint(url, model, remote.get("path", "/v1/chat/completions"), remote.get("key_env", "ASPECT_LLM_KEY"))
    policy = RetryPolicy(attempts=args.retries or remote.get("retries", 3))
    op = LlmOperator(endpoint, policy, cache_path=args.cache or remote.get("cache"))
    return op if mode == "remote" else FallbackOperator(op)


def _fixtures(cfg: dict, seed: int) -> list[CaseFixture]:
    if "case_id" in cfg:
        return [CaseFixture.from_dict(cfg)]
    if "fixture" in cfg:
        return [CaseFixture.load(cfg["fixture"])]
    cases = cfg.get("cases", [cfg["case"]] if "case" in cfg else [1, 2, 3])
    size = dict(width=cfg.get("width", 5), height=cfg.get("height", 5))
    try:
        return [make_case_fixture(int(c), cfg.get("vocab"), seed, **size) for c in cases]
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_bound(args, cfg: dict) -> int:
    config = BoundConfig.from_dict(cfg)
    if args.seed is not None:
        config.master_seed = args.seed
    reports = run_bound_experiment(config)
    failures = [r for r in reports if not r.holds]
    out = args.out or Path("out/bound")
    csv_path, _ = write_bound_reports(reports, out)
    print(f"{len(reports)} trials, {len(failures)} bound violations -> {csv_path}")
    for r in failures[:20]:
        print(f"  VIOLATION instance={r.instance_id} rate={r.rate} seed={r.seed} gap={r.gap!r} bound={r.bound!r}")
    return 1 if failures else 0


def cmd_cases(args, cfg: dict) -> int:
    seed = _master_seed(args, cfg)
    config = _pipeline_config(args, cfg)
    operator = _operator(args, cfg, config.operator)
    seeds = [seed + i for i in range(args.seeds or int(cfg.get("seeds", 5)))]
    variants = cfg.get("variants", list(VARIANTS))
    if any(v not in VARIANTS for v in variants):
        raise UsageError(f"variants must be drawn from {VARIANTS}")
    out = args.out or Path("out/cases")
    sink = None
    if cfg.get("write_traces"):
        out.mkdir(parents=True, exist_ok=True)
        sink = lambda name, record: write_trace(record, out / f"trace-{name}.jsonl")
    reports = []
    for fixture in _fixtures(cfg, seed):
        reports += evaluate(fixture, variants, config.episodes, seeds, config, operator, sink)
    meta = {"seeds": seeds, "variants": variants, "pipeline": config.__dict__}
    csv_path, _ = write_eval_reports(reports, out, meta)
    for row in aggregate(reports):
        print(
            f"case {row['case']} {row['variant']:<16} target {row['target_picked_mean']:6.2f} "
            f"+- {row['target_picked_std']:.2f}  distractor {row['distractor_picked_mean']:6.2f}  "
            f"timeout {row['timeouts_mean']:6.2f}  errors {row['pipeline_errors_mean']:.2f}"
        )
    print(f"-> {csv_path}")
    return 0 if all(r.balanced for r in reports) else 1


def cmd_check(args, cfg: dict) -> int:
    ok = True
    if "source_mdp" in cfg:
        source = TabularMdp.from_json(Path(cfg["source_mdp"]).read_text())
        target = TabularMdp.from_json(Path(cfg["target_mdp"]).read_text())
        phi = SemanticMap.from_json(Path(cfg["map"]).read_text())
        cert = check_affordance_preserving(source, target, phi, tol=cfg.get("tol", 1e-9))
        print(cert.summary())
        for v in cert.reward_violations[:20]:
            print(f"  reward violation {v}")
        for v in cert.transition_violations[:20]:
            print(f"  transition violation {v}")
        if args.out:
            args.out.mkdir(parents=True, exist_ok=True)
            (args.out / "certificate.json").write_text(cert.to_json())
        return 0 if cert.valid else 1
    for fixture in _fixtures(cfg, _master_seed(args, cfg)):
        result = check_fixture(fixture)
        status = "ok" if result.ok else "FAILED"
        print(
            f"case {result.case_id}: {status}; {result.certificate_summary}; value gap {result.value_gap:.3g}; "
            f"pipeline mismatches {result.pipeline_mismatches}"
        )
        if not result.ok:
            for line in result.details[1:]:
                print(f"  {line}")
        ok &= result.ok
    return 0 if ok else 1


def cmd_demo(args, cfg: dict) -> int:
    seed = _master_seed(args, cfg)
    config = _pipeline_config(args, cfg)
    operator = _operator(args, cfg, config.operator)
    fixture = _fixtures({**cfg, "cases": [cfg.get("case", 1)]} if "cases" not in cfg else cfg, seed)[0]
    laid_out, start = episode_layout(fixture, seed, 0)
    setup = EpisodeSetup.build(laid_out, config)
    record = run_episode(Pipeline(setup, cfg.get("variant", "remap"), config, operator), start, seed, 0)
    for step in record.trace:
        print(f"--- step {step['step']}")
        print(setup.target.ascii(setup.target.index(tuple(step["state"]))))
        print(f"caption:  {step['caption']}")
        print(f"remapped: {step['remapped_caption']}")
        print(f"imagined: {step['imagined_scene']} (agent cell {step['imagined_state'][0]})")
        print(f"action:   {step['action']}")
    print(f"outcome: {record.outcome} after {record.steps} steps")
    if record.error:
        print(f"error: {record.error}")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        write_trace(record, args.out / "trace-0.jsonl")
    return 0


COMMANDS = {"bound": cmd_bound, "cases": cmd_cases, "check": cmd_check, "demo": cmd_demo}


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, _load_config(args.config))
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"analogylab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

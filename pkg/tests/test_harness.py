import json

import numpy as np
import pytest

from analogylab.analogy import induced_policy
from analogylab.gridworld import ACTIONS, PICK, make_case_fixture
from analogylab.harness import (
    REPORT_COLUMNS,
    EpisodeSetup,
    EvalReport,
    NoiseChannel,
    Pipeline,
    PipelineConfig,
    aggregate,
    check_fixture,
    episode_layout,
    evaluate,
    imagine_state,
    replay,
    reports_to_csv,
    run_episode,
    solve_source,
    write_eval_reports,
    write_trace,
    zero_shot_step,
)
from analogylab.mdp import ContractViolation, FactoredState, evaluate_policy, q_from_v, softmax_policy, value_iteration
from analogylab.semantics import OperatorResult, rule_operator

TRACE_FIELDS = {"state", "caption", "remapped_caption", "imagined_state", "action"}


def setup_for(case, seed=0, config=PipelineConfig()):
    return EpisodeSetup.build(make_case_fixture(case, rng_seed=seed), config)


# -- imagination -------------------------------------------------------------


@pytest.mark.parametrize("case", [1, 2, 3])
@pytest.mark.parametrize("seed", range(3))
def test_imagination_equals_h_on_every_state(case, seed):
    st = setup_for(case, seed)
    for s in st.target.nonterminal_states():
        imag = imagine_state(st.target.state(s), st.target, st.context, rule_operator, st.source)
        assert st.source.index(imag.state) == st.h[s]


@pytest.mark.parametrize("case", [1, 2, 3])
def test_remap_value_equals_oracle_value(case):
    st = setup_for(case)
    pipe = Pipeline(st, "remap")
    psi = np.array(
        [st.source.index(pipe.perceive(s).state) if not st.target.is_terminal(s) else st.h[s] for s in range(st.target.mdp.num_states)]
    )
    v, _ = value_iteration(st.source.mdp)
    pi_s = softmax_policy(q_from_v(st.source.mdp, v), 0.5)
    v_psi = evaluate_policy(st.target.mdp, induced_policy(pi_s, psi))
    v_h = evaluate_policy(st.target.mdp, induced_policy(pi_s, st.h))
    assert np.max(np.abs(v_psi - v_h)) <= 1e-6


def test_reward_state_becomes_source_reward():
    st = setup_for(1)
    u = st.target.u_of(*st.fixture.target_spec.slots[0])
    state = FactoredState(u, st.target.actual_v)
    imag = Pipeline(st, "remap").perceive(st.target.index(state))
    assert st.source.vocab[imag.state.v] == "red ball | green ball"
    assert imag.state.u == u and imag.imagined
    assert zero_shot_step(st.target.index(state), Pipeline(st, "remap")) == PICK


def test_source_aligned_state_is_a_fixed_point():
    st = setup_for(1)
    state = FactoredState(0, st.target.empty_v)
    imag = Pipeline(st, "remap").perceive(st.target.index(state))
    assert not imag.imagined and imag.caption == imag.remapped
    assert imag.state == FactoredState(0, st.source.empty_v)


def test_full_noise_empties_every_scene():
    st = setup_for(2)
    pipe = Pipeline(st, "remap", PipelineConfig(artifact_noise_rate=1.0))
    for s in st.target.nonterminal_states()[:50]:
        imag = pipe.perceive(s)
        assert imag.dropped and st.source.vocab[imag.state.v] == "empty"


def test_noise_draws_are_nested_and_deterministic():
    lo, hi = NoiseChannel(0.2, (3,)), NoiseChannel(0.6, (3,))
    keys = [(e, t, s) for e in range(5) for t in range(5) for s in range(8)]
    drops_lo = {k for k in keys if lo.drops(*k)}
    drops_hi = {k for k in keys if hi.drops(*k)}
    assert drops_lo <= drops_hi
    assert drops_lo == {k for k in keys if NoiseChannel(0.2, (3,)).drops(*k)}


def test_operator_failure_becomes_pipeline_error():
    def broken(ctx):
        return OperatorResult(imagine=True, description="A dragon is somewhere.")

    st = setup_for(1)
    rec = run_episode(Pipeline(st, "remap", operator=broken), st.target.start_states()[0])
    assert rec.outcome == "pipeline_error" and "CaptionParseError" in rec.error


# -- action selection ----------------------------------------------------------


def test_uniform_policy_ignores_imagination():
    st = setup_for(1, config=PipelineConfig(policy_mode="softmax"))
    st.source_policy = np.full_like(st.source_policy, 1 / len(ACTIONS))
    pipe = Pipeline(st, "remap", PipelineConfig(policy_mode="softmax"))
    counts = np.zeros(len(ACTIONS))
    rng = np.random.default_rng(0)
    for _ in range(5000):
        counts[zero_shot_step(st.target.start_states()[0], pipe, rng)] += 1
    assert np.all(np.abs(counts / 5000 - 0.2) < 0.03)


def test_sampled_action_deterministic_per_seed():
    cfg = PipelineConfig(policy_mode="softmax", temperature=0.5)
    st = setup_for(3, config=cfg)
    pipe = Pipeline(st, "remap", cfg)
    s = st.target.start_states()[3]
    a = [zero_shot_step(s, pipe, np.random.default_rng(11)) for _ in range(5)]
    assert len(set(a)) == 1


def test_softmax_needs_rng():
    st = setup_for(1, config=PipelineConfig(policy_mode="softmax"))
    with pytest.raises(ContractViolation):
        Pipeline(st, "remap", PipelineConfig(policy_mode="softmax")).act(FactoredState(0, 0))


def test_cached_source_policy_is_read_only():
    policy = solve_source(make_case_fixture(1).source_spec)
    with pytest.raises(ValueError):
        policy[0, 0] = 0.5


# -- episodes ----------------------------------------------------------------


@pytest.mark.parametrize("case", [1, 2, 3])
def test_oracle_episode_picks_target(case):
    fixture = make_case_fixture(case)
    for ep in range(5):
        laid_out, start = episode_layout(fixture, 0, ep)
        rec = run_episode(Pipeline(EpisodeSetup.build(laid_out), "oracle-h"), start, 0, ep)
        assert rec.outcome == "target_picked"


def test_source_direct_case_3_chases_old_reward():
    reports = evaluate(make_case_fixture(3), ["source-direct"], 20, [0, 1])
    assert all(r.distractor_picked + r.timeouts > r.target_picked for r in reports)


def test_full_noise_times_out():
    cfg = PipelineConfig(artifact_noise_rate=1.0)
    st = setup_for(1, config=cfg)
    rec = run_episode(Pipeline(st, "remap", cfg), st.target.start_states()[0])
    assert rec.outcome == "timeout" and rec.steps == st.target.spec.max_steps


def test_trace_complete_and_replayable(tmp_path):
    fixture = make_case_fixture(2)
    for ep in range(10):
        laid_out, start = episode_layout(fixture, 1, ep)
        st = EpisodeSetup.build(laid_out)
        for variant in ("remap", "source-direct"):
            rec = run_episode(Pipeline(st, variant), start, 1, ep)
            assert len(rec.trace) == len(rec.actions) == rec.steps
            for step in rec.trace:
                assert TRACE_FIELDS <= set(step)
            assert replay(st.target, start, rec.actions) == rec.outcome
    path = tmp_path / "trace-0.jsonl"
    write_trace(rec, path)
    lines = path.read_text().splitlines()
    assert len(lines) == rec.steps
    assert TRACE_FIELDS <= set(json.loads(lines[0]))


def test_unknown_variant():
    with pytest.raises(ContractViolation):
        Pipeline(setup_for(1), "magic")


@pytest.mark.parametrize("kwargs", [dict(artifact_noise_rate=1.5), dict(episodes=0), dict(operator="psychic")])
def test_config_validation(kwargs):
    with pytest.raises(ContractViolation):
        PipelineConfig(**kwargs)


# -- evaluation ----------------------------------------------------------------


def test_report_shape_and_accounting():
    reports = evaluate(make_case_fixture(1), episodes=10, seeds=range(5))
    assert len(reports) == 15
    assert all(r.balanced for r in reports)
    rows = aggregate(reports)
    assert [r["variant"] for r in rows] == ["source-direct", "remap-rule", "oracle-h"]
    assert all(r["seeds"] == 5 for r in rows)


@pytest.mark.parametrize("case", [1, 2, 3])
def test_remap_equals_oracle_without_noise(case):
    reports = evaluate(make_case_fixture(case), ["remap", "oracle-h"], 20, range(3))
    by = {(r.variant, r.seed): r for r in reports}
    for seed in range(3):
        assert by[("remap-rule", seed)].target_picked == by[("oracle-h", seed)].target_picked == 20


def test_degradation_monotone_in_noise():
    fixture = make_case_fixture(1)
    means = []
    for rate in (0.0, 0.25, 0.5, 1.0):
        reports = evaluate(fixture, ["remap"], 20, range(5), PipelineConfig(artifact_noise_rate=rate))
        means.append(np.mean([r.target_picked for r in reports]))
    assert all(a >= b for a, b in zip(means, means[1:]))
    assert means[0] == 20 and means[-1] == 0


def test_evaluation_is_deterministic(tmp_path):
    a = reports_to_csv(evaluate(make_case_fixture(2), episodes=8, seeds=[3, 4]))
    b = reports_to_csv(evaluate(make_case_fixture(2), episodes=8, seeds=[3, 4]))
    assert a == b
    assert a.splitlines()[0] == ",".join(REPORT_COLUMNS)


def test_adding_a_variant_does_not_shift_streams():
    cfg = PipelineConfig(policy_mode="softmax", temperature=0.3)
    alone = evaluate(make_case_fixture(1), ["remap"], 10, [0], cfg)
    together = evaluate(make_case_fixture(1), ["source-direct", "remap"], 10, [0], cfg)
    assert alone[0] == together[1]


def test_report_files(tmp_path):
    reports = evaluate(make_case_fixture(1), episodes=4, seeds=[0])
    csv_path, json_path = write_eval_reports(reports, tmp_path, {"seed": 0})
    assert csv_path.name == "report.csv"
    doc = json.loads(json_path.read_text())
    assert doc["config"] == {"seed": 0}
    assert len(doc["reports"]) == 3 and len(doc["aggregates"]) == 3


def test_eval_report_counts_errors_separately():
    r = EvalReport(1, "remap-remote", 0, 3)
    for outcome in ("target_picked", "pipeline_error", "timeout"):
        r.add(outcome)
    assert (r.target_picked, r.pipeline_errors, r.timeouts) == (1, 1, 1) and r.balanced


@pytest.mark.parametrize("case", [1, 2, 3])
def test_check_fixture_passes(case):
    result = check_fixture(make_case_fixture(case, rng_seed=7))
    assert result.ok, result.details

import csv
import io
import json
import math

import numpy as np
import pytest

from analogylab.analogy import induced_policy
from analogylab.bounds import (
    BOUND_SLACK,
    BoundConfig,
    BoundReport,
    degradation_bound,
    empirical_gap,
    make_corrupted_psi,
    make_instance,
    measure_epsilon,
    reports_to_csv,
    run_bound_experiment,
    run_trial,
    write_bound_reports,
)
from analogylab.mdp import (
    ContractViolation,
    StateEmbedding,
    TabularMdp,
    estimate_lipschitz,
    q_from_v,
    q_max,
)

from conftest import linear_solve

H = np.arange(12)  # identity lift on a 4x3 factored space


# -- corruption --------------------------------------------------------------


def test_rate_zero_is_h():
    psi = make_corrupted_psi(H, 3, 0.0, 5)
    assert np.array_equal(psi.psi, H) and psi.corrupted == ()


def test_rate_one_changes_every_semantic():
    psi = make_corrupted_psi(H, 3, 1.0, 5)
    u_h, w_h = np.divmod(H, 3)
    u_p, w_p = np.divmod(psi.psi, 3)
    assert np.array_equal(u_h, u_p)
    assert np.all(w_h != w_p)
    assert psi.corrupted == tuple(range(12))


def test_corruption_is_deterministic_and_recorded():
    a = make_corrupted_psi(H, 3, 0.3, 7)
    b = make_corrupted_psi(H, 3, 0.3, 7)
    assert np.array_equal(a.psi, b.psi) and a.corrupted == b.corrupted
    assert a.corrupted == tuple(np.flatnonzero(a.psi != H))


def test_corruption_sets_nest_as_rate_grows():
    sets = [set(make_corrupted_psi(np.arange(200), 4, r, 3).corrupted) for r in (0.1, 0.3, 0.7)]
    assert sets[0] <= sets[1] <= sets[2]


def test_rate_outside_unit_interval():
    with pytest.raises(ContractViolation):
        make_corrupted_psi(H, 3, 1.5, 0)


# -- epsilon and the bound expression ----------------------------------------


def test_epsilon_values():
    emb = StateEmbedding(4, 3)
    assert measure_epsilon(H, H, emb) == 0.0
    one = H.copy()
    one[4] = 5  # (1,1) -> (1,2)
    assert measure_epsilon(one, H, emb) == pytest.approx(math.sqrt(2))
    assert measure_epsilon(make_corrupted_psi(H, 3, 1.0, 0), H, emb) == pytest.approx(math.sqrt(2))


def test_epsilon_domain_mismatch():
    with pytest.raises(ContractViolation):
        measure_epsilon(H[:5], H, StateEmbedding(4, 3))


def test_bound_expression():
    assert degradation_bound(0.5, 10.0, 0.9, 0.2) == pytest.approx(20.0)
    assert degradation_bound(0.5, 10.0, 0.9, 0.0) == 0.0
    assert degradation_bound(0.3, 2.0, 0.7, 0.8) == pytest.approx(2 * degradation_bound(0.3, 2.0, 0.7, 0.4))


def test_bound_monotone_in_epsilon_and_qmax():
    eps = np.linspace(0, 2, 9)
    qs = np.linspace(0, 5, 9)
    b_eps = [degradation_bound(0.4, 3.0, 0.8, e) for e in eps]
    b_q = [degradation_bound(0.4, q, 0.8, 1.0) for q in qs]
    assert all(x <= y for x, y in zip(b_eps, b_eps[1:]))
    assert all(x <= y for x, y in zip(b_q, b_q[1:]))


def test_bound_rejects_bad_gamma():
    with pytest.raises(ContractViolation):
        degradation_bound(1.0, 1.0, 1.0, 1.0)


# -- empirical gap -------------------------------------------------------------


def test_gap_zero_for_identical_policies():
    cfg = BoundConfig(instances=1)
    inst = make_instance(cfg, 0)
    pi = induced_policy(inst.source_policy, inst.h)
    assert empirical_gap(inst.target, pi, pi) <= 2e-10


def test_gap_ignores_value_irrelevant_corruption():
    # state 2 is unreachable, absorbing and unrewarded
    T = np.zeros((3, 2, 3))
    T[0, :, 1] = 1.0
    T[1, :, 1] = 1.0
    T[2, :, 2] = 1.0
    R = np.zeros((3, 2))
    R[0, 0] = 1.0
    mdp = TabularMdp(1, ("a", "b", "c"), 2, T, R, 0.9)
    pi_h = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    pi_psi = pi_h.copy()
    pi_psi[2] = [0.0, 1.0]
    assert empirical_gap(mdp, pi_psi, pi_h) <= 2e-10


def test_gap_two_state_closed_form():
    # state 0: action 0 earns 1 and stays, action 1 earns 0 and stays; state 1 absorbing, zero reward
    T = np.zeros((2, 2, 2))
    T[0, :, 0] = 1.0
    T[1, :, 1] = 1.0
    R = np.array([[1.0, 0.0], [0.0, 0.0]])
    mdp = TabularMdp(1, ("a", "b"), 2, T, R, 0.8)
    pi_h = np.array([[1.0, 0.0], [1.0, 0.0]])
    pi_psi = np.array([[0.25, 0.75], [1.0, 0.0]])
    # V_h(0) = 1/(1-0.8) = 5, V_psi(0) = 0.25/(1-0.8) = 1.25
    assert empirical_gap(mdp, pi_psi, pi_h) == pytest.approx(3.75, abs=1e-9)


# -- experiment ----------------------------------------------------------------


def small_config(**kw):
    return BoundConfig(instances=4, structural=(2, 6), rates=(0.0, 0.3, 1.0), seeds=(0, 1), **kw)


def test_rate_zero_reports_collapse():
    for r in run_bound_experiment(small_config()):
        if r.rate == 0.0:
            assert r.epsilon == 0.0 and r.bound == 0.0
            assert r.gap <= 2 * 1e-10
            assert r.holds


def test_default_sweep_holds_everywhere():
    reports = run_bound_experiment(BoundConfig())
    assert len(reports) == 20 * 4 * 3
    assert all(r.holds for r in reports)
    assert any(r.gap > 0 for r in reports)


def test_report_fields_recompute_from_serialized_instance():
    cfg = small_config()
    inst = make_instance(cfg, 2)
    report = run_trial(inst, 0.3, 1, cfg.master_seed, cfg.eval_tol)
    source = TabularMdp.from_json(inst.source.to_json())
    target = TabularMdp.from_json(inst.target.to_json())
    emb = StateEmbedding.for_mdp(source)
    psi = make_corrupted_psi(inst.h, source.num_semantic, 0.3, (cfg.master_seed, 2, 1))
    pi_h = induced_policy(inst.source_policy, inst.h)
    pi_psi = induced_policy(inst.source_policy, psi.psi)
    assert report.l_tv == estimate_lipschitz(inst.source_policy, emb)
    # Q_max of pi_S o h on the target, via the linear-solve oracle
    assert report.q_max == pytest.approx(q_max(q_from_v(target, linear_solve(target, pi_h))), abs=1e-8)
    assert report.epsilon == measure_epsilon(psi, inst.h, emb)
    assert report.bound == 2 * report.l_tv * report.q_max * report.epsilon / (1 - report.gamma)
    exact_gap = np.max(np.abs(linear_solve(target, pi_psi) - linear_solve(target, pi_h)))
    assert report.gap == pytest.approx(exact_gap, abs=1e-8)


def test_holds_uses_slack():
    base = dict(instance_id=0, rate=0.1, seed=0, epsilon=1.0, l_tv=1.0, q_max=1.0, gamma=0.5)
    assert BoundReport(**base, bound=1.0, gap=1.0 + 0.5 * BOUND_SLACK).holds
    assert not BoundReport(**base, bound=1.0, gap=1.0 + 2 * BOUND_SLACK).holds


def test_experiment_is_deterministic():
    a = reports_to_csv(run_bound_experiment(small_config()))
    b = reports_to_csv(run_bound_experiment(small_config()))
    assert a == b


def test_failures_name_the_instance():
    with pytest.raises(RuntimeError, match="instance 0"):
        run_bound_experiment(BoundConfig(instances=1, temperature=-1.0))


def test_report_files(tmp_path):
    reports = run_bound_experiment(small_config())
    csv_path, json_path = write_bound_reports(reports, tmp_path)
    rows = list(csv.DictReader(io.StringIO(csv_path.read_text())))
    assert list(rows[0]) == ["instance_id", "rate", "seed", "epsilon", "l_tv", "q_max", "gamma", "bound", "gap", "holds"]
    assert len(rows) == len(reports)
    assert float(rows[5]["gap"]) == reports[5].gap
    doc = json.loads(json_path.read_text())
    assert doc["trials"] == len(reports) and doc["violations"] == 0


def test_config_from_dict_and_file(tmp_path):
    path = tmp_path / "bound.json"
    path.write_text(json.dumps({"instances": 2, "rates": [0, 1], "note": "x"}))
    cfg = BoundConfig.load(path)
    assert cfg.instances == 2 and cfg.rates == (0, 1) and cfg.extra == {"note": "x"}

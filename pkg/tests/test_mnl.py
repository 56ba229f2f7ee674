import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chi2

from modechoice import mnl
from modechoice.datamodel import PlanOption, QueryRecord, TripSession
from modechoice.errors import NumericError
from modechoice.synthgen import SynthConfig, generate
from oracles import central_difference, mnl_loglik_loop


def _session(plans, label=0, sid="s"):
    return TripSession(QueryRecord(sid, None, 0, (0.0, 0.0), (0.1, 0.1)), tuple(plans), label)


@pytest.fixture(scope="module")
def fit_sessions():
    return generate(SynthConfig(seed=21, n_sessions=6000, n_profiles=20, n_pois=200)).sessions


def test_zero_beta_gives_zero_utilities(small_sessions):
    spec = mnl.get_spec("asc+distance+cost")
    u = mnl.utilities(spec, np.zeros(len(spec.parameters())), small_sessions[0])
    assert set(u.values()) == {0.0}
    assert list(u) == list(small_sessions[0].modes)


def test_shared_cost_arithmetic():
    spec = mnl.UtilitySpec("cost", (mnl.Term("cost", shared=True),))
    s = _session([PlanOption(1, 1000, 100, 100, 1), PlanOption(4, 1000, 100, 300, 2)])
    assert mnl.utilities(spec, [-0.01], s) == {1: pytest.approx(-1.0), 4: pytest.approx(-3.0)}


def test_baseline_mode_has_no_distance_term():
    spec = mnl.UtilitySpec("d", (mnl.Term("distance"),))
    assert "Distance_bus+taxi" not in spec.parameter_names
    s = _session([PlanOption(8, 5000, 100, 900, 1), PlanOption(1, 5000, 100, 200, 2)])
    beta = np.full(len(spec.parameters()), 1e-4)
    u = mnl.utilities(spec, beta, s)
    assert u[8] == 0.0 and u[1] == pytest.approx(0.5)


def test_choice_probability_closed_forms():
    asc = mnl.UtilitySpec("asc", (), (1, 2, 3))
    two = _session([PlanOption(1, 1, 1, 1, 1), PlanOption(2, 1, 1, 1, 2)])
    assert mnl.choice_probabilities(asc, [0.0, 0.0, 0.0], two) == {1: 0.5, 2: 0.5}
    d = 0.7
    p = mnl.choice_probabilities(asc, [d, 0.0, 0.0], two)
    assert p[1] == pytest.approx(1.0 / (1.0 + math.exp(-d)), abs=1e-15)
    three = _session([PlanOption(m, 1, 1, 1, m) for m in (1, 2, 3)])
    p = mnl.choice_probabilities(asc, [0.0, math.log(2), math.log(4)], three)
    assert [p[1], p[2], p[3]] == pytest.approx([1 / 7, 2 / 7, 4 / 7], abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(-100, 100))
def test_probabilities_shift_invariant(beta, shift):
    asc = mnl.UtilitySpec("asc", (), (1, 2, 3))
    shifted = mnl.UtilitySpec("asc", (), (1, 2, 3), baseline=4)
    s = _session([PlanOption(m, 1, 1, 1, m) for m in (1, 2, 3)])
    p = mnl.choice_probabilities(asc, beta, s)
    q = mnl.choice_probabilities(shifted, [b + shift for b in beta], s)
    assert sum(p.values()) == pytest.approx(1.0, abs=1e-12)
    assert [p[m] for m in (1, 2, 3)] == pytest.approx([q[m] for m in (1, 2, 3)], abs=1e-9)


def test_extreme_utilities_stay_finite():
    spec = mnl.get_spec("asc")
    s = _session([PlanOption(1, 1, 1, 1, 1), PlanOption(2, 1, 1, 1, 2)], label=1)
    beta = np.zeros(len(spec.parameters()))
    beta[1] = 2000.0  # metro utility dwarfs bus
    ll = mnl.log_likelihood(spec, beta, [s], derivatives=False)
    assert ll == pytest.approx(-2000.0)


def test_null_log_likelihood(small_sessions):
    spec = mnl.get_spec("asc+distance+cost")
    ll = mnl.log_likelihood(spec, np.zeros(len(spec.parameters())), small_sessions, derivatives=False)
    expected = sum(math.log(1.0 / len(s.modes)) for s in small_sessions if s.label)
    assert ll == pytest.approx(expected, abs=1e-9)
    assert mnl.null_log_likelihood(small_sessions) == pytest.approx(expected, abs=1e-9)


def test_log_likelihood_matches_loop_oracle(small_sessions):
    spec = mnl.get_spec("asc+time+cost")
    params = spec.parameters()
    rng = np.random.default_rng(0)
    beta = rng.normal(0, 1, len(params)) * np.array([1 if v == "asc" else 1e-4 for _, v, _ in params])
    sets, chosen = [], []
    for s in small_sessions:
        if not s.label:
            continue
        sets.append({p.mode: [(1.0 if var == "asc" else getattr(p, mnl.VARIABLES[var])) if p.mode in modes else 0.0
                              for _, var, modes in params] for p in s.plans})
        chosen.append(s.label)
    ll = mnl.log_likelihood(spec, beta, small_sessions, derivatives=False)
    assert ll == pytest.approx(mnl_loglik_loop(sets, chosen, beta), rel=1e-12)


def _fd_check(spec, sessions, beta, rng):
    data = mnl.ChoiceData.from_sessions(spec, sessions)
    scale = np.abs(data.x).max(axis=0)
    step = 1e-4 / np.where(scale > 0, scale, 1.0)
    ll, grad, hess = mnl.log_likelihood(spec, beta, sessions, data)
    f = lambda b: mnl.log_likelihood(spec, np.array(b), sessions, data, derivatives=False)
    g_fd = np.array(central_difference(f, list(beta), step))
    h_fd = np.array([central_difference(lambda b, j=j: mnl.log_likelihood(spec, np.array(b), sessions, data)[1][j],
                                        list(beta), step) for j in range(len(beta))])
    return grad, g_fd, hess, h_fd, step


def _rel(a, b, scale):
    return np.max(np.abs(a - b) / scale)


def test_gradient_and_hessian_finite_differences(small_sessions):
    spec = mnl.get_spec("asc+distance+cost")
    rng = np.random.default_rng(1)
    params = spec.parameters()
    mag = np.array([0.5 if v == "asc" else 5e-5 for _, v, _ in params])
    for _ in range(3):
        beta = rng.normal(0, 1, len(params)) * mag
        grad, g_fd, hess, h_fd, _ = _fd_check(spec, small_sessions, beta, rng)
        assert _rel(grad, g_fd, np.maximum(np.abs(g_fd), np.abs(g_fd).max() * 1e-3)) < 1e-6
        assert _rel(hess, h_fd, np.abs(h_fd).max()) < 1e-5
        assert np.allclose(hess, hess.T)


def test_fit_converges_with_valid_inference(fit_sessions):
    spec = mnl.get_spec("asc+distance+cost")
    m = mnl.fit(spec, fit_sessions)
    assert m.converged and m.gradient_norm <= 1e-6
    assert np.allclose(m.covariance, m.covariance.T, atol=1e-12)
    assert np.linalg.eigvalsh(m.covariance).min() > -1e-8
    assert np.all(m.std_errors > 0)
    assert np.all(np.diff(m.ll_trace) >= -1e-9)
    assert m.n_obs == sum(1 for s in fit_sessions if s.label)
    assert m.p_values == pytest.approx(2 * (1 - 0.5 * (1 + np.vectorize(math.erf)(np.abs(m.z_values) / math.sqrt(2)))), abs=1e-12)


def test_fitted_ll_beats_planted_beta(fit_sessions):
    from modechoice.synthgen import DEFAULT_TRUE_BETA
    spec = mnl.get_spec("asc+distance+cost")
    m = mnl.fit(spec, fit_sessions)
    planted = np.array([DEFAULT_TRUE_BETA[n] for n in m.parameter_names])
    assert m.log_likelihood >= mnl.log_likelihood(spec, planted, fit_sessions, derivatives=False)


def test_no_click_sessions_do_not_affect_fit(fit_sessions):
    spec = mnl.get_spec("distance+cost")
    clicked = [s for s in fit_sessions if s.label]
    a, b = mnl.fit(spec, fit_sessions), mnl.fit(spec, clicked)
    assert np.array_equal(a.beta, b.beta) and a.log_likelihood == b.log_likelihood


def test_singular_hessian_names_terms():
    sessions = [_session([PlanOption(1, 1000 + i, 100, 200, 1), PlanOption(2, 900, 100, 300, 2)], label=1 + i % 2,
                         sid=f"s{i}") for i in range(30)]
    spec = mnl.UtilitySpec("d", (mnl.Term("distance", modes=(1, 4)),))
    with pytest.raises(NumericError, match="Distance_taxi"):
        mnl.fit(spec, sessions)


def test_fit_without_labels_fails():
    with pytest.raises(NumericError):
        mnl.fit(mnl.get_spec("asc"), [_session([PlanOption(1, 1, 1, 1, 1)])])


def test_nonconvergence_is_reported(fit_sessions):
    m = mnl.fit(mnl.get_spec("asc+distance+cost"), fit_sessions, max_iter=1)
    assert not m.converged and m.iterations == 1


def test_compare_models_monotone_and_flags(fit_sessions):
    specs = mnl.comparison_specs()
    rows = mnl.compare_models(specs, fit_sessions)
    assert [r.name for r in rows] == [s.name for s in specs]
    ll = {r.name: r.log_likelihood for r in rows}
    assert ll["null"] == pytest.approx(mnl.null_log_likelihood(fit_sessions), abs=1e-9)
    for sub, sup in mnl.nested_pairs(specs):
        assert ll[sup] >= ll[sub] - 1e-6, (sub, sup)
    assert all(r.converged for r in rows)
    assert sum(r.best for r in rows) == 1
    assert max(rows, key=lambda r: r.log_likelihood).best


def test_compare_models_prepends_reference_rows_and_marks_failures():
    sessions = [_session([PlanOption(1, 1000 + i, 100, 200, 1), PlanOption(2, 900, 100, 300, 2)], label=1 + i % 2,
                         sid=f"s{i}") for i in range(30)]
    bad = mnl.UtilitySpec("bad", (mnl.Term("distance", modes=(1, 4)),))
    rows = mnl.compare_models([bad], sessions)
    assert [r.name for r in rows] == ["null", "asc", "bad"]
    assert rows[2].failed and "Distance_taxi" in rows[2].error
    assert not rows[0].failed


def test_nested_pairs():
    pairs = set(mnl.nested_pairs(mnl.comparison_specs()))
    assert ("asc", "asc+time") in pairs and ("distance+cost", "asc+distance+cost") in pairs
    assert ("asc+time", "asc+distance") not in pairs
    assert ("null", "asc") in pairs


def test_distance_cost_identified_without_intercepts():
    zero_asc = {k: (0.0 if k.startswith("ASC_") else v)
                for k, v in SynthConfig().true_beta.items()}
    sessions = generate(SynthConfig(seed=8, n_sessions=8000, n_profiles=10, n_pois=100,
                                    true_beta=zero_asc)).sessions
    rows = {r.name: r for r in mnl.compare_models(mnl.comparison_specs(), sessions)}
    dc = rows["distance+cost"].log_likelihood
    supersets = {sup for sub, sup in mnl.nested_pairs(mnl.comparison_specs()) if sub == "distance+cost"}
    for name, r in rows.items():
        if name != "distance+cost" and name not in supersets:
            assert dc > r.log_likelihood, name
    lr = 2 * (rows["asc+distance+cost"].log_likelihood - dc)
    assert lr < chi2.ppf(0.999, df=10)


def test_coefficient_csv(tmp_path, fit_sessions):
    m = mnl.fit(mnl.get_spec("distance+cost"), fit_sessions)
    m.write_csv(tmp_path / "c.csv")
    rows = list(csv.reader(open(tmp_path / "c.csv")))
    assert rows[0] == ["Variable", "Coefficient", "Std. Err.", "z", "p>|z|"]
    assert [r[0] for r in rows[1:]] == m.parameter_names
    assert rows[-1][0] == "Cost_all_mode"
    assert float(rows[-1][1]) == pytest.approx(m.coefficient("Cost_all_mode"), rel=1e-6)
    mnl.write_comparison_csv(mnl.compare_models([mnl.get_spec("asc")], fit_sessions), tmp_path / "t.csv")
    assert open(tmp_path / "t.csv").readline().startswith("Variables,")

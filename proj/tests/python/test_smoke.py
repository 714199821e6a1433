import json

import numpy as np
import pytest


def test_scm_roundtrip_and_json(rr):
    scm = rr.Scm.builtin("income-savings")
    x = np.array([0.3, -1.2])
    np.testing.assert_allclose(scm.reconstruct(scm.abduct(x)), x, atol=1e-12)
    again = rr.Scm.from_json(scm.to_json())
    assert again.feature_names == scm.feature_names
    assert again.parents == scm.parents
    np.testing.assert_allclose(again.abduct(x), scm.abduct(x), atol=1e-15)


def test_interventional_jacobian_matches_differences(rr):
    scm = rr.Scm.builtin("quadratic")
    n = scm.size
    x = np.linspace(-0.5, 0.5, n)
    action = rr.RecourseAction([0], np.array([0.4]))
    jac = scm.interventional_jacobian(x, action)
    h = 1e-6
    fd = np.zeros((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        fd[:, j] = (scm.apply_action_to_perturbed(x, e, action) - scm.apply_action_to_perturbed(x, -e, action)) / (2 * h)
    np.testing.assert_allclose(jac, fd, atol=1e-6)


def test_linear_robust_recourse_is_exactly_epsilon_robust(rr):
    scm = rr.Scm.builtin("income-savings")
    w = np.array([1.0, 2.0])
    clf = rr.Classifier.linear(w, -1.0)
    x = np.array([-0.5, -0.5])
    assert not clf.decide(x)
    feas = rr.FeasibilitySpec.all_free(2)
    eps = 0.2
    res = rr.generate_recourse(clf, scm, x, feas, epsilon=eps)
    assert res.found
    cf = scm.counterfactual_hard(x, res.action)
    assert w @ cf - 1.0 >= -1e-12
    assert clf.logit(cf) == pytest.approx(w @ cf - 1.0, abs=1e-12)
    dist = rr.analytic_min_invalidation(clf, scm, x, res.action)
    assert dist >= eps - 1e-9
    if res.tight:
        assert dist == pytest.approx(eps, rel=1e-9)
    assert res.cost == pytest.approx(np.abs(res.action.theta).sum(), rel=1e-12)


def test_cw_attack_agrees_with_exact_distance(rr):
    scm = rr.Scm.builtin("income-savings")
    clf = rr.Classifier.linear(np.array([1.0, 1.0]), 0.0)
    x = np.array([-1.0, 0.2])
    action = rr.RecourseAction([0, 1], np.array([1.5, 0.0]))
    exact = rr.analytic_min_invalidation(clf, scm, x, action)
    attack = rr.cw_min_invalidation(clf, scm, x, action, seed=3)
    assert attack.success
    assert attack.magnitude == pytest.approx(exact, rel=1e-2)
    assert np.linalg.norm(attack.delta) == pytest.approx(attack.magnitude, rel=1e-12)


def test_sine_classifier_has_no_robust_recourse(rr):
    scm = rr.Scm.imf(2)
    clf = rr.Classifier.sine(2, feature=1, gamma=0.05, sharpness=10.0)
    feas = rr.FeasibilitySpec.all_free(2)
    x = np.array([0.0, -0.07])
    assert not clf.decide(x)
    assert rr.generate_recourse(clf, scm, x, feas, epsilon=0.0).found
    params = rr.SolverParams()
    params.n_max = 10
    assert not rr.generate_recourse(clf, scm, x, feas, epsilon=0.08, params=params).found


def test_invalid_input_raises(rr):
    with pytest.raises(ValueError):
        rr.Scm.builtin("no-such-scm")
    with pytest.raises(ValueError):
        rr.Scm.from_json("{not json")


def test_run_experiment_writes_outputs(rr, tmp_path):
    config = {
        "name": "py-smoke",
        "dataset": {"source": "synthetic", "n_samples": 200, "data_seed": 1,
                    "labeler": {"weights": [1.0, 1.0], "noise_rate": 0.05}},
        "scm": "income-savings",
        "model": {"kind": "linear", "epochs": 20},
        "epsilons": [0.01, 0.1],
        "max_individuals": 10,
        "seeds": [0],
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    out = tmp_path / "out"
    result = rr.run_experiment("robustness", str(path), out=str(out), workers=2)
    assert result["failures"] == []
    summary = (out / "robustness_summary.csv").read_text().splitlines()
    assert summary[0].startswith("config_hash,seed,epsilon")
    for row in summary[1:]:
        assert row.split(",")[5] == "100"
    with pytest.raises(ValueError):
        rr.run_experiment("fragility", str(path), out=str(out), epsilons=[0.1])


def test_shipped_scm_config_loads(rr, source_dir):
    scm = rr.Scm.from_json((source_dir / "configs" / "scm" / "loan_like.json").read_text())
    builtin = rr.Scm.builtin("loan-like")
    assert scm.feature_names == builtin.feature_names
    assert scm.parents == builtin.parents

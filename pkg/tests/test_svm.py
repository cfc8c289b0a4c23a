import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bofdb.errors import DimensionMismatch, SingleClassData
from bofdb.svm import (
    BinarySvm,
    SvmConfig,
    SvmModel,
    decision_value,
    predict_class,
    train_binary,
    train_one_vs_rest,
)
from oracles import brute_force_dual, naive_decision


def linear(a, b):
    return float(np.dot(a, b))


def rbf(gamma):
    return lambda a, b: float(np.exp(-gamma * np.sum((np.asarray(a) - np.asarray(b)) ** 2)))


def dual_value(m, x, y):
    alpha = np.zeros(len(y))
    alpha[m.support_indices] = np.abs(m.alphas)
    k = np.array([[linear(a, b) for b in x] for a in x])
    ay = alpha * y
    return alpha.sum() - 0.5 * ay @ k @ ay


def test_separable_pair():
    x = np.array([[0.0, 0.0], [1.0, 1.0]])
    y = np.array([-1.0, 1.0])
    m = train_binary(x, y, SvmConfig(c=10))
    assert decision_value(m, x[0]) < 0 < decision_value(m, x[1])
    # hard-margin optimum: w = (1, 1), b = -1
    assert np.allclose(m.weights, [1.0, 1.0], atol=1e-3)
    assert m.bias == pytest.approx(-1.0, abs=1e-3)


def test_symmetric_data_zero_bias():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(6, 3)) + np.array([2.0, 0, 0])
    x = np.vstack([pts, -pts])
    y = np.array([1.0] * 6 + [-1.0] * 6)
    m = train_binary(x, y, SvmConfig(c=10, tolerance=1e-9))
    assert abs(m.bias) <= 1e-6


@pytest.mark.parametrize("seed", range(8))
def test_four_point_dual_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4, 2))
    y = np.array([1.0, 1.0, -1.0, -1.0])
    c = 0.7
    best, _ = brute_force_dual(x, y, c)
    m = train_binary(x, y, SvmConfig(c=c, tolerance=1e-6))
    assert dual_value(m, x, y) == pytest.approx(best, abs=1e-4)


def test_box_constraint_reached():
    # overlapping classes force some alpha to the upper bound
    x = np.array([[0.0, 0.0], [1.0, 0.0], [0.9, 0.0], [0.1, 0.0]])
    y = np.array([1.0, 1.0, -1.0, -1.0])
    best, alpha = brute_force_dual(x, y, 0.5)
    assert np.isclose(alpha, 0.5).any()
    m = train_binary(x, y, SvmConfig(c=0.5, tolerance=1e-6))
    assert dual_value(m, x, y) == pytest.approx(best, abs=1e-4)
    assert np.all(np.abs(m.alphas) <= 0.5 + 1e-12)


@pytest.mark.parametrize("kernel", ["linear", "rbf:0.5"])
def test_kkt_residuals_within_tolerance(kernel):
    rng = np.random.default_rng(11)
    x = rng.normal(size=(80, 5))
    y = np.where(x[:, 0] + 0.3 * rng.normal(size=80) > 0, 1.0, -1.0)
    cfg = SvmConfig.parse_kernel(kernel, c=2.0)
    m = train_binary(x, y, cfg, seed=3)
    assert m.kkt_residuals(x, y).max() <= cfg.tolerance


def test_dual_objective_non_decreasing():
    rng = np.random.default_rng(12)
    x = rng.normal(size=(60, 4))
    y = np.where(rng.random(60) > 0.5, 1.0, -1.0)
    trace = []
    train_binary(x, y, SvmConfig(c=1.0), objective_trace=trace)
    assert len(trace) > 5
    for before, after in zip(trace, trace[1:]):
        assert after >= before - 1e-12 * max(1.0, abs(before))


def test_separable_toy_full_training_accuracy():
    rng = np.random.default_rng(13)
    x = np.vstack([rng.normal(-3, 0.5, size=(20, 4)), rng.normal(3, 0.5, size=(20, 4))])
    y = np.array([-1.0] * 20 + [1.0] * 20)
    m = train_binary(x, y)
    assert np.all(np.sign(m.decision_values(x)) == y)


def test_cached_weights_equal_alpha_sum():
    rng = np.random.default_rng(14)
    x = rng.normal(size=(30, 6))
    y = np.where(x[:, 1] > 0, 1.0, -1.0)
    m = train_binary(x, y)
    assert np.allclose(m.weights, m.alphas @ m.support_vectors, atol=1e-9)
    v = rng.normal(size=6)
    assert decision_value(m, v) == float(v @ m.weights + m.bias)


def test_alpha_bounds():
    rng = np.random.default_rng(15)
    x = rng.normal(size=(50, 3))
    y = np.where(rng.random(50) > 0.5, 1.0, -1.0)
    m = train_binary(x, y, SvmConfig(c=0.3))
    assert np.all(np.abs(m.alphas) <= 0.3 + 1e-12)
    assert np.all(np.abs(m.alphas) > 0)


def test_rbf_at_support_vector():
    cfg = SvmConfig(kernel="rbf", gamma=2.0)
    sv = np.array([[0.5, 0.5], [3.0, 3.0]])
    m = BinarySvm(sv, np.array([0.75, 0.0]), 0.25, cfg)
    assert decision_value(m, sv[0]) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("kernel,fn", [("linear", linear), ("rbf:0.7", rbf(0.7))])
def test_decision_matches_naive_kernel_sum(kernel, fn):
    rng = np.random.default_rng(16)
    cfg = SvmConfig.parse_kernel(kernel)
    svs = rng.normal(size=(12, 5))
    alphas = rng.normal(size=12)
    m = BinarySvm(svs, alphas, 0.3, cfg)
    f = naive_decision(svs.tolist(), alphas.tolist(), 0.3, fn)
    for _ in range(25):
        v = rng.normal(size=5)
        assert decision_value(m, v) == pytest.approx(f(v.tolist()), abs=1e-9)


def test_errors():
    x = np.zeros((3, 2))
    with pytest.raises(SingleClassData):
        train_binary(x, np.ones(3))
    with pytest.raises(DimensionMismatch):
        train_binary(x, np.array([1.0, -1.0]))
    m = train_binary(np.array([[0.0, 0.0], [1.0, 1.0]]), np.array([-1.0, 1.0]))
    with pytest.raises(DimensionMismatch):
        decision_value(m, [1.0, 2.0, 3.0])
    with pytest.raises(SingleClassData):
        train_one_vs_rest(x, ["a", "a", "a"])
    with pytest.raises(ValueError):
        SvmConfig(c=0)
    with pytest.raises(ValueError):
        SvmConfig.parse_kernel("poly:3")


def _three_class_toy(rng):
    means = {"a": (-4, 0), "b": (4, 0), "c": (0, 5)}
    x, labels = [], []
    for lab, mu in means.items():
        x.append(rng.normal(mu, 0.4, size=(10, 2)))
        labels += [lab] * 10
    return np.vstack(x), labels


def test_one_vs_rest_machines_and_argmax():
    rng = np.random.default_rng(17)
    x, labels = _three_class_toy(rng)
    model = train_one_vs_rest(x, labels)
    assert len(model.machines) == 3 and model.class_labels == ["a", "b", "c"]
    assert model.predict(x) == labels
    for _ in range(20):
        v = rng.normal(0, 4, size=2)
        scores = [naive_decision(m.support_vectors.tolist(), m.alphas.tolist(), m.bias, linear)(v.tolist())
                  for m in model.machines]
        assert predict_class(model, v) == model.class_labels[int(np.argmax(scores))]


def test_relabeling_permutes_machines():
    rng = np.random.default_rng(18)
    x, labels = _three_class_toy(rng)
    rename = {"a": "z", "b": "y", "c": "x"}
    m1 = train_one_vs_rest(x, labels)
    m2 = train_one_vs_rest(x, [rename[l] for l in labels])
    d1, d2 = m1.decision_matrix(x), m2.decision_matrix(x)
    for i, lab in enumerate(m1.class_labels):
        j = m2.class_labels.index(rename[lab])
        assert np.allclose(d1[:, i], d2[:, j], atol=1e-12)


def test_tie_goes_to_first_label():
    cfg = SvmConfig()
    machines = [BinarySvm(np.array([[1.0, 0.0]]), np.array([1.0]), 0.0, cfg, label)
                for label in ("p", "q", "r")]
    machines[1] = BinarySvm(np.array([[1.0, 0.0]]), np.array([0.5]), 0.0, cfg, "q")
    model = SvmModel(machines, ["p", "q", "r"])
    assert predict_class(model, [1.0, 0.0]) == "p"


def test_dominant_machine_wins():
    cfg = SvmConfig()
    machines = [BinarySvm(np.array([[1.0]]), np.array([a]), b, cfg, lab)
                for a, b, lab in [(1.0, -5.0, "p"), (1.0, 5.0, "q")]]
    assert predict_class(SvmModel(machines, ["p", "q"]), [1.0]) == "q"


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 100.0), st.integers(0, 10_000))
def test_argmax_invariant_under_positive_rescaling(scale, seed):
    rng = np.random.default_rng(seed)
    cfg = SvmConfig()
    machines = [BinarySvm(rng.normal(size=(3, 4)), rng.normal(size=3), float(rng.normal()), cfg, i)
                for i in range(3)]
    scaled = [BinarySvm(m.support_vectors, m.alphas * scale, m.bias * scale, cfg, m.class_label)
              for m in machines]
    v = rng.normal(size=4)
    a = SvmModel(machines, [0, 1, 2])
    b = SvmModel(scaled, [0, 1, 2])
    da, db = a.decision_matrix(v)[0], b.decision_matrix(v)[0]
    if np.sort(da)[-1] - np.sort(da)[-2] > 1e-9:
        assert predict_class(a, v) == predict_class(b, v)
    assert np.allclose(db, da * scale, rtol=1e-9, atol=1e-9)


def test_training_is_deterministic():
    rng = np.random.default_rng(19)
    x, labels = _three_class_toy(rng)
    a = train_one_vs_rest(x, labels, seed=5).to_dict()
    b = train_one_vs_rest(x, labels, seed=5).to_dict()
    assert json.dumps(a) == json.dumps(b)


@pytest.mark.parametrize("kernel", ["linear", "rbf:1.5"])
def test_model_dict_round_trip(kernel):
    rng = np.random.default_rng(20)
    x, labels = _three_class_toy(rng)
    model = train_one_vs_rest(x, labels, SvmConfig.parse_kernel(kernel), dictionary_id=4)
    back = SvmModel.from_dict(json.loads(json.dumps(model.to_dict())))
    probe = rng.normal(0, 4, size=(30, 2))
    assert back.decision_matrix(probe).tobytes() == model.decision_matrix(probe).tobytes()
    assert back.dictionary_id == 4 and back.class_labels == model.class_labels

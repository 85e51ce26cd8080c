import numpy as np
import pytest

from dlearn import dgp
from dlearn.dataset import Dataset
from dlearn.errors import InvalidInput, InvalidMode, UndefinedValue
from dlearn.learners import ITRModel
from dlearn.linmod import FitResult
from dlearn.metrics import (
    EvalResult, aggregate, ape, empirical_value, evaluate, mean_sem, misclassification,
)

from conftest import binary_data, design


def _d(beta):
    beta = np.asarray(beta, dtype=float)
    return ITRModel("D", 2, FitResult(beta), beta=beta)


def _ad(B, K):
    B = np.asarray(B, dtype=float)
    return ITRModel("AD", K, FitResult(B.ravel()), B=B)


def test_ape_examples(rng):
    X = design(100, 3, rng)
    beta0 = np.array([0.5, -1.0, 2.0])
    assert ape(_d(beta0), X @ beta0, X) == 0.0
    assert ape(_d(beta0 + [0.7, 0, 0]), X @ beta0, X) == pytest.approx(0.49)
    B = np.array([[0.2], [1.0], [0.0]])
    assert ape(_ad(B + [[1.0], [0], [0]], 2), X @ B, X) == pytest.approx(1.0)


def test_ape_multi_arm_is_squared_norm(rng):
    X = design(50, 2, rng)
    B = rng.normal(size=(2, 3))
    shift = np.array([[0.3, -0.4, 1.2], [0, 0, 0]])
    assert ape(_ad(B + shift, 4), X @ B, X) == pytest.approx(0.09 + 0.16 + 1.44)


def test_ape_mode_mismatch(rng):
    X = design(10, 2, rng)
    with pytest.raises(InvalidMode):
        ape(_ad(np.ones((2, 3)), 4), X @ np.ones(2), X)
    with pytest.raises(InvalidMode):
        ape(_d(np.ones(2)), np.ones((10, 3)), X)


def test_misclassification_examples(rng):
    X = design(500, 3, rng)
    beta0 = np.array([0.1, 1.0, -1.0])
    truth = np.where(X @ beta0 >= 0, 1, -1)
    assert misclassification(_d(beta0), truth, X) == 0.0
    assert misclassification(_d(-beta0), truth, X) == 1.0


class _Coin:
    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)

    def predict(self, X):
        return self.rng.choice([-1, 1], len(X))


def test_random_rule_misclassifies_half(rng):
    X = design(10_000, 2, rng)
    truth = np.where(X[:, 1] >= 0, 1, -1)
    assert misclassification(_Coin(1), truth, X) == pytest.approx(0.5, abs=0.02)


def test_empirical_value_examples(noisy_binary):
    d = noisy_binary
    assert empirical_value(d.A, d) == pytest.approx(d.R.mean())
    assert empirical_value(lambda X: d.A, d) == pytest.approx(d.R.mean())
    one = np.where(np.arange(d.n) == 0, d.A, -d.A)
    assert empirical_value(one, d) == pytest.approx(d.R[0])
    with pytest.raises(UndefinedValue):
        empirical_value(-d.A, d)


def test_empirical_value_ignores_common_propensity_scale(noisy_binary):
    d = noisy_binary
    pi = np.where(d.A == 1, 0.3, 0.7)
    a = Dataset(d.X, d.A, d.R, pi)
    b = Dataset(d.X, d.A, d.R, pi * 0.5)
    rule = np.where(d.X[:, 1] > 0, 1, -1)
    assert empirical_value(rule, a) == pytest.approx(empirical_value(rule, b), rel=1e-14)


def test_scenario_one_optimal_value():
    lab = dgp.generate(1, 10_000, 30, seed=123)
    assert empirical_value(lab.truth_rule, lab.dataset) == pytest.approx(1.435, abs=0.05)


@pytest.mark.parametrize("sid", range(1, 9))
def test_optimal_rule_dominates_single_arm_rules(sid):
    lab = dgp.generate(sid, 10_000, None, seed=400 + sid)
    d = lab.dataset
    best = empirical_value(lab.truth_rule, d)
    arms = (-1, 1) if d.mode == "binary" else range(1, d.K + 1)
    for a in arms:
        r = d.R[d.A == a]
        assert best >= empirical_value(np.full(d.n, a), d) - 3 * r.std(ddof=1) / np.sqrt(r.size)


def test_evaluate_bundles_the_three_metrics(rng):
    lab = dgp.generate(2, 2000, 6, seed=5)
    model = _d(np.array([0, 8.0, 0, 0, 0, 0]))
    ev = evaluate(model, lab.truth_scores, lab.optimal, lab.dataset)
    assert ev.ape == pytest.approx(0.0)
    assert ev.misclassification == 0.0
    assert ev.value == pytest.approx(empirical_value(lab.optimal, lab.dataset))
    assert ev.n_test == 2000


def test_eval_result_bounds():
    with pytest.raises(InvalidInput):
        EvalResult(float("nan"), 0.1, 1.0, 10)
    with pytest.raises(InvalidInput):
        EvalResult(0.1, 1.5, 1.0, 10)
    with pytest.raises(InvalidInput):
        EvalResult(-0.1, 0.5, 1.0, 10)


def test_aggregate_examples():
    same = [EvalResult(1.0, 0.2, 3.0, 10)] * 3
    assert aggregate(same)["value"] == (3.0, 0.0)
    out = aggregate([EvalResult(1.0, 0.1, 1.0, 10), EvalResult(3.0, 0.3, 3.0, 10)])
    assert out["value"] == pytest.approx((2.0, 1.0))
    assert out["ape"] == pytest.approx((2.0, 1.0))
    with pytest.raises(InvalidInput):
        aggregate(same[:1])
    with pytest.raises(InvalidInput):
        mean_sem([1.0])


def test_sem_of_standard_normals():
    v = np.random.default_rng(3).standard_normal(100)
    assert mean_sem(v)[1] == pytest.approx(0.1, abs=0.03)

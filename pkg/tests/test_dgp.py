import numpy as np
import pytest

from dlearn import dgp
from dlearn.dataset import BINARY, MULTI
from dlearn.encoding import simplex_vertices
from dlearn.errors import InvalidConfig


def _row(p, **xs):
    x = np.zeros(p)
    x[0] = 1.0
    for k, v in xs.items():
        x[int(k[1:])] = v
    return x[None, :]


def test_scenario_one_is_homoscedastic(rng):
    X = np.column_stack([np.ones(20), rng.uniform(-1, 1, (20, 5))])
    np.testing.assert_array_equal(dgp.scenario(1).sigma2(X), 1.0)


def test_scenario_three_variance():
    assert dgp.scenario(3).sigma2(_row(5, x3=0.5))[0] == pytest.approx(2.0)


def test_scenario_seven_truth():
    X = _row(5, x1=1, x2=1, x3=1, x4=1)
    spec = dgp.scenario(7)
    assert spec.delta(X)[0, 0] == pytest.approx(6.75)
    assert dgp.truth_rule(spec, X[0]) == 1


def test_scenario_one_sign_rule_and_tie():
    assert dgp.truth_rule(1, _row(4, x1=0.95)[0]) == -1
    assert dgp.truth_rule(1, _row(4, x1=0.9)[0]) == 1


def test_scenario_eight_truth():
    X = _row(7, x1=1, x2=0, x3=0)
    np.testing.assert_allclose(dgp.scenario(8).delta(X)[0], [2.5, 2.0, 4.5, 0.0])
    assert dgp.truth_rule(8, X[0]) == 3


def test_registry_shapes_and_errors():
    assert sorted(dgp.SCENARIOS) == list(range(1, 9))
    for sid, spec in dgp.SCENARIOS.items():
        assert spec.mode == (BINARY if sid <= 6 else MULTI)
        assert spec.n == (100 if sid == 5 else 200)
        assert spec.p == (30 if sid <= 6 else 20)
    with pytest.raises(InvalidConfig):
        dgp.scenario(9)
    with pytest.raises(InvalidConfig):
        dgp.generate(6, 10, 6)
    assert dgp.generate(6, 10, 7).dataset.p == 7


@pytest.mark.parametrize("sid", range(1, 9))
def test_variance_positive_and_formulas_use_declared_columns(sid):
    spec = dgp.scenario(sid)
    rng = np.random.default_rng(sid)
    X = np.column_stack([np.ones(5000), rng.uniform(-1, 1, (5000, spec.min_p - 1))])
    assert np.all(spec.sigma2(X) > 0)
    wide = np.column_stack([X, rng.uniform(-1, 1, (5000, 3))])
    np.testing.assert_array_equal(spec.main(wide), spec.main(X))
    np.testing.assert_array_equal(spec.delta(wide), spec.delta(X))


@pytest.mark.parametrize("sid", range(1, 9))
def test_generated_truth_matches_formulas(sid):
    lab = dgp.generate(sid, 500, None, seed=sid)
    spec, d = lab.spec, lab.dataset
    np.testing.assert_array_equal(d.X[:, 0], 1.0)
    assert np.all(np.abs(d.X[:, 1:]) <= 1)
    np.testing.assert_array_equal(lab.optimal, spec.optimal_arm(d.X))
    delta = spec.delta(d.X)
    if spec.mode == BINARY:
        np.testing.assert_allclose(lab.truth_scores, 2 * delta)
    else:
        np.testing.assert_allclose(lab.truth_scores, delta @ simplex_vertices(4).vertices)
    np.testing.assert_allclose(d.pi, 1.0 / spec.K)


@pytest.mark.parametrize("sid", [1, 7])
def test_arm_frequencies(sid):
    d = dgp.generate(sid, 10_000, None, seed=77).dataset
    pi = 1.0 / d.K
    arms = (-1, 1) if d.mode == BINARY else range(1, 5)
    for a in arms:
        assert abs(np.mean(d.A == a) - pi) <= 3 * np.sqrt(pi * (1 - pi) / d.n)


def test_regeneration_is_bit_identical():
    a = dgp.generate(3, 300, 10, seed=42).dataset
    b = dgp.generate(3, 300, 10, seed=42).dataset
    c = dgp.generate(3, 300, 10, seed=43).dataset
    for f in ("X", "A", "R"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))
    assert not np.array_equal(a.R, c.R)
    ss = np.random.SeedSequence(9, spawn_key=(1,))
    np.testing.assert_array_equal(dgp.generate(7, 50, seed=ss).dataset.R,
                                  dgp.generate(7, 50, seed=np.random.SeedSequence(9, spawn_key=(1,))).dataset.R)


@pytest.mark.slow
@pytest.mark.parametrize("sid", range(1, 9))
def test_noise_variance_tracks_sigma2_by_decile(sid):
    lab = dgp.generate(sid, 50_000, None, seed=900 + sid)
    spec, d = lab.spec, lab.dataset
    delta = spec.delta(d.X)
    effect = delta * d.A if spec.mode == BINARY else delta[np.arange(d.n), d.A - 1]
    noise = d.R - spec.main(d.X) - effect
    s2 = spec.sigma2(d.X)
    edges = np.quantile(s2, np.linspace(0, 1, 11))
    bins = np.clip(np.searchsorted(edges, s2, side="right") - 1, 0, 9)
    for b in np.unique(bins):
        sel = bins == b
        assert np.var(noise[sel]) == pytest.approx(np.mean(s2[sel]), rel=0.15)


@pytest.mark.parametrize("sid", [2, 4, 7, 8])
def test_working_variance_is_the_error_second_moment(sid):
    spec = dgp.scenario(sid)
    rng = np.random.default_rng(sid)
    x = np.r_[1.0, rng.uniform(-1, 1, spec.p - 1)]
    X = np.tile(x, (200_000, 1))
    z = rng.standard_normal(200_000)
    if spec.mode == BINARY:
        A = rng.choice([-1, 1], 200_000)
        R = spec.main(X) + spec.delta(X) * A + np.sqrt(spec.sigma2(X)) * z
        err = 2 * R * A - spec.f_opt(X)
    else:
        A = rng.integers(1, 5, 200_000)
        R = spec.main(X) + spec.delta(X)[np.arange(len(A)), A - 1] + np.sqrt(spec.sigma2(X)) * z
        U = simplex_vertices(4).vertices
        err = 4 / 3 * R - np.sum(U[A - 1] * spec.f_opt(X), axis=1)
    target = spec.working_variance(A, X)
    for a in np.unique(A):
        sel = A == a
        assert np.mean(err[sel] ** 2) == pytest.approx(target[sel][0], rel=0.03)

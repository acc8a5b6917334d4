import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lbfgs_pi.numcore import NonFiniteError, Rng, UsageError
from lbfgs_pi.steppers import (
    AdadeltaState,
    AdamState,
    BtlsConfig,
    RmspropState,
    adadelta_update,
    adam_update,
    btls,
    rmsprop_update,
)
from lbfgs_pi.tasks import Task, make_random_mlp_family, quadratic_task

HALF_SQUARE = quadratic_task(np.eye(1), np.zeros(1))


def test_btls_full_step_accepted():
    res = btls(HALF_SQUARE, [1.0], [-1.0], [1.0])
    assert (res.t, res.f_evals) == (1.0, 1)
    assert res.satisfied


def test_btls_shrinks_to_quarter():
    t, evals = btls(HALF_SQUARE, [1.0], [-4.0], [1.0], BtlsConfig(c1=0.25, c2=0.5))
    assert t == 0.25
    assert evals == 3


def test_btls_zero_backtracks_returns_t_init():
    res = btls(HALF_SQUARE, [1.0], [-4.0], [1.0], BtlsConfig(t_init=0.7, max_backtracks=0))
    assert res.t == 0.7
    assert res.f_evals == 0
    assert not res.satisfied


def test_btls_exhausted_returns_smallest_trial():
    # ascent direction never satisfies the test
    res = btls(HALF_SQUARE, [1.0], [1.0], [1.0], BtlsConfig(max_backtracks=5))
    assert res.t == 0.5**5
    assert res.f_evals == 5
    assert not res.satisfied


def test_btls_reuses_f0():
    res = btls(HALF_SQUARE, [1.0], [-1.0], [1.0], f0=0.5)
    assert res.f_evals == 1


def test_btls_nonfinite_objective():
    bad = Task("quadratic", _NanPayload(), "nan")
    with pytest.raises(NonFiniteError):
        btls(bad, [1.0], [-1.0], [1.0])


class _NanPayload:
    n = 1

    def value(self, x):
        return float("nan") if x[0] != 1.0 else 0.5

    def value_and_grad(self, x):
        return self.value(x), np.asarray(x, dtype=float)


@pytest.mark.parametrize("kw", [dict(c1=0.0), dict(c1=1.0), dict(c2=1.0), dict(t_init=0.0), dict(max_backtracks=-1)])
def test_btls_config_validation(kw):
    with pytest.raises(UsageError):
        BtlsConfig(**kw)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 12))
def test_btls_armijo_on_random_quadratics(seed, n):
    rng = Rng(seed)
    gen = rng.generator
    M = gen.standard_normal((n, n))
    task = quadratic_task(M @ M.T + 1e-3 * np.eye(n), gen.standard_normal(n))
    x = rng.randn(n)
    f0, g = task.value_and_grad(x)
    # a descent direction that is not the plain gradient
    d = -g * gen.uniform(0.1, 10.0, n)
    cfg = BtlsConfig(c1=0.25, c2=0.5, t_init=1.0)
    res = btls(task, x, d, g, cfg)
    if res.satisfied:
        assert task.value(x + res.t * d) <= f0 + cfg.c1 * res.t * float(g @ d)
        # no unnecessary shrinking
        if res.t < cfg.t_init:
            t_prev = res.t / cfg.c2
            assert task.value(x + t_prev * d) > f0 + cfg.c1 * t_prev * float(g @ d)


def test_btls_armijo_on_mlp_tasks():
    for task, x0 in make_random_mlp_family(5, 3, n_samples=8, p=16, hidden=(4,)):
        f0, g = task.value_and_grad(x0)
        res = btls(task, x0, -g, g)
        assert res.satisfied
        assert task.value(x0 - res.t * g) <= f0 - 0.25 * res.t * float(g @ g)


# first-order rules ---------------------------------------------------------------


def test_adam_first_step():
    dx = adam_update(AdamState(2), [1.0, 0.0], lr=0.03)
    assert dx[0] == pytest.approx(-0.03, rel=1e-7)
    assert dx[1] == 0.0


def test_adam_zero_gradient():
    assert not np.any(adam_update(AdamState(3), np.zeros(3)))


def test_adam_scalar_recursion_oracle():
    st_ = AdamState(1)
    m = v = 0.0
    for k in range(1, 6):
        g = 1.0
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = -0.03 * (m / (1 - 0.9**k)) / (math.sqrt(v / (1 - 0.999**k)) + 1e-8)
        assert adam_update(st_, [g], 0.03)[0] == pytest.approx(ref, rel=1e-14)


def test_adam_length_mismatch():
    with pytest.raises(UsageError):
        adam_update(AdamState(2), [1.0, 2.0, 3.0])


def test_rmsprop_first_step():
    dx = rmsprop_update(RmspropState(1), [1.0], lr=0.01)
    assert dx[0] == pytest.approx(-0.01 / (math.sqrt(0.01) + 1e-8), rel=1e-14)
    assert dx[0] == pytest.approx(-0.1, rel=1e-6)


def test_rmsprop_zero_gradient():
    assert not np.any(rmsprop_update(RmspropState(2), np.zeros(2)))


def test_rmsprop_first_step_direction_preserved_under_scaling():
    a = rmsprop_update(RmspropState(1), [1.0])[0]
    b = rmsprop_update(RmspropState(1), [1e3])[0]
    assert np.sign(a) == np.sign(b)
    assert b == pytest.approx(a, rel=1e-6)


def test_adadelta_first_step():
    dx = adadelta_update(AdadeltaState(1), [1.0])
    assert dx[0] == pytest.approx(-math.sqrt(1e-6) / math.sqrt(0.05 + 1e-6), rel=1e-14)


def test_adadelta_zero_gradient():
    assert not np.any(adadelta_update(AdadeltaState(4), np.zeros(4)))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 10), steps=st.integers(1, 5))
def test_adadelta_sign_opposes_gradient(seed, n, steps):
    gen = Rng(seed).generator
    state = AdadeltaState(n)
    for _ in range(steps):
        g = gen.standard_normal(n)
        dx = adadelta_update(state, g)
        assert np.all(np.sign(dx) == -np.sign(g))


@pytest.mark.parametrize(
    "make, update",
    [(AdamState, adam_update), (RmspropState, rmsprop_update), (AdadeltaState, adadelta_update)],
)
def test_rules_are_coordinatewise(make, update):
    rng = Rng(17)
    n = 6
    perm = rng.permutation(n)
    a, b = make(n), make(n)
    for _ in range(4):
        g = rng.randn(n)
        np.testing.assert_array_equal(update(a, g)[perm], update(b, g[perm]))

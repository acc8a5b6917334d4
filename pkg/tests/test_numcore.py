import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lbfgs_pi.checks import GRAD_REL_FLOOR, central_diff, rel_err
from lbfgs_pi.numcore import NonFiniteError, Rng, Tape, UsageError, dot, norm2, randn


def test_dot_examples():
    assert dot([1, 2, 3], [4, 5, 6]) == 32
    assert dot([1.5, -2.0], [0.0, 0.0]) == 0
    assert dot([1, 0], [0, 1]) == 0
    with pytest.raises(UsageError):
        dot([1, 2], [1, 2, 3])


def test_norm2_examples():
    assert norm2([3, 4]) == 5
    assert norm2(np.zeros(4)) == 0
    assert norm2([1, 0, 0]) == 1


def test_randn_deterministic_and_validated():
    a = randn(Rng(42), 7, 2.0)
    b = randn(Rng(42), 7, 2.0)
    assert np.array_equal(a, b)
    with pytest.raises(UsageError):
        randn(Rng(0), 3, 0.0)
    with pytest.raises(UsageError):
        randn(Rng(0), 0, 1.0)


def test_randn_mean_within_lln_bound():
    n, scale = 10**5, 3.0
    v = randn(Rng(5), n, scale)
    assert abs(v.mean()) < 4 * scale / np.sqrt(n)


def test_rng_streams_bitwise_reproducible():
    r1, r2 = Rng(2**63 + 11), Rng(2**63 + 11)
    seq1 = np.concatenate([r1.randn(5), r1.randn(3, 0.5)])
    seq2 = np.concatenate([r2.randn(5), r2.randn(3, 0.5)])
    assert seq1.tobytes() == seq2.tobytes()
    assert not np.array_equal(Rng(1).randn(4), Rng(2).randn(4))


# tape --------------------------------------------------------------------------


def test_tape_quadratic_gradient():
    tp = Tape()
    x = tp.leaf([1.0, 2.0])
    adj = tp.backward(tp.dot(x, x))
    np.testing.assert_array_equal(adj.of(x), [2.0, 4.0])


def test_tape_exp_at_zero():
    tp = Tape()
    c = tp.leaf(0.0)
    assert tp.backward(tp.exp(c)).of(c) == 1.0


@pytest.mark.parametrize("c0, expected", [(-5.0, 0.0), (-1.0, 1.0), (-3.0, 0.0), (0.0, 0.0)])
def test_tape_clip_subgradient(c0, expected):
    tp = Tape()
    c = tp.leaf(c0)
    assert tp.backward(tp.clip(c, -3.0, 0.0)).of(c) == expected


def test_backward_rejects_vector_root():
    tp = Tape()
    x = tp.leaf([1.0, 2.0])
    with pytest.raises(UsageError):
        tp.backward(tp.exp(x))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_is_reported():
    tp = Tape()
    with pytest.raises(NonFiniteError):
        tp.log(tp.leaf(-1.0))


def test_backward_repeatable():
    tp = Tape()
    x = tp.leaf([0.3, -1.2, 2.0])
    y = tp.exp(tp.mul(tp.norm(x), x))
    root = tp.dot(y, [1.0, 2.0, 3.0])
    a1 = tp.backward(root).of(x)
    a2 = tp.backward(root).of(x)
    assert a1.tobytes() == a2.tobytes()


# finite-difference agreement over compositions of every primitive

def _f_affine_exp(tp, x, aux):
    W, b, c = aux["W"], aux["b"], aux["c"]
    v = tp.affine(W, x, b)
    e = tp.exp(tp.mul(0.1, v))
    s = tp.dot(e, c)
    return tp.div(s, tp.add(tp.norm(x), 1.0))


def _f_log_stack(tp, x, aux):
    a = aux["a"]
    p = tp.dot(a, x)
    q = tp.dot(x, x)
    u = tp.stack([tp.add(q, 1.0), tp.mul(p, p), tp.clip(p, -1e3, 1e3), tp.add(tp.abs(p), 1.0)])
    lg = tp.log(tp.maximum(u, 1e-30))
    return tp.dot(lg, [1.0, -0.5, 0.25, 0.1])


def _f_sub_min(tp, x, aux):
    a = aux["a"]
    d = tp.sub(x, a)
    m = tp.minimum(d, 1e6)
    r = tp.mul(tp.dot(m, a), tp.sub(x, tp.mul(0.5, a)))
    # external node standing in for 0.5 |x|^2 evaluated off-tape
    xv = x.value
    return tp.add(tp.dot(r, r), tp.external(x, 0.5 * float(xv @ xv), xv))


def _f_matrix_leaf(tp, x, aux):
    # differentiate w.r.t. a matrix operand of affine
    W = tp.leaf(aux["W"])
    v = tp.affine(W, aux["a"], aux["b"])
    return tp.dot(tp.exp(tp.mul(0.1, v)), aux["c"]), W


COMPOSITIONS = [_f_affine_exp, _f_log_stack, _f_sub_min]


def _aux(rng, n):
    gen = rng.generator
    return {
        "W": gen.standard_normal((n, n)),
        "b": gen.standard_normal(n),
        "c": gen.standard_normal(n),
        "a": gen.standard_normal(n),
    }


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 20), which=st.integers(0, len(COMPOSITIONS) - 1))
def test_tape_matches_central_differences(seed, n, which):
    rng = Rng(seed)
    aux = _aux(rng, n)
    x0 = rng.randn(n)
    f = COMPOSITIONS[which]

    def value(xv):
        tp = Tape()
        return f(tp, tp.leaf(xv), aux).value

    tp = Tape()
    x = tp.leaf(x0)
    grad = tp.backward(f(tp, x, aux)).of(x)
    fd = central_diff(value, x0, 1e-6)
    assert rel_err(grad, fd, rel_floor=GRAD_REL_FLOOR) <= 1e-5


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 20))
def test_tape_matrix_operand_gradient(seed, n):
    rng = Rng(seed)
    aux = _aux(rng, n)
    tp = Tape()
    root, W = _f_matrix_leaf(tp, None, aux)
    grad = tp.backward(root).of(W)

    def value(wflat):
        t2 = Tape()
        a2 = dict(aux, W=wflat.reshape(n, n))
        return _f_matrix_leaf(t2, None, a2)[0].value

    fd = central_diff(value, aux["W"].ravel(), 1e-6).reshape(n, n)
    assert rel_err(grad, fd, rel_floor=GRAD_REL_FLOOR) <= 1e-5


def test_operands_from_another_tape_rejected():
    t1, t2 = Tape(), Tape()
    x = t1.leaf([1.0])
    with pytest.raises(UsageError):
        t2.dot(x, x)

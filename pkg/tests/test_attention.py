import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from collab_handshake import attention as A
from collab_handshake.errors import ConfigError, DimensionError
from collab_handshake.tensor import ParamStore, finite_diff_check

finite = st.floats(-5, 5, allow_nan=False)


def test_general_examples():
    assert A.match_general([1, 0], [0, 1], np.eye(2)) == 0.0
    assert A.match_general([1, 2], [3, 1], np.eye(2)) == 5.0
    w = np.random.default_rng(0).normal(size=(3, 5))
    assert A.match_general(np.zeros(3), np.ones(5), w) == 0.0
    with pytest.raises(DimensionError):
        A.match_general([1, 2], [1, 2, 3], np.eye(2))


def test_scaled_dot_examples():
    assert A.match_scaled_dot([1, 1, 1, 1], [1, 1, 1, 1], 4) == 2.0
    assert A.match_scaled_dot([1, 0], [0, 3]) == 0.0
    with pytest.raises(ConfigError):
        A.match_scaled_dot(np.ones(8), np.ones(1024))
    with pytest.raises(ConfigError):
        A.check_sizes(A.SCALED_DOT, 8, 1024)


def test_additive_examples():
    h = 3
    assert A.match_additive(np.zeros(2), np.zeros(4), np.ones(h), np.ones((h, 4)), np.ones((h, 2))) == 0.0
    s = A.match_additive([0.5, 9], [0.5, 9], [1.0], [[1.0, 0.0]], [[1.0, 0.0]])
    assert abs(s - np.tanh(1.0)) < 1e-15
    assert abs(s - 0.7616) < 1e-4


@given(mu=arrays(float, 3, elements=finite), kappa=arrays(float, 5, elements=finite),
       w_a=arrays(float, 4, elements=finite), w_k=arrays(float, (4, 5), elements=finite),
       w_m=arrays(float, (4, 3), elements=finite))
def test_additive_bounded_by_l1(mu, kappa, w_a, w_k, w_m):
    assert abs(A.match_additive(mu, kappa, w_a, w_k, w_m)) <= np.abs(w_a).sum() + 1e-12


@given(mu=arrays(float, 6, elements=finite), kappa=arrays(float, 6, elements=finite))
def test_general_with_scaled_identity_equals_scaled_dot(mu, kappa):
    w = np.eye(6) * (1.0 / np.sqrt(6))
    assert A.match_general(mu, kappa, w) == A.match_scaled_dot(mu, kappa)


def test_fuse_examples():
    maps = np.random.default_rng(0).normal(size=(4, 2, 3, 3))
    assert np.allclose(A.fuse_softmax(np.zeros(4), maps), maps.mean(axis=0), atol=1e-15)
    assert np.allclose(A.fuse_softmax([0, 1000, 0, 0], maps), maps[1], atol=1e-9)
    a = A.fuse_softmax([0.3, -1.2, 2.0, 0.1], maps)
    b = A.fuse_softmax(np.array([0.3, -1.2, 2.0, 0.1]) + 17.5, maps)
    assert np.abs(a - b).max() <= 1e-12
    with pytest.raises(DimensionError):
        A.fuse_softmax([0, 0, 0], maps)


@given(scores=arrays(float, 4, elements=st.floats(-50, 50)))
def test_fusion_weights_and_hull(scores):
    w = A.selection_weights(scores)
    assert abs(w.sum() - 1) <= 1e-12 and (w >= 0).all() and (w <= 1).all()
    maps = np.random.default_rng(1).normal(size=(4, 5))
    out = A.fuse_softmax(scores, maps)
    assert (out >= maps.min(axis=0) - 1e-12).all() and (out <= maps.max(axis=0) + 1e-12).all()


def test_argmax_examples():
    assert A.select_argmax([0.1, 0.9, 0.3]) == [1]
    assert A.select_argmax([0.5, 0.5]) == [0]
    assert A.select_argmax([3, 1, 2], 2) == [0, 2]
    for n in (0, 4):
        with pytest.raises(ConfigError):
            A.select_argmax([1, 2, 3], n)


@given(ticks=st.lists(st.integers(-24, 24), min_size=4, max_size=4), n=st.integers(1, 4))
def test_argmax_invariant_under_monotone_transform(ticks, n):
    # eighths keep exp and 3s+7 strictly monotone in floating point
    scores = np.array(ticks) / 8.0
    base = A.select_argmax(scores, n)
    assert A.select_argmax(np.exp(scores), n) == base
    assert A.select_argmax(3 * scores + 7, n) == base


# -- batched variants agree with the single-pair functions and pass gradcheck --

def _params(variant, m, k, seed):
    store = ParamStore()
    A.init_attention(store, np.random.default_rng(seed), variant, m, k)
    return store


@pytest.mark.parametrize("variant,m,k", [(A.GENERAL, 3, 5), (A.SCALED_DOT, 4, 4), (A.ADDITIVE, 3, 5)])
def test_batch_scores_match_single_pair(variant, m, k):
    from collab_handshake.tensor import Tape
    rng = np.random.default_rng(2)
    store = _params(variant, m, k, 2)
    mu, keys = rng.normal(size=(2, m)), rng.normal(size=(2, 4, k))
    t = Tape(grad=False)
    s = A.batch_scores(t, store, variant, t.constant(mu), t.constant(keys)).value
    for b in range(2):
        for i in range(4):
            assert abs(s[b, i] - A.match(variant, store, mu[b], keys[b, i])) < 1e-12


def test_additive_hidden_default():
    store = _params(A.ADDITIVE, 8, 64, 0)
    assert store["attention.W_a"].shape == (64,)
    assert store["attention.W_k"].shape == (64, 64) and store["attention.W_m"].shape == (64, 8)


@pytest.mark.parametrize("seed", range(10))
def test_gradcheck_general(seed):
    rng = np.random.default_rng(seed)
    arr = {"mu": rng.normal(size=(2, 3)), "keys": rng.normal(size=(2, 4, 5)), "w": rng.normal(size=(3, 5))}
    r = rng.normal(size=(2, 4))
    err = finite_diff_check(lambda t, v: t.sum(A.general_scores(t, v["mu"], v["keys"], v["w"]), r), arr,
                            rng=np.random.default_rng(seed))
    assert err <= 1e-4


@pytest.mark.parametrize("seed", range(10))
def test_gradcheck_scaled_dot(seed):
    rng = np.random.default_rng(seed)
    arr = {"mu": rng.normal(size=(2, 4)), "keys": rng.normal(size=(2, 3, 4))}
    r = rng.normal(size=(2, 3))
    err = finite_diff_check(lambda t, v: t.sum(A.scaled_dot_scores(t, v["mu"], v["keys"]), r), arr,
                            rng=np.random.default_rng(seed))
    assert err <= 1e-4


@pytest.mark.parametrize("seed", range(10))
def test_gradcheck_additive(seed):
    rng = np.random.default_rng(seed)
    h = 6
    arr = {"mu": rng.normal(size=(2, 3)), "keys": rng.normal(size=(2, 4, 5)), "wa": rng.normal(size=h),
           "wk": rng.normal(size=(h, 5)) * 0.5, "wm": rng.normal(size=(h, 3)) * 0.5}
    r = rng.normal(size=(2, 4))

    def fn(t, v):
        return t.sum(A.additive_scores(t, v["mu"], v["keys"], v["wa"], v["wk"], v["wm"]), r)

    assert finite_diff_check(fn, arr, rng=np.random.default_rng(seed)) <= 1e-4

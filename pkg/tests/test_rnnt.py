from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jointslu import autodiff as ad
from jointslu.lattice import enumerate_rnnt_paths
from jointslu.rnnt import rnnt_alpha_beta, rnnt_beam_decode, rnnt_greedy_decode, rnnt_loss, rnnt_nll
from oracles import count_paths, exhaustive_best_path, log_softmax, rnnt_paths_nll


def uniform(T, U, V):
    return np.full((T, U + 1, V), -np.log(V))


def test_single_path():
    loss, _ = rnnt_nll(uniform(1, 1, 3), [1])
    assert loss == pytest.approx(np.log(9), abs=1e-12)


def test_two_paths():
    loss, _ = rnnt_nll(uniform(2, 1, 3), [1])
    assert loss == pytest.approx(np.log(27 / 2), abs=1e-12)


def test_extent_mismatch():
    with pytest.raises(ValueError):
        rnnt_nll(uniform(2, 2, 3), [1])


inst = st.tuples(st.integers(1, 5), st.integers(0, 3), st.integers(2, 4), st.integers(0, 2**31 - 1))


@settings(max_examples=100, deadline=None)
@given(inst)
def test_matches_path_enumeration(params):
    T, U, V, seed = params
    rng = np.random.default_rng(seed)
    y = list(rng.integers(1, V, size=U))
    jlp = log_softmax(rng.normal(scale=2.0, size=(T, U + 1, V)))
    paths = [a.symbols for a in enumerate_rnnt_paths(y, T)]
    assert len(paths) == comb(T + U - 1, U)
    assert abs(rnnt_nll(jlp, y)[0] - rnnt_paths_nll(jlp, y, paths)) <= 1e-10


@settings(max_examples=50, deadline=None)
@given(inst)
def test_alpha_beta_agree_on_every_antidiagonal(params):
    T, U, V, seed = params
    rng = np.random.default_rng(seed)
    y = list(rng.integers(1, V, size=U))
    alpha, beta, log_z = rnnt_alpha_beta(log_softmax(rng.normal(size=(T, U + 1, V))), y)
    for n in range(T + U):
        cells = [(t, n - t) for t in range(T) if 0 <= n - t <= U]
        total = np.logaddexp.reduce([alpha[c] + beta[c] for c in cells])
        assert abs(total - log_z) <= 1e-9


@pytest.mark.parametrize("T,U,V", [(3, 2, 4), (4, 3, 3), (2, 0, 3), (1, 2, 4)])
def test_gradient_through_log_softmax(T, U, V):
    rng = np.random.default_rng(T + 10 * U)
    y = list(rng.integers(1, V, size=U))
    x0 = rng.normal(size=(T, U + 1, V))
    assert ad.grad_check(lambda x: rnnt_loss(ad.log_softmax(x), y), x0) <= 1e-4


# ------------------------------------------------------------------ decoding


class ToyTransducer:
    """Random small transducer on plain arrays: tanh-RNN predictor, tanh joint."""

    def __init__(self, V=3, d=4, p=5, seed=0, bias=None):
        r = np.random.default_rng(seed)
        self.V = V
        self.emb = r.normal(size=(V, p))
        self.R = r.normal(size=(p, p)) * 0.5
        self.We = r.normal(size=(6, d))
        self.Wp = r.normal(size=(6, p))
        self.Wo = r.normal(size=(V, 6)) * 2.0
        self.bias = np.zeros(V) if bias is None else np.asarray(bias, dtype=float)

    def bind(self, H):
        return _ToyScorer(self, H)


class _ToyScorer:
    blank = 0

    def __init__(self, m, H):
        self.m, self.H, self.frames = m, H, H.shape[0]

    def start(self):
        return self.step(np.zeros(self.m.R.shape[0]), 0)

    def step(self, state, k):
        h = np.tanh(self.m.emb[k] + self.m.R @ state)
        return h, h

    def joint(self, t, g):
        z = self.m.Wo @ np.tanh(self.m.We @ self.H[t] + self.m.Wp @ g) + self.m.bias
        return z - np.logaddexp.reduce(z)


def test_greedy_all_blank():
    m = ToyTransducer(bias=[100.0, 0.0, 0.0])
    assert rnnt_greedy_decode(m, np.ones((4, 4))).tokens == ()


def test_greedy_forced_emit_then_blank():
    class Forced(ToyTransducer):
        def bind(self, H):
            sc = super().bind(H)

            def joint(t, g):
                emitted = not np.allclose(g, sc.start()[0])
                return np.log(np.array([0.9, 0.05, 0.05] if emitted else [0.1, 0.1, 0.8]))

            sc.joint = joint
            return sc

    assert rnnt_greedy_decode(Forced(), np.ones((1, 4))).tokens == (2,)


def test_greedy_respects_symbol_cap():
    m = ToyTransducer(bias=[-100.0, 50.0, 0.0])
    hyp = rnnt_greedy_decode(m, np.ones((3, 4)), max_symbols_per_frame=2)
    assert len(hyp.tokens) == 6
    with pytest.raises(ValueError):
        rnnt_greedy_decode(m, np.ones((3, 4)), max_symbols_per_frame=0)


@pytest.mark.parametrize("seed", range(10))
def test_beam_one_is_greedy(seed):
    m = ToyTransducer(V=4, seed=seed)
    H = np.random.default_rng(seed).normal(size=(6, 4))
    g = rnnt_greedy_decode(m, H)
    b = rnnt_beam_decode(m, H, beam=1)
    assert len(b) == 1 and b[0].tokens == g.tokens and b[0].score == g.score


@pytest.mark.parametrize("seed", range(10))
def test_beam_not_worse_than_greedy(seed):
    m = ToyTransducer(V=4, seed=seed)
    H = np.random.default_rng(seed).normal(size=(6, 4))
    hyps = rnnt_beam_decode(m, H, beam=4)
    assert hyps[0].score >= rnnt_greedy_decode(m, H).score
    assert all(a.score >= b.score for a, b in zip(hyps, hyps[1:]))


@pytest.mark.parametrize("seed", range(8))
def test_large_beam_finds_exhaustive_optimum(seed):
    m = ToyTransducer(V=3, seed=seed)
    H = np.random.default_rng(seed).normal(size=(2, 4))
    cap = 2
    n = count_paths(2, 2, cap)
    best, tokens = exhaustive_best_path(m.bind(H), cap)
    hyps = rnnt_beam_decode(m, H, beam=n, max_symbols_per_frame=cap)
    assert hyps[0].score == pytest.approx(best, abs=1e-12)
    assert hyps[0].tokens == tokens


@pytest.mark.parametrize("seed", range(10))
def test_beam_score_monotone_in_width(seed):
    m = ToyTransducer(V=4, seed=seed)
    H = np.random.default_rng(100 + seed).normal(size=(5, 4))
    scores = [rnnt_beam_decode(m, H, beam=b)[0].score for b in (1, 2, 4, 8, 16)]
    assert all(b >= a - 1e-12 for a, b in zip(scores, scores[1:]))

import numpy as np
import pytest

from jointslu import autodiff as ad
from jointslu.ctc import InfeasibleTarget
from jointslu.encoder import Encoder, EncoderConfig, sctc_loss, sinusoidal_positions
from jointslu.params import ParamStore
from oracles import ctc_brute_force_nll, log_softmax
from param_utils import param_grad_check


def small(layers=2, positions=(1, 2), widths=(3, 3), d=8, seed=0, **kw):
    cfg = EncoderConfig(layers=layers, d_model=d, heads=2, sctc_positions=list(positions),
                        sctc_targets=["asr"] * len(positions), **kw)
    store = ParamStore(seed)
    return Encoder(cfg, list(widths), store), store


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(d_model=10, heads=4)
    with pytest.raises(ValueError):
        EncoderConfig(sctc_positions=[2, 3])
    with pytest.raises(ValueError):
        EncoderConfig(sctc_positions=[3, 2, 4], sctc_targets=["asr"] * 3)
    with pytest.raises(ValueError):
        EncoderConfig(sctc_targets=["asr", "nlu"])


def test_zero_parameters_give_zero_output_and_uniform_emissions(rng):
    enc, store = small(widths=(5, 5))
    store.zero_()
    st = enc.encode(rng.normal(size=(6, 16)))
    np.testing.assert_array_equal(st.H.data, 0.0)
    for lg in st.head_logits:
        np.testing.assert_allclose(ad.softmax(lg).data, 0.2, atol=1e-15)


def test_zero_feedback_reduces_to_plain_stack(rng):
    enc, store = small()
    for i in range(2):
        store.zero_(f"enc.sctc{i}.lin1")
    frames = rng.normal(size=(5, 16))
    st = enc.encode(frames)
    for z in st.Z:
        np.testing.assert_array_equal(z.data, 0.0)
    np.testing.assert_array_equal(st.H.data, st.X[-1].data)
    # the stack without feedback, recomputed block by block
    x = st.X[0]
    for l in range(2):
        x = enc._block(x, l)
    np.testing.assert_array_equal(x.data, st.H.data)

    targets = [[1, 2], [2, 2]]
    expect = np.mean([ctc_brute_force_nll(log_softmax(lg.data), y) for lg, y in zip(st.head_logits, targets)])
    assert sctc_loss(st, targets).item() == pytest.approx(expect, abs=1e-10)


def test_sctc_is_mean_of_heads(rng):
    enc, _ = small(layers=3, positions=(1, 2, 3), widths=(3, 3, 3))
    st = enc.encode(rng.normal(size=(5, 16)))
    targets = [[1], [2, 1], [1, 1]]
    expect = np.mean([ctc_brute_force_nll(log_softmax(lg.data), y) for lg, y in zip(st.head_logits, targets)])
    assert sctc_loss(st, targets).item() == pytest.approx(expect, abs=1e-10)


def test_single_head(rng):
    enc, _ = small(positions=(2,), widths=(4,))
    st = enc.encode(rng.normal(size=(4, 16)))
    assert len(st.Z) == 1 and len(st.X) == 3
    np.testing.assert_allclose(st.H.data, st.X[-1].data + st.Z[0].data)


def test_feedback_enters_next_group(rng):
    enc, store = small(layers=2, positions=(1, 2))
    frames = rng.normal(size=(4, 16))
    st = enc.encode(frames)
    again = enc._block(ad.add(st.X[1], st.Z[0]), 1)
    np.testing.assert_array_equal(again.data, st.X[2].data)


def test_deterministic(rng):
    frames = rng.normal(size=(6, 16))
    a = small(seed=3)[0].encode(frames)
    b = small(seed=3)[0].encode(frames)
    assert np.array_equal(a.H.data, b.H.data)


def test_rejects_wrong_frame_width():
    enc, _ = small()
    with pytest.raises(ad.ShapeError):
        enc.encode(np.zeros((3, 5)))


def test_infeasible_head_target(rng):
    enc, _ = small()
    st = enc.encode(rng.normal(size=(2, 16)))
    with pytest.raises(InfeasibleTarget):
        sctc_loss(st, [[1, 1], [1]])


def test_positions_distinguish_frames():
    p = sinusoidal_positions(5, 16)
    assert p.shape == (5, 16)
    np.testing.assert_array_equal(p[0, 1::2], 1.0)
    assert len({tuple(r) for r in p.round(12)}) == 5


@pytest.mark.parametrize("name", ["enc.in.W", "enc.l0.att.Wq", "enc.l1.ln2.g", "enc.l0.ff.W1",
                                  "enc.sctc0.lin1.W", "enc.sctc1.lin2.b"])
def test_parameter_gradients(name):
    enc, store = small(d=8)
    frames = np.random.default_rng(5).normal(size=(4, 16))
    w = np.random.default_rng(6).normal(size=(4, 8))

    def loss():
        st = enc.encode(frames)
        return ad.add(sctc_loss(st, [[1], [2, 1]]), ad.reduce_sum(ad.mul(st.H, ad.Tensor(w))))

    assert param_grad_check(store, name, loss, ad.grad_check) <= 1e-4

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eccfm.backbone import (Backbone, BackboneConfig, ModelError, NeuralModel, ParamLayout, params_from_bytes,
                            params_to_bytes, preprocess, sigmoid)
from eccfm.channel import modulate_bpsk
from eccfm.codes import HAMMING74_H, ParityCheckMatrix

H = ParityCheckMatrix(HAMMING74_H)
SMALL = dict(depth=2, width=12, embed_dim=8)


def make(kind="mlp", output="codeword", seed=0, **kw):
    net = Backbone(BackboneConfig(7, 3, kind=kind, output=output, **{**SMALL, **kw}), H)
    return net, net.init(np.random.default_rng(seed))


def rel_err(a, b, floor=1e-6):
    return abs(a - b) / max(abs(a), abs(b), floor)


# --- preprocessing ----------------------------------------------------------------------

def test_preprocess_examples(hamming):
    cw = modulate_bpsk(hamming.codewords()[5])
    inp = preprocess(cw, H, 0.3)
    assert np.all(inp.syndrome_bipolar == 1.0)
    y = np.array([-0.5, 0.2, 0.1, -0.7, 0.3, 0.9, 1.1])
    inp = preprocess(y, H)
    assert inp.magnitude[0, 0] == 0.5
    assert inp.magnitude.shape[1] + inp.syndrome_bipolar.shape[1] == 2 * 7 - 4
    assert inp.sign[0].tolist() == [-1, 1, 1, -1, 1, 1, 1]
    with pytest.raises(ModelError, match="expected 7"):
        preprocess(np.ones(6), H)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=7, max_size=7))
def test_preprocess_invariants(y):
    inp = preprocess(np.array(y), H)
    assert np.all(inp.magnitude >= 0)
    assert set(np.unique(inp.syndrome_bipolar)) <= {-1.0, 1.0}


# --- configuration and layout -----------------------------------------------------------

@pytest.mark.parametrize("kw, fragment", [
    ({"kind": "transformer"}, "backbone kind"),
    ({"output": "llr"}, "output kind"),
    ({"depth": 0}, "depth and width"),
    ({"embed_dim": 5}, "embed_dim"),
])
def test_config_validation(kw, fragment):
    with pytest.raises(ModelError, match=fragment):
        BackboneConfig(7, 3, **kw)


def test_backbone_rejects_mismatched_code():
    with pytest.raises(ModelError, match="built for"):
        Backbone(BackboneConfig(8, 3), H)


def test_layout_is_contiguous():
    net, p = make()
    spans = sorted((lo, hi) for lo, hi, _ in net.layout.slices.values())
    assert spans[0][0] == 0 and spans[-1][1] == p.count == net.param_count
    assert all(a[1] == b[0] for a, b in zip(spans, spans[1:]))
    assert isinstance(net.layout, ParamLayout)


def test_init_bounds():
    net, p = make(width=16)
    w = p["block0.w1"]
    assert np.all(np.abs(w) <= 1 / np.sqrt(16)) and w.std() > 0
    assert not p["block0.b1"].any()


# --- embedding ----------------------------------------------------------------------------

def test_embed_condition_shape_determinism_and_sign():
    net, p = make()
    a = net.embed_condition(p, 0.4)
    assert a.shape == (8,)
    assert np.array_equal(a, net.embed_condition(p, 0.4))
    with pytest.raises(ModelError, match="non-negative"):
        net.embed_condition(p, -0.1)


@pytest.mark.parametrize("e", [0.0, 0.05, 0.7, 2.3])
def test_embed_condition_derivative(e):
    net, p = make(seed=3)
    cot = np.random.default_rng(1).normal(size=8)
    analytic = net.embed_condition_vjp(p, e, cot)[0]
    h = 1e-6
    fd = (net.embed_condition(p, e + h) @ cot - net.embed_condition(p, max(e - h, 0)) @ cot) / (h + min(h, e))
    tol = 1e-5 if e > 0 else 1e-4  # one-sided difference at the boundary
    assert rel_err(analytic, fd) < tol


# --- forward --------------------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["mlp", "tiny_cross_attention"])
def test_zero_params_give_half(kind):
    net, _ = make(kind)
    y = np.random.default_rng(0).normal(size=(4, 7))
    out = net.forward(net.zeros(), preprocess(y, H, 0.2))
    assert out.shape == (4, 7) and not out.any()
    assert np.all(NeuralModel(net, net.zeros()).predict_proba(y, 0.2) == 0.5)


@pytest.mark.parametrize("kind", ["mlp", "tiny_cross_attention"])
@pytest.mark.parametrize("output", ["codeword", "noise"])
def test_batching_consistency(kind, output):
    net, p = make(kind, output)
    rng = np.random.default_rng(2)
    y = rng.normal(size=(5, 7))
    e = rng.uniform(0, 1, size=5)
    batched = net.forward(p, preprocess(y, H, e))
    for b in range(5):
        assert np.allclose(batched[b], net.forward(p, preprocess(y[b], H, e[b]))[0], atol=1e-13)


def test_forward_rejects_non_finite():
    net, p = make()
    with pytest.raises(ModelError, match="non-finite decoder input"):
        net.forward(p, preprocess(np.ones(7), H, np.nan))
    bad = p.copy()
    bad.values[3] = np.inf
    with pytest.raises(ModelError, match="non-finite parameters"):
        net.forward(bad, preprocess(np.ones(7), H))
    _, q = make(width=10)
    with pytest.raises(ModelError, match="layout"):
        net.forward(q, preprocess(np.ones(7), H))


@pytest.mark.parametrize("kind", ["mlp", "tiny_cross_attention"])
def test_codeword_head_equivariance(kind, hamming):
    # flipping y by a codeword leaves |y| and the syndrome unchanged, so the predicted
    # codeword flips by exactly that codeword
    net, p = make(kind, seed=5)
    rng = np.random.default_rng(6)
    y = rng.normal(1, 0.7, size=(6, 7))
    c = modulate_bpsk(hamming.codewords()[rng.integers(1, 16, size=6)])
    base = net.forward(p, preprocess(y, H, 0.3))
    moved = net.forward(p, preprocess(y * c, H, 0.3))
    assert np.allclose(moved, base * c, atol=1e-12)


# --- backward --------------------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["mlp", "tiny_cross_attention"])
@pytest.mark.parametrize("output", ["codeword", "noise"])
def test_parameter_gradient_finite_differences(kind, output):
    net, p = make(kind, output, seed=7)
    rng = np.random.default_rng(8)
    inp = preprocess(rng.normal(size=(3, 7)), H, rng.uniform(0, 1, 3))
    cot = rng.normal(size=(3, 7))
    g = net.backward(p, inp, cot)
    h = 1e-5
    worst = 0.0
    for i in rng.choice(p.count, size=25, replace=False):
        up, dn = p.values.copy(), p.values.copy()
        up[i] += h
        dn[i] -= h
        fd = (np.sum(net.forward(p.with_values(up), inp) * cot)
              - np.sum(net.forward(p.with_values(dn), inp) * cot)) / (2 * h)
        worst = max(worst, rel_err(g[i], fd))
    assert worst < 1e-4


@pytest.mark.parametrize("kind", ["mlp", "tiny_cross_attention"])
def test_input_gradient_finite_differences(kind):
    net, p = make(kind, seed=9)
    rng = np.random.default_rng(10)
    inp = preprocess(rng.normal(size=(2, 7)), H, np.array([0.3, 0.8]))
    cot = rng.normal(size=(2, 7))
    _, gin = net.backward(p, inp, cot, wrt_input=True)
    h = 1e-6

    def value(**kw):
        return np.sum(net.forward(p, replace(inp, **kw)) * cot)

    for b in range(2):
        cu, cd = inp.condition.copy(), inp.condition.copy()
        cu[b] += h
        cd[b] -= h
        assert rel_err(gin["condition"][b], (value(condition=cu) - value(condition=cd)) / (2 * h)) < 1e-5
        mu, md = inp.magnitude.copy(), inp.magnitude.copy()
        mu[b, 2] += h
        md[b, 2] -= h
        assert rel_err(gin["magnitude"][b, 2], (value(magnitude=mu) - value(magnitude=md)) / (2 * h)) < 1e-5


def test_backward_zero_cotangent_and_determinism():
    net, p = make()
    inp = preprocess(np.random.default_rng(11).normal(size=(3, 7)), H, 0.5)
    assert not net.backward(p, inp, np.zeros((3, 7))).any()
    cot = np.ones((3, 7))
    assert np.array_equal(net.backward(p, inp, cot), net.backward(p, inp, cot))
    with pytest.raises(ModelError, match="cotangent shape"):
        net.backward(p, inp, np.ones((2, 7)))


# --- persistence ------------------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["mlp", "tiny_cross_attention"])
def test_save_load_round_trip(kind):
    net, p = make(kind, seed=12)
    data = params_to_bytes(net.config, p, {"ema": p.values * 2}, {"epoch": 3})
    net2, p2, header, arrays = params_from_bytes(data, H)
    assert net2.config == net.config
    assert np.array_equal(p2.values, p.values) and p2.version == p.version
    assert np.array_equal(arrays["ema"], p.values * 2)
    assert header["meta"] == {"epoch": 3}


def test_load_rejects_version():
    net, p = make()
    p.version = "other/9"
    with pytest.raises(ModelError, match="unsupported checkpoint version"):
        params_from_bytes(params_to_bytes(net.config, p), H)


def test_neural_model_probabilities():
    net, p = make()
    model = NeuralModel(net, p)
    y = np.random.default_rng(13).normal(size=(2, 7))
    assert np.allclose(model.predict_proba(y, 0.1), sigmoid(net.forward(p, preprocess(y, H, 0.1))))
    with pytest.raises(ModelError, match="condition kind"):
        NeuralModel(net, p, "mixed")

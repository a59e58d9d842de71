import math

import numpy as np
import pytest

from psychonet import autograd as ag
from psychonet.autograd import ComplexParameter, ComplexTensor, Parameter, Tensor
from psychonet.complex_nn import (ComplexBatchNorm2d, ComplexConv2d, ComplexLinear, complex_avgpool_global,
                                  complex_batchnorm2d, complex_conv2d, complex_gelu, complex_linear)
from psychonet.models import count_params
from psychonet.nn import BatchNorm2d

from conftest import complex_randn
from oracles import complex_linear_loops, conv2d_loops


def ct(z, grad=False):
    return ComplexTensor.from_numpy(np.asarray(z), requires_grad=grad)


def complex_probe_loss(y, p, q):
    return ag.add(ag.tsum(ag.mul(y.re, p)), ag.tsum(ag.mul(y.im, q)))


def whiten(h, training=True, eps=1e-5):
    c = h.shape[1]
    rm = np.zeros((2, c))
    rc = np.array([np.ones(c), np.zeros(c), np.ones(c)])
    return complex_batchnorm2d(h, None, None, None, None, rm, rc, training, eps=eps)


def channel_stats(z):
    a, b = z.real, z.imag
    ax = (0, 2, 3)
    return a.mean(ax), b.mean(ax), a.var(ax), b.var(ax), ((a - a.mean(ax, keepdims=True)) * (b - b.mean(ax, keepdims=True))).mean(ax)


# ---------------------------------------------------------------------------
# complex convolution
# ---------------------------------------------------------------------------

def test_conv_real_kernel_on_real_input(f64, rng):
    a = rng.normal(size=(2, 3, 6, 6))
    w = rng.normal(size=(4, 3, 3, 3))
    out = complex_conv2d(ct(a + 0j), Tensor(w), Tensor(np.zeros_like(w)), padding=1)
    np.testing.assert_allclose(out.re.data, ag.conv2d(Tensor(a), Tensor(w), padding=1).data)
    np.testing.assert_array_equal(out.im.data, 0)


def test_conv_by_i_rotates(f64, rng):
    z = complex_randn(rng, 1, 1, 4, 4)
    out = complex_conv2d(ct(z), Tensor(np.zeros((1, 1, 1, 1))), Tensor(np.ones((1, 1, 1, 1)))).numpy()
    np.testing.assert_allclose(out, -z.imag + 1j * z.real)


@pytest.mark.parametrize("stride,padding,k", [(1, 1, 3), (2, 1, 3), (1, 0, 1)])
def test_conv_matches_complex_arithmetic_oracle(f64, rng, stride, padding, k):
    h = complex_randn(rng, 2, 3, 6, 6)
    w = complex_randn(rng, 4, 3, k, k)
    bias = complex_randn(rng, 4)
    out = complex_conv2d(ct(h), Tensor(w.real), Tensor(w.imag), ct(bias), stride, padding).numpy()
    ref = conv2d_loops(h, w, bias, stride, padding)
    assert np.abs(out - ref).max() < 1e-6


def test_conv_linearity(f64, rng):
    h1, h2 = complex_randn(rng, 1, 2, 5, 5), complex_randn(rng, 1, 2, 5, 5)
    w1, w2 = complex_randn(rng, 3, 2, 3, 3), complex_randn(rng, 3, 2, 3, 3)
    conv = lambda h, w: complex_conv2d(ct(h), Tensor(w.real), Tensor(w.imag), padding=1).numpy()
    assert np.abs(conv(h1 + h2, w1) - conv(h1, w1) - conv(h2, w1)).max() < 1e-6
    assert np.abs(conv(h1, w1 + w2) - conv(h1, w1) - conv(h1, w2)).max() < 1e-6


def test_conv_conjugation_symmetry(f64, rng):
    h, w, b = complex_randn(rng, 1, 2, 5, 5), complex_randn(rng, 3, 2, 3, 3), complex_randn(rng, 3)
    out = complex_conv2d(ct(h), Tensor(w.real), Tensor(w.imag), ct(b), padding=1).numpy()
    conj = complex_conv2d(ct(h.conj()), Tensor(w.real), Tensor(-w.imag), ct(b.conj()), padding=1).numpy()
    np.testing.assert_allclose(conj, out.conj(), atol=1e-12)


def test_conv_shape_mismatch():
    with pytest.raises(ValueError, match="does not match"):
        complex_conv2d(ct(np.zeros((1, 2, 4, 4), complex)), Tensor(np.zeros((1, 3, 1, 1))), Tensor(np.zeros((1, 3, 1, 1))))


@pytest.mark.parametrize("kernel,stride,bias", [(1, 1, False), (3, 1, True), (3, 2, False), (1, 2, True)])
def test_conv_layer_gradcheck(f64, rng, kernel, stride, bias):
    layer = ComplexConv2d(2, 3, kernel, stride, bias=bias, rng=rng)
    h = ct(complex_randn(rng, 2, 2, 5, 5), grad=True)
    y0 = layer(h)
    p, q = rng.normal(size=y0.shape), rng.normal(size=y0.shape)
    assert ag.gradcheck(lambda: complex_probe_loss(layer(h), p, q), [h] + layer.parameters()) < 1e-4


def test_conv_init_scale(rng):
    layer = ComplexConv2d(64, 64, 3, rng=rng)
    fan_in = 64 * 9
    std = np.concatenate([layer.weight.re.data.ravel(), layer.weight.im.data.ravel()]).std()
    assert std == pytest.approx(math.sqrt(2 / fan_in) / math.sqrt(2), rel=0.05)


# ---------------------------------------------------------------------------
# complex batch norm
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("scale", [2.0, 5.0, 40.0])
def test_whitening_statistics(f64, rng, scale):
    # rotated, correlated input well above the eps floor
    a = rng.normal(size=(8, 3, 5, 5))
    b = 0.6 * a + 0.8 * rng.normal(size=a.shape)
    z = scale * (a + 1j * b) + (1 - 2j)
    out = whiten(ct(z)).numpy()
    for stat, target in zip(channel_stats(out), (0, 0, 1, 1, 0)):
        assert np.abs(stat - target).max() < 1e-5


def test_whitening_invariant_to_global_complex_scale(f64, rng):
    z = 3 * complex_randn(rng, 6, 2, 4, 4)
    out1 = whiten(ct(z)).numpy()
    out2 = whiten(ct((2.5 - 4j) * z)).numpy()
    s1, s2 = channel_stats(out1), channel_stats(out2)
    for a, b in zip(s1, s2):
        assert np.abs(a - b).max() < 1e-5


def test_real_input_matches_real_batchnorm(f64, rng):
    a = rng.normal(loc=1, scale=2, size=(6, 3, 4, 4))
    out = whiten(ct(a + 0j)).numpy()
    np.testing.assert_array_equal(out.imag, 0)
    bn = BatchNorm2d(3)
    ref = bn(Tensor(a)).data
    assert np.abs(out.real - ref).max() < 1e-4


def test_affine_identity_scaling(f64, rng):
    z = 3 * complex_randn(rng, 8, 2, 4, 4)
    w = whiten(ct(z)).numpy()
    bn = ComplexBatchNorm2d(2)
    out = bn(ct(w)).numpy()
    assert np.abs(out - w / math.sqrt(2)).max() < 1e-5


def test_single_sample_rejected_in_training():
    with pytest.raises(ValueError):
        ComplexBatchNorm2d(2)(ct(np.ones((1, 2, 1, 1), complex)))


def test_running_estimates_and_eval_mode(f64, rng):
    bn = ComplexBatchNorm2d(2)
    z = 2 * complex_randn(rng, 16, 2, 4, 4) + (3 + 1j)
    for _ in range(200):
        bn(ct(z))
    np.testing.assert_allclose(bn.running_mean[0], z.real.mean(axis=(0, 2, 3)), rtol=1e-6)
    np.testing.assert_allclose(bn.running_mean[1], z.imag.mean(axis=(0, 2, 3)), rtol=1e-6)
    train_out = bn(ct(z)).numpy()
    bn.eval()
    eval_out = bn(ct(z)).numpy()
    # the running covariance is the unbiased estimate, m/(m-1) times the batch covariance
    m = 16 * 4 * 4
    assert np.abs(eval_out - train_out * math.sqrt((m - 1) / m)).max() < 1e-5


def test_eval_is_per_sample(f64, rng):
    bn = ComplexBatchNorm2d(2)
    bn(ct(complex_randn(rng, 8, 2, 3, 3)))
    bn.eval()
    z = complex_randn(rng, 4, 2, 3, 3)
    full = bn(ct(z)).numpy()
    single = np.concatenate([bn(ct(z[i:i + 1])).numpy() for i in range(4)])
    np.testing.assert_allclose(full, single, atol=1e-12)


@pytest.mark.parametrize("training", [True, False])
def test_batchnorm_gradcheck(f64, rng, training):
    bn = ComplexBatchNorm2d(3)
    bn.gamma_ri.data = rng.normal(size=3) * 0.3
    bn.beta = ComplexParameter(rng.normal(size=3), rng.normal(size=3))
    bn.running_mean[:] = rng.normal(size=(2, 3))
    bn.running_cov[:] = np.array([[2.0, 1.5, 1.0], [0.3, -0.2, 0.1], [1.0, 2.0, 3.0]])
    h = ct(complex_randn(rng, 3, 3, 3, 3), grad=True)
    p, q = rng.normal(size=h.shape), rng.normal(size=h.shape)
    bn.train(training)
    state = (bn.running_mean.copy(), bn.running_cov.copy())

    def f():
        bn.running_mean[:], bn.running_cov[:] = state
        return complex_probe_loss(bn(h), p, q)

    assert ag.gradcheck(f, [h] + bn.parameters()) < 1e-4


# ---------------------------------------------------------------------------
# gelu, pooling, linear
# ---------------------------------------------------------------------------

def test_gelu_zero_and_real_axis(f64, rng):
    np.testing.assert_array_equal(complex_gelu(ct(np.zeros(3, complex))).numpy(), 0)
    x = rng.normal(size=5)
    out = complex_gelu(ct(x + 0j)).numpy()
    np.testing.assert_allclose(out.real, ag.gelu(Tensor(x)).data)
    np.testing.assert_array_equal(out.imag, 0)


def test_gelu_gradcheck(f64, rng):
    h = ct(complex_randn(rng, 2, 3, 4), grad=True)
    p, q = rng.normal(size=h.shape), rng.normal(size=h.shape)
    assert ag.gradcheck(lambda: complex_probe_loss(complex_gelu(h), p, q), h) < 1e-4


def test_avgpool_constant_and_cancellation(f64):
    z = np.full((1, 1, 3, 3), 2 - 1j)
    np.testing.assert_allclose(complex_avgpool_global(ct(z)).numpy(), [[2 - 1j]])
    z = np.array([[1, 1j], [-1, -1j]]).reshape(1, 1, 2, 2)
    np.testing.assert_allclose(complex_avgpool_global(ct(z)).numpy(), [[0]], atol=1e-15)


def test_avgpool_matches_mean(f64, rng):
    z = complex_randn(rng, 2, 3, 4, 5)
    np.testing.assert_allclose(complex_avgpool_global(ct(z)).numpy(), z.mean(axis=(2, 3)))


def test_linear_identity(f64, rng):
    h = complex_randn(rng, 3, 4)
    out = complex_linear(ct(h), ComplexParameter(np.eye(4), np.zeros((4, 4)))).numpy()
    np.testing.assert_allclose(out, h)


def test_linear_parameter_count():
    assert count_params(ComplexLinear(512, 10)) == 10_260


def test_linear_matches_oracle(f64, rng):
    h, W, b = complex_randn(rng, 3, 6), complex_randn(rng, 4, 6), complex_randn(rng, 4)
    out = complex_linear(ct(h), ct(W), ct(b)).numpy()
    assert np.abs(out - complex_linear_loops(h, W, b)).max() < 1e-6


def test_linear_dim_mismatch():
    with pytest.raises(ValueError):
        ComplexLinear(4, 2)(ct(np.zeros((1, 5), complex)))


def test_linear_gradcheck(f64, rng):
    layer = ComplexLinear(5, 3, rng=rng)
    h = ct(complex_randn(rng, 2, 5), grad=True)
    p, q = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    assert ag.gradcheck(lambda: complex_probe_loss(layer(h), p, q), [h] + layer.parameters()) < 1e-4

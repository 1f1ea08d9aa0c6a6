import math

import numpy as np
import pytest

from dnhb.autoencoder.layers import (
    CacheError,
    ComplexDenseLayer,
    PhaseShiftLayer,
    channel_layer_backward,
    channel_layer_forward,
    complex_dense_backward,
    complex_dense_forward,
    concat_users,
    phase_layer_backward,
    phase_layer_forward,
    power_normalize_backward,
    power_normalize_forward,
    split_users,
)
from dnhb.channel import channel_from_geometry
from dnhb.numerics import ComplexMatrix, NumericError, Rng, ShapeError, cmat_mul, finite_diff_gradient

from conftest import random_batch, rel_err, single_path

H = 1e-6
GRAD_TOL = 1e-5


def linear_functional(y, c):
    """Scalar probe <c, y> whose gradient w.r.t. y is c."""
    return float(np.sum(c.re * y.re) + np.sum(c.im * y.im))


def fd_wrt_planes(fn, x):
    """Finite-difference gradient of ``fn(ComplexMatrix)`` w.r.t. both planes."""
    shape = x.shape

    def f(v):
        return fn(ComplexMatrix(v[: v.size // 2].reshape(shape), v[v.size // 2:].reshape(shape)))

    g = finite_diff_gradient(f, np.concatenate([x.re.ravel(), x.im.ravel()]), H)
    return g[: g.size // 2].reshape(shape), g[g.size // 2:].reshape(shape)


def dense(w_re, w_im, b_re=None, b_im=None, act="identity"):
    w_re, w_im = np.atleast_2d(w_re).astype(float), np.atleast_2d(w_im).astype(float)
    out = w_re.shape[0]
    return ComplexDenseLayer(
        w_re, w_im,
        np.zeros(out) if b_re is None else np.asarray(b_re, float),
        np.zeros(out) if b_im is None else np.asarray(b_im, float),
        act,
    )


class TestDenseForward:
    def test_identity_map(self):
        layer = dense(np.eye(3), np.zeros((3, 3)))
        x = random_batch(Rng(0), 4, 3)
        y, _ = complex_dense_forward(layer, x)
        assert y.allclose(x, atol=0)

    def test_multiplication_by_j(self):
        layer = dense(np.zeros((2, 2)), np.eye(2))
        x = random_batch(Rng(1), 3, 2)
        y, _ = complex_dense_forward(layer, x)
        np.testing.assert_allclose(y.to_complex(), 1j * x.to_complex(), atol=0)

    def test_tanh_matches_scalar_loop(self):
        rng = Rng(2)
        layer = ComplexDenseLayer.init(3, 2, rng, "tanh")
        layer.b_re[:] = rng.normal(2)
        layer.b_im[:] = rng.normal(2)
        x = random_batch(rng, 5, 3)
        y, _ = complex_dense_forward(layer, x)
        for b in range(5):
            for o in range(2):
                zr = layer.b_re[o]
                zi = layer.b_im[o]
                for i in range(3):
                    zr += layer.w_re[o, i] * x.re[b, i] - layer.w_im[o, i] * x.im[b, i]
                    zi += layer.w_re[o, i] * x.im[b, i] + layer.w_im[o, i] * x.re[b, i]
                assert abs(y.re[b, o] - math.tanh(zr)) < 1e-12
                assert abs(y.im[b, o] - math.tanh(zi)) < 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            complex_dense_forward(dense(np.eye(2), np.zeros((2, 2))), random_batch(Rng(0), 1, 3))


class TestDenseBackward:
    def test_identity_layer_passes_gradient(self):
        layer = dense(np.eye(2), np.zeros((2, 2)))
        x = random_batch(Rng(3), 4, 2)
        _, cache = complex_dense_forward(layer, x)
        g = random_batch(Rng(4), 4, 2)
        dx, _ = complex_dense_backward(layer, cache, g)
        assert dx.allclose(g, atol=0)

    def test_tanh_unit_slope_at_zero(self):
        layer = dense([[1.0]], [[0.0]], act="tanh")
        x = ComplexMatrix.zeros(1, 1)
        _, cache = complex_dense_forward(layer, x)
        dx, _ = complex_dense_backward(layer, cache, ComplexMatrix.from_complex([[1 + 1j]]))
        np.testing.assert_array_equal(dx.to_complex(), [[1 + 1j]])

    @pytest.mark.parametrize("act", ["identity", "tanh"])
    def test_finite_difference(self, act):
        rng = Rng(5)
        layer = ComplexDenseLayer.init(3, 4, rng, act)
        layer.b_re[:] = 0.1 * rng.normal(4)
        layer.b_im[:] = 0.1 * rng.normal(4)
        x = random_batch(rng, 6, 3)
        c = random_batch(rng, 6, 4)
        _, cache = complex_dense_forward(layer, x)
        dx, grads = complex_dense_backward(layer, cache, c)

        for name in ("w_re", "w_im", "b_re", "b_im"):
            param = getattr(layer, name)
            orig = param.copy()

            def f(v, name=name, param=param):
                param[...] = v.reshape(param.shape)
                return linear_functional(complex_dense_forward(layer, x)[0], c)

            fd = finite_diff_gradient(f, orig.ravel(), H)
            param[...] = orig
            assert rel_err(grads[name], fd) < GRAD_TOL, name

        fd_re, fd_im = fd_wrt_planes(lambda z: linear_functional(complex_dense_forward(layer, z)[0], c), x)
        assert rel_err(dx.re, fd_re) < GRAD_TOL
        assert rel_err(dx.im, fd_im) < GRAD_TOL

    def test_foreign_cache(self):
        a = ComplexDenseLayer.init(2, 2, Rng(0))
        b = ComplexDenseLayer.init(2, 2, Rng(1))
        _, cache = complex_dense_forward(a, random_batch(Rng(2), 1, 2))
        with pytest.raises(CacheError):
            complex_dense_backward(b, cache, random_batch(Rng(3), 1, 2))


def phase(theta, in_dim, out_dim, side="tx", topology="fully_connected"):
    return PhaseShiftLayer(in_dim, out_dim, side, topology, np.asarray(theta, float))


class TestPhaseForward:
    def test_quarter_turn(self):
        layer = phase([[math.pi / 2]], 1, 1)
        y, _ = phase_layer_forward(layer, ComplexMatrix.from_complex([[1.0]]))
        np.testing.assert_allclose(y.to_complex(), [[1j]], atol=1e-15)

    def test_zero_phases_sum_inputs(self):
        layer = phase(np.zeros((3, 4)), 3, 4)
        x = random_batch(Rng(6), 5, 3)
        y, _ = phase_layer_forward(layer, x)
        expect = x.to_complex().sum(axis=1, keepdims=True) * np.ones((1, 4))
        np.testing.assert_allclose(y.to_complex(), expect, atol=1e-12)

    @pytest.mark.parametrize("side,topology,i,o", [
        ("tx", "fully_connected", 2, 6),
        ("tx", "partially_connected", 2, 6),
        ("rx", "fully_connected", 4, 2),
        ("rx", "partially_connected", 4, 2),
    ])
    def test_matches_matrix_form(self, side, topology, i, o):
        rng = Rng(7)
        layer = PhaseShiftLayer.init(i, o, side, topology, rng)
        x = random_batch(rng, 5, i)
        y, _ = phase_layer_forward(layer, x)
        ref = cmat_mul(x, ComplexMatrix.from_complex(layer.coefficients()))
        assert y.allclose(ref, atol=1e-12)

    def test_partial_blocks_are_disjoint(self):
        layer = PhaseShiftLayer.init(2, 6, "tx", "partially_connected", Rng(0))
        mask = layer.mask()
        assert mask.sum() == 6
        assert mask[0].tolist() == [True] * 3 + [False] * 3
        assert mask[1].tolist() == [False] * 3 + [True] * 3
        layer = PhaseShiftLayer.init(4, 2, "rx", "partially_connected", Rng(0))
        assert layer.mask().tolist() == [[True, False], [True, False], [False, True], [False, True]]

    def test_unit_modulus(self):
        layer = PhaseShiftLayer.init(3, 8, "tx", "fully_connected", Rng(9))
        np.testing.assert_allclose(np.abs(layer.coefficients()), 1.0, rtol=0, atol=1e-15)

    def test_partial_divisibility(self):
        with pytest.raises(ShapeError, match="divisible"):
            PhaseShiftLayer.init(3, 8, "tx", "partially_connected", Rng(0))


class TestPhaseBackward:
    def test_real_output_slope_at_zero(self):
        layer = phase([[0.0]], 1, 1)
        _, cache = phase_layer_forward(layer, ComplexMatrix.from_complex([[1.0]]))
        _, dtheta = phase_layer_backward(layer, cache, ComplexMatrix.from_complex([[1.0]]))
        assert dtheta[0, 0] == 0.0

    def test_imag_output_slope_at_zero(self):
        layer = phase([[0.0]], 1, 1)
        _, cache = phase_layer_forward(layer, ComplexMatrix.from_complex([[1.0]]))
        _, dtheta = phase_layer_backward(layer, cache, ComplexMatrix.from_complex([[1j]]))
        assert dtheta[0, 0] == 1.0

    @pytest.mark.parametrize("side,topology,i,o", [
        ("tx", "fully_connected", 2, 4),
        ("tx", "partially_connected", 2, 4),
        ("rx", "fully_connected", 4, 2),
        ("rx", "partially_connected", 6, 3),
    ])
    def test_finite_difference(self, side, topology, i, o):
        rng = Rng(10)
        layer = PhaseShiftLayer.init(i, o, side, topology, rng)
        x = random_batch(rng, 5, i)
        c = random_batch(rng, 5, o)
        _, cache = phase_layer_forward(layer, x)
        dx, dtheta = phase_layer_backward(layer, cache, c)
        orig = layer.theta.copy()

        def f(v):
            layer.theta[...] = v.reshape(orig.shape)
            return linear_functional(phase_layer_forward(layer, x)[0], c)

        fd = finite_diff_gradient(f, orig.ravel(), H)
        layer.theta[...] = orig
        assert dtheta.shape == orig.shape
        assert rel_err(dtheta, fd) < GRAD_TOL
        fd_re, fd_im = fd_wrt_planes(lambda z: linear_functional(phase_layer_forward(layer, z)[0], c), x)
        assert rel_err(dx.re, fd_re) < GRAD_TOL
        assert rel_err(dx.im, fd_im) < GRAD_TOL


class TestPowerNormalize:
    def test_halving(self):
        x = ComplexMatrix.from_complex([[1 + 1j, 1 - 1j]])  # sum |s|^2 = 4
        y, _ = power_normalize_forward(x, 1.0)
        np.testing.assert_allclose(y.to_complex(), 0.5 * x.to_complex(), atol=1e-15)

    def test_fixed_point(self):
        x = ComplexMatrix.from_complex([[0.6, 0.8j]])
        y, _ = power_normalize_forward(x, 1.0)
        assert y.allclose(x, atol=1e-15)

    @pytest.mark.parametrize("power", [0.5, 1.0, 10.0])
    def test_output_power(self, power):
        x = random_batch(Rng(11), 50, 8, scale=3.0)
        y, _ = power_normalize_forward(x, power)
        np.testing.assert_allclose(np.sum(y.re**2 + y.im**2, axis=1), power, rtol=0, atol=1e-12)

    def test_zero_vector(self):
        with pytest.raises(NumericError):
            power_normalize_forward(ComplexMatrix.zeros(2, 3), 1.0)

    def test_radial_gradient_vanishes(self):
        x = random_batch(Rng(12), 4, 5)
        y, cache = power_normalize_forward(x, 2.0)
        g = power_normalize_backward(cache, ComplexMatrix(2 * y.re, 2 * y.im))  # d||y||^2/dy
        np.testing.assert_allclose(g.re, 0.0, atol=1e-12)
        np.testing.assert_allclose(g.im, 0.0, atol=1e-12)

    def test_one_dimensional_symbolic(self):
        # y = sqrt(P) s/|s| = sqrt(P) e^{j arg s}; for loss Im(y), the gradient
        # w.r.t. (a, b) with s = a + jb is sqrt(P) * (-a b, a^2) / |s|^3
        a, b, p = 0.7, -0.4, 3.0
        _, cache = power_normalize_forward(ComplexMatrix.from_complex([[a + 1j * b]]), p)
        g = power_normalize_backward(cache, ComplexMatrix.from_complex([[1j]]))
        r3 = (a * a + b * b) ** 1.5
        assert abs(g.re[0, 0] - math.sqrt(p) * (-a * b) / r3) < 1e-14
        assert abs(g.im[0, 0] - math.sqrt(p) * (a * a) / r3) < 1e-14

    def test_finite_difference(self):
        rng = Rng(13)
        x = random_batch(rng, 4, 6)
        c = random_batch(rng, 4, 6)
        _, cache = power_normalize_forward(x, 1.5)
        g = power_normalize_backward(cache, c)
        fd_re, fd_im = fd_wrt_planes(lambda z: linear_functional(power_normalize_forward(z, 1.5)[0], c), x)
        assert rel_err(g.re, fd_re) < GRAD_TOL
        assert rel_err(g.im, fd_im) < GRAD_TOL


class TestChannelLayer:
    def test_identity_channel_noiseless(self):
        x = random_batch(Rng(14), 3, 2)
        (y,), _ = channel_layer_forward([ComplexMatrix.identity(2)], x, 0.0)
        assert y.allclose(x, atol=0)

    def test_rank_one_output_in_receive_span(self):
        h = channel_from_geometry(4, 8, single_path(0.3, -0.9))
        x = random_batch(Rng(15), 10, 8)
        (y,), _ = channel_layer_forward([h], x, 0.0)
        a_r = np.exp(1j * math.pi * np.arange(4) * math.sin(0.3)) / 2.0
        yc = y.to_complex()
        residual = yc - np.outer(yc @ a_r.conj(), a_r)
        assert np.max(np.abs(residual)) < 1e-10

    def test_matches_loop_oracle(self):
        rng = Rng(16)
        hs = [random_batch(rng, 3, 4), random_batch(rng, 3, 4)]
        x = random_batch(rng, 2, 4)
        noise = [random_batch(rng, 2, 3), random_batch(rng, 2, 3)]
        ys, _ = channel_layer_forward(hs, x, 1.0, noise=noise)
        for k in range(2):
            hc, xc, nc = hs[k].to_complex(), x.to_complex(), noise[k].to_complex()
            for b in range(2):
                for m in range(3):
                    ref = sum(complex(hc[m, n]) * complex(xc[b, n]) for n in range(4)) + nc[b, m]
                    assert abs(ys[k].to_complex()[b, m] - ref) < 1e-12

    def test_noise_statistics(self):
        x = ComplexMatrix.zeros(50_000, 1)
        (y,), _ = channel_layer_forward([ComplexMatrix.identity(1)], x, 0.25, Rng(17))
        assert abs(np.mean(np.abs(y.to_complex()) ** 2) - 0.25) < 0.005

    def test_backward_finite_difference(self):
        rng = Rng(18)
        hs = [random_batch(rng, 3, 4), random_batch(rng, 2, 4)]
        x = random_batch(rng, 5, 4)
        cs = [random_batch(rng, 5, 3), random_batch(rng, 5, 2)]
        noise = [random_batch(rng, 5, 3), random_batch(rng, 5, 2)]
        _, cache = channel_layer_forward(hs, x, 1.0, noise=noise)
        g = channel_layer_backward(cache, cs)
        expect = sum(c.to_complex() @ h.to_complex().conj() for c, h in zip(cs, hs))
        np.testing.assert_allclose(g.to_complex(), expect, atol=1e-12)

        def probe(z):
            ys, _ = channel_layer_forward(hs, z, 1.0, noise=noise)
            return sum(linear_functional(y, c) for y, c in zip(ys, cs))

        fd_re, fd_im = fd_wrt_planes(probe, x)
        assert rel_err(g.re, fd_re) < GRAD_TOL
        assert rel_err(g.im, fd_im) < GRAD_TOL

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            channel_layer_forward([ComplexMatrix.identity(3)], random_batch(Rng(0), 1, 2), 0.0)


class TestSplitUsers:
    def test_single_user_identity(self):
        x = random_batch(Rng(19), 3, 4)
        (part,) = split_users(x, 1)
        assert part.allclose(x, atol=0)

    def test_two_halves(self):
        x = random_batch(Rng(20), 3, 4)
        a, b = split_users(x, 2)
        np.testing.assert_array_equal(a.re, x.re[:, :2])
        np.testing.assert_array_equal(b.im, x.im[:, 2:])

    def test_round_trip(self):
        x = random_batch(Rng(21), 2, 6)
        assert concat_users(split_users(x, 3)).allclose(x, atol=0)

    def test_count_mismatch(self):
        with pytest.raises(ShapeError):
            split_users(random_batch(Rng(0), 1, 5), 2)

import math

import numpy as np
import pytest

from dnhb.autoencoder import (
    ComplexDenseLayer,
    PhaseShiftLayer,
    RxChain,
    DnhbModel,
    StaleCacheError,
    TrainConfig,
    TrainingDiverged,
    UnsupportedModeError,
    backward,
    build_model,
    extract_matrices,
    forward,
    load_model,
    loss,
    save_model,
    train,
    train_with_restarts,
)
from dnhb.autoencoder.checkpoint import CheckpointError
from dnhb.autoencoder.train import sample_symbols
from dnhb.baselines import evaluate_linear_transceiver, from_extracted
from dnhb.channel import SystemConfig
from dnhb.modulation import constellation
from dnhb.numerics import ComplexMatrix, Rng, ShapeError, cmat_mul, finite_diff_gradient

from conftest import fixed_realization, random_batch, rel_err

QPSK = constellation("qpsk")


def scalar_cfg():
    return SystemConfig(n_t=1, n_r=1, n_rf_t=1, n_rf_r=1, n_s=1, k_users=1)


def pass_through_model(cfg):
    """Every stage is the identity: unit weights, zero phases."""
    def unit():
        return ComplexDenseLayer(np.ones((1, 1)), np.zeros((1, 1)), np.zeros(1), np.zeros(1), "identity")

    tx_a = PhaseShiftLayer(1, 1, "tx", "fully_connected", np.zeros((1, 1)))
    rx = [RxChain(PhaseShiftLayer(1, 1, "rx", "fully_connected", np.zeros((1, 1))), [unit()])]
    return DnhbModel(cfg, [unit()], tx_a, rx, mode="linear")


def check_model_gradient(model, realization, symbols, sigma2, rng):
    _, cache = forward(model, symbols, realization, sigma2, rng)
    grads = backward(model, cache, symbols)
    noise = cache.channel.noise
    base = model.get_flat()

    def f(v):
        model.set_flat(v)
        out, _ = forward(model, symbols, realization, sigma2, noise=noise)
        return loss(symbols, out)

    fd = finite_diff_gradient(f, base, 1e-6)
    model.set_flat(base)
    pos = 0
    worst = {}
    for name, p in model.parameters().items():
        worst[name] = rel_err(grads[name], fd[pos:pos + p.size])
        pos += p.size
    return worst


class TestBuild:
    def test_dimensions_chain(self, desk_cfg):
        m = build_model(desk_cfg, Rng(0))
        assert m.tx_digital[0].in_dim == 4 and m.tx_digital[-1].out_dim == 4
        assert (m.tx_analog.in_dim, m.tx_analog.out_dim) == (4, 16)
        assert len(m.rx) == 2
        assert m.rx[1].digital[-1].out_dim == 2

    def test_linear_mode_identity_and_zero_bias(self, desk_cfg):
        m = build_model(desk_cfg, Rng(0), mode="linear")
        for _, layer in m.dense_layers():
            assert layer.activation == "identity"
            assert not layer.b_re.any() and not layer.b_im.any()
        assert not any(k.endswith(("b_re", "b_im")) for k in m.parameters())

    def test_nonlinear_hidden_tanh(self, desk_cfg):
        m = build_model(desk_cfg, Rng(0))
        assert [l.activation for l in m.tx_digital] == ["tanh", "identity"]

    def test_rejects_broken_chain(self, desk_cfg):
        m = build_model(desk_cfg, Rng(0))
        with pytest.raises(ShapeError):
            DnhbModel(desk_cfg, m.tx_digital[:1] + [ComplexDenseLayer.init(4, 3, Rng(1))], m.tx_analog, m.rx)

    def test_partial_topology(self, desk_cfg):
        m = build_model(desk_cfg, Rng(0), topology="partially_connected")
        assert m.tx_analog.mask().sum() == 16
        assert m.rx[0].analog.mask().sum() == 4


class TestForward:
    def test_scalar_pass_through(self):
        cfg = scalar_cfg()
        real = fixed_realization(cfg, [[1.0]])
        s = ComplexMatrix.from_complex([[3 + 4j], [0.1 - 0.2j]])
        (out,), _ = forward(pass_through_model(cfg), s, real, 0.0)
        rho = 1.0 / np.abs(s.to_complex())
        np.testing.assert_allclose(out.to_complex(), rho * s.to_complex(), atol=1e-15)

    def test_deterministic(self, desk_cfg, desk_realization):
        m = build_model(desk_cfg, Rng(1))
        s = sample_symbols(16, 4, QPSK, Rng(2))
        a, _ = forward(m, s, desk_realization, 0.1, Rng(3))
        b, _ = forward(m, s, desk_realization, 0.1, Rng(3))
        for x, y in zip(a, b):
            assert x.allclose(y, atol=0)

    def test_transmit_power(self, desk_cfg, desk_realization):
        m = build_model(desk_cfg, Rng(1))
        _, cache = forward(m, sample_symbols(64, 4, QPSK, Rng(2)), desk_realization, 0.0)
        t = cache.tx_signal
        np.testing.assert_allclose(np.sum(t.re**2 + t.im**2, axis=1), desk_cfg.power_budget, rtol=0, atol=1e-12)

    def test_wrong_symbol_width(self, desk_cfg, desk_realization):
        with pytest.raises(ShapeError, match="K\\*N_s"):
            forward(build_model(desk_cfg, Rng(0)), random_batch(Rng(0), 2, 3), desk_realization, 0.0)

    def test_layer_context_in_errors(self, desk_cfg, desk_realization):
        m = build_model(desk_cfg, Rng(0))
        m.rx[1].digital[0].w_re = np.zeros((2, 3))
        m.rx[1].digital[0].w_im = np.zeros((2, 3))
        with pytest.raises(ShapeError, match=r"rx\[1\]\.digital\[0\]"):
            forward(m, sample_symbols(2, 4, QPSK, Rng(0)), desk_realization, 0.0)


class TestLoss:
    def test_perfect_reconstruction(self):
        s = random_batch(Rng(0), 5, 4)
        assert loss(s, [ComplexMatrix(s.re[:, :2], s.im[:, :2]), ComplexMatrix(s.re[:, 2:], s.im[:, 2:])]) == 0.0

    def test_zero_output_is_stream_count(self):
        s = sample_symbols(100, 4, QPSK, Rng(1))
        zeros = [ComplexMatrix.zeros(100, 2), ComplexMatrix.zeros(100, 2)]
        assert abs(loss(s, zeros) - 4.0) < 1e-12

    def test_matches_loop_oracle(self):
        rng = Rng(2)
        s = random_batch(rng, 7, 6)
        outs = [random_batch(rng, 7, 2) for _ in range(3)]
        ref = 0.0
        for k in range(3):
            acc = 0.0
            for b in range(7):
                for i in range(2):
                    dr = s.re[b, 2 * k + i] - outs[k].re[b, i]
                    di = s.im[b, 2 * k + i] - outs[k].im[b, i]
                    acc += dr * dr + di * di
            ref += acc / 7
        assert abs(loss(s, outs) - ref) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            loss(random_batch(Rng(0), 2, 4), [random_batch(Rng(1), 2, 3)])


class TestBackward:
    @pytest.mark.parametrize("mode", ["linear", "nonlinear"])
    def test_tiny_model_finite_difference(self, tiny_cfg, mode):
        rng = Rng(40)
        real = fixed_realization(tiny_cfg, [[[0.9 + 0.3j, -0.4 + 1.1j], [0.2 - 0.7j, 1.3 + 0.1j]]])
        m = build_model(tiny_cfg, rng, mode=mode)
        if mode == "nonlinear":
            for _, layer in m.dense_layers():
                layer.b_re[:] = 0.1 * rng.normal(layer.out_dim)
                layer.b_im[:] = 0.1 * rng.normal(layer.out_dim)
        s = sample_symbols(8, 1, QPSK, rng)
        worst = check_model_gradient(m, real, s, 0.1, rng)
        assert max(worst.values()) < 1e-5, worst

    @pytest.mark.parametrize("topology", ["fully_connected", "partially_connected"])
    def test_desk_model_finite_difference(self, desk_cfg, desk_realization, topology):
        rng = Rng(41)
        m = build_model(desk_cfg, rng, topology=topology)
        s = sample_symbols(6, 4, QPSK, rng)
        worst = check_model_gradient(m, desk_realization, s, 0.05, rng)
        assert max(worst.values()) < 1e-5, worst

    def test_zero_residual_gives_zero_gradient(self):
        cfg = scalar_cfg()
        m = pass_through_model(cfg)
        s = sample_symbols(10, 1, QPSK, Rng(0))
        out, cache = forward(m, s, fixed_realization(cfg, [[1.0]]), 0.0)
        assert loss(s, out) < 1e-30
        for g in backward(m, cache, s).values():
            np.testing.assert_allclose(g, 0.0, atol=1e-15)

    def test_phase_gradient_is_descent_direction(self, desk_cfg, desk_realization):
        m = build_model(desk_cfg, Rng(5))
        s = sample_symbols(32, 4, QPSK, Rng(6))
        out, cache = forward(m, s, desk_realization, 0.0)
        before = loss(s, out)
        grads = backward(m, cache, s)
        for name, p in m.parameters().items():
            if name.endswith("theta"):
                p -= 1e-4 * grads[name]
        after = loss(s, forward(m, s, desk_realization, 0.0)[0])
        assert after < before

    def test_stale_cache(self, desk_cfg, desk_realization):
        m = build_model(desk_cfg, Rng(0))
        s = sample_symbols(4, 4, QPSK, Rng(0))
        _, cache = forward(m, s, desk_realization, 0.0)
        m.set_flat(m.get_flat())
        with pytest.raises(StaleCacheError):
            backward(m, cache, s)


class TestExtract:
    def test_zero_phases_all_ones(self, desk_cfg):
        m = build_model(desk_cfg, Rng(0), mode="linear")
        m.tx_analog.theta[:] = 0.0
        mats = extract_matrices(m)
        np.testing.assert_array_equal(mats.f_a.to_complex(), np.ones((16, 4)))

    def test_unit_modulus(self, desk_cfg):
        mats = extract_matrices(build_model(desk_cfg, Rng(1), mode="linear"))
        np.testing.assert_allclose(np.abs(mats.f_a.to_complex()), 1.0, rtol=0, atol=1e-15)
        for w in mats.w_a:
            np.testing.assert_allclose(np.abs(w.to_complex()), 1.0, rtol=0, atol=1e-15)

    def test_partial_mask_zeros(self, desk_cfg):
        mats = extract_matrices(build_model(desk_cfg, Rng(1), mode="linear", topology="partially_connected"))
        f_a = mats.f_a.to_complex()
        assert np.all(f_a[~mats.f_a_mask] == 0)
        np.testing.assert_allclose(np.abs(f_a[mats.f_a_mask]), 1.0, atol=1e-15)

    def test_pre_normalization_signal(self, desk_cfg, desk_realization):
        m = build_model(desk_cfg, Rng(2), mode="linear")
        s = sample_symbols(20, 4, QPSK, Rng(3))
        _, cache = forward(m, s, desk_realization, 0.0)
        mats = extract_matrices(m)
        x = s.to_complex() @ (mats.f_a.to_complex() @ mats.f_d.to_complex()).T
        np.testing.assert_allclose(cache.pre_norm.to_complex(), x, atol=1e-9)

    @pytest.mark.parametrize("topology", ["fully_connected", "partially_connected"])
    def test_network_matches_matrix_path(self, desk_cfg, desk_realization, topology):
        m = build_model(desk_cfg, Rng(4), mode="linear", topology=topology)
        s = sample_symbols(50, 4, QPSK, Rng(5))
        out, cache = forward(m, s, desk_realization, 0.2, Rng(6))
        ref = evaluate_linear_transceiver(
            from_extracted(extract_matrices(m)), desk_realization, s, 0.2,
            noise=cache.channel.noise, normalize_power=True,
        )
        for a, b in zip(out, ref):
            assert a.allclose(b, atol=1e-9)

    def test_nonlinear_rejected(self, desk_cfg):
        with pytest.raises(UnsupportedModeError):
            extract_matrices(build_model(desk_cfg, Rng(0)))


class TestTrain:
    def test_scalar_toy_converges(self):
        cfg = scalar_cfg()
        real = fixed_realization(cfg, [[1.0]])
        m = build_model(cfg, Rng(7), mode="linear", tx_layers=1, rx_layers=1)
        tc = TrainConfig(learning_rate=1e-2, batch_size=32, epochs=20, batches_per_epoch=100, train_snr_db=300.0)
        rep = train(m, real, tc, QPSK, Rng(8))
        assert rep.steps == 2000
        assert rep.final_loss < 1e-4

    def test_deterministic_trace(self, desk_cfg, desk_realization):
        tc = TrainConfig(epochs=3, batches_per_epoch=5, batch_size=32)
        a = train(build_model(desk_cfg, Rng(1)), desk_realization, tc, QPSK, Rng(2))
        b = train(build_model(desk_cfg, Rng(1)), desk_realization, tc, QPSK, Rng(2))
        assert a.loss_trace == b.loss_trace

    def test_short_run_descends(self, desk_cfg, desk_realization):
        tc = TrainConfig(learning_rate=1e-2, epochs=20, batches_per_epoch=20, batch_size=64, train_snr_db=(0.0, 20.0))
        rep = train(build_model(desk_cfg, Rng(3)), desk_realization, tc, QPSK, Rng(4))
        assert np.mean(rep.loss_trace[-5:]) < np.mean(rep.loss_trace[:5])

    def test_sgd(self, desk_cfg, desk_realization):
        tc = TrainConfig(optimizer="sgd", learning_rate=1e-2, epochs=10, batches_per_epoch=10, batch_size=64)
        rep = train(build_model(desk_cfg, Rng(3)), desk_realization, tc, QPSK, Rng(4))
        assert rep.loss_trace[-1] < rep.loss_trace[0]

    def test_divergence_names_epoch(self, desk_cfg, desk_realization):
        m = build_model(desk_cfg, Rng(0))
        m.rx[0].digital[-1].w_re[:] = np.inf
        with pytest.raises(TrainingDiverged, match="epoch 0"):
            train(m, desk_realization, TrainConfig(epochs=1, batches_per_epoch=1), QPSK, Rng(0))

    def test_config_mismatch(self, desk_cfg, desk_realization):
        other = SystemConfig(n_t=8, n_r=4, n_rf_t=4, n_rf_r=2, n_s=2, k_users=2)
        with pytest.raises(ValueError, match="different system configs"):
            train(build_model(other, Rng(0)), desk_realization, TrainConfig(epochs=1), QPSK, Rng(0))

    @pytest.mark.parametrize("kwargs", [
        {"epochs": 0}, {"learning_rate": 0.0}, {"batch_size": 0}, {"optimizer": "rmsprop"},
        {"train_snr_db": (10.0, 0.0)}, {"lr_final_fraction": 0.0},
    ])
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)

    def test_learning_rate_decay(self, desk_cfg, desk_realization):
        seen = []
        tc = TrainConfig(learning_rate=1e-2, lr_final_fraction=0.01, epochs=3, batches_per_epoch=1, batch_size=8)
        from dnhb.autoencoder.train import Trainer

        t = Trainer(build_model(desk_cfg, Rng(0)), desk_realization, tc, QPSK, Rng(1),
                    callback=lambda step, model, cache: seen.append(t.opt.lr))
        t.run(3)
        np.testing.assert_allclose(seen, [1e-2, 1e-3, 1e-4])

    def test_restarts_pick_best_warmup(self, desk_cfg, desk_realization):
        tc = TrainConfig(epochs=4, batches_per_epoch=3, batch_size=16)
        builder = lambda r: build_model(desk_cfg, r)  # noqa: E731
        rep = train_with_restarts(builder, desk_realization, tc, QPSK, Rng(9), restarts=3, warmup_epochs=2)
        assert len(rep.loss_trace) == 4
        warm = []
        for i in range(3):
            r = Rng(9).child(i)
            warm.append(train(builder(r.child(0)), desk_realization, TrainConfig(**{**tc.to_dict(), "epochs": 2}),
                              QPSK, r.child(1)).loss_trace)
        assert rep.loss_trace[:2] == min(warm, key=lambda t: t[-1])

    def test_single_restart_is_plain_training(self, desk_cfg, desk_realization):
        tc = TrainConfig(epochs=2, batches_per_epoch=3, batch_size=16)
        builder = lambda r: build_model(desk_cfg, r)  # noqa: E731
        a = train_with_restarts(builder, desk_realization, tc, QPSK, Rng(9))
        r = Rng(9).child(0)
        b = train(builder(r.child(0)), desk_realization, tc, QPSK, r.child(1))
        assert a.loss_trace == b.loss_trace


class TestCheckpoint:
    @pytest.mark.parametrize("mode", ["linear", "nonlinear"])
    def test_round_trip(self, tmp_path, desk_cfg, desk_realization, mode):
        m = build_model(desk_cfg, Rng(3), mode=mode, topology="partially_connected")
        save_model(tmp_path / "m.json", m, training_seed=17, final_loss=0.25)
        loaded, meta = load_model(tmp_path / "m.json")
        assert meta == {"training_seed": 17, "final_loss": 0.25}
        assert (loaded.mode, loaded.topology) == (mode, "partially_connected")
        np.testing.assert_array_equal(loaded.get_flat(), m.get_flat())
        s = sample_symbols(8, 4, QPSK, Rng(4))
        for a, b in zip(forward(m, s, desk_realization, 0.0)[0], forward(loaded, s, desk_realization, 0.0)[0]):
            assert a.allclose(b, atol=0)

    def test_version_mismatch(self, tmp_path, desk_cfg):
        import json

        save_model(tmp_path / "m.json", build_model(desk_cfg, Rng(0)))
        doc = json.loads((tmp_path / "m.json").read_text())
        doc["format_version"] = 7
        (tmp_path / "m.json").write_text(json.dumps(doc))
        with pytest.raises(CheckpointError, match="7"):
            load_model(tmp_path / "m.json")

    def test_truncated(self, tmp_path, desk_cfg):
        save_model(tmp_path / "m.json", build_model(desk_cfg, Rng(0)))
        text = (tmp_path / "m.json").read_text()
        (tmp_path / "m.json").write_text(text[:100])
        with pytest.raises(CheckpointError, match="line"):
            load_model(tmp_path / "m.json")

"""Autoencoder tests: architecture audit, tied gradients, training behavior."""

import numpy as np
import pytest

import oracles
from urbanforms.cae import (
    CaeConfig,
    CaeModel,
    ConfigError,
    TrainConfig,
    TrainingDiverged,
    build_model,
    decode,
    encode,
    extract_urban_vectors,
    forward_backward,
    load_checkpoint,
    reconstruct,
    save_checkpoint,
    train,
)
from urbanforms.tensor import ShapeError

TINY = CaeConfig(encoder_channels=(3, 2), input_size=16)


def tiny_corpus(n, size=16, seed=0):
    rng = np.random.default_rng(seed)
    imgs = (rng.random((n, size, size, 1)) < 0.25).astype(np.float32)
    return imgs


# -- architecture audit --------------------------------------------------------


def test_default_config_parameter_counts():
    model = build_model(CaeConfig(), seed=0)
    weight_total = sum(k.weights.size for k in model.encoder_kernels)
    enc_bias_total = sum(k.bias.size for k in model.encoder_kernels)
    dec_bias_total = sum(b.size for b in model.decoder_biases)
    assert weight_total == 375 + 5625 + 5625 + 3750 + 2500 == 17875
    assert enc_bias_total == 15 + 15 + 15 + 10 + 10 == 65
    assert dec_bias_total == 10 + 15 + 15 + 15 + 1 == 56
    assert model.weight_count() == 17875


def test_default_bottleneck_geometry():
    cfg = CaeConfig()
    assert cfg.spatial_chain == (256, 128, 64, 32, 16, 8)
    assert cfg.bottleneck_shape == (8, 8, 10)
    assert cfg.vector_length == 640


def test_encode_default_geometry():
    model = build_model(CaeConfig(), seed=1)
    x = np.zeros((1, 256, 256, 1), np.float32)
    code = encode(model, x)
    assert code.shape == (1, 8, 8, 10)


def test_odd_input_sizes_follow_ceil_division():
    cfg = CaeConfig(encoder_channels=(2, 2), input_size=9)
    assert cfg.spatial_chain == (9, 5, 3)
    model = build_model(cfg, seed=0)
    code = encode(model, np.ones((2, 9, 9, 1), np.float32))
    assert code.shape == (2, 3, 3, 2)


def test_decoder_shares_encoder_weight_arrays_when_tied():
    model = build_model(TINY, seed=3)
    for i in range(model.n_layers):
        assert model.decoder_kernel(i).weights is model.encoder_kernels[model.n_layers - 1 - i].weights


def test_untied_model_gets_independent_decoder_weights():
    cfg = CaeConfig(encoder_channels=(3, 2), input_size=16, tied_weights=False)
    model = build_model(cfg, seed=3)
    assert model.decoder_kernels is not None
    for i in range(model.n_layers):
        mirror = model.encoder_kernels[model.n_layers - 1 - i]
        assert model.decoder_kernel(i).weights is not mirror.weights
        assert model.decoder_kernel(i).weights.shape == mirror.weights.shape


def test_decoder_bias_shapes_mirror_encoder_inputs():
    model = build_model(CaeConfig(), seed=0)
    assert [b.size for b in model.decoder_biases] == [10, 15, 15, 15, 1]


def test_reconstruction_shape_matches_input():
    model = build_model(TINY, seed=2)
    x = tiny_corpus(3)
    y = reconstruct(model, x)
    assert y.shape == x.shape
    assert y.dtype == np.float32


def test_build_model_is_seeded():
    a = build_model(TINY, seed=11)
    b = build_model(TINY, seed=11)
    c = build_model(TINY, seed=12)
    for ka, kb in zip(a.encoder_kernels, b.encoder_kernels):
        np.testing.assert_array_equal(ka.weights, kb.weights)
    assert any(
        not np.array_equal(ka.weights, kc.weights)
        for ka, kc in zip(a.encoder_kernels, c.encoder_kernels)
    )


def test_config_validation():
    with pytest.raises(ConfigError):
        CaeConfig(encoder_channels=())
    with pytest.raises(ConfigError):
        CaeConfig(encoder_channels=(4, 0))
    with pytest.raises(ConfigError):
        CaeConfig(input_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(optimizer="lbfgs")
    with pytest.raises(ConfigError):
        TrainConfig(loss="hinge")
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)


def test_config_dict_round_trip():
    cfg = CaeConfig(encoder_channels=(4, 3), input_size=32, kernel_size=3)
    assert CaeConfig.from_dict(cfg.to_dict()) == cfg
    tc = TrainConfig(batch_size=7, epochs=3, optimizer="adam")
    assert TrainConfig.from_dict(tc.to_dict()) == tc


def test_encode_rejects_wrong_image_size():
    model = build_model(TINY, seed=0)
    with pytest.raises(ShapeError):
        encode(model, np.zeros((1, 8, 8, 1), np.float32))


def test_decode_rejects_wrong_code_shape():
    model = build_model(TINY, seed=0)
    with pytest.raises(ShapeError):
        decode(model, np.zeros((1, 3, 3, 2), np.float32))


# -- urban vector extraction ---------------------------------------------------


def test_urban_vectors_flatten_row_major():
    model = build_model(TINY, seed=5)
    imgs = tiny_corpus(2, seed=9)
    codes = encode(model, imgs)
    vectors = extract_urban_vectors(model, imgs, ["p0", "p1"])
    assert [v.place_id for v in vectors] == ["p0", "p1"]
    h, w, c = model.config.bottleneck_shape
    assert vectors[0].values.shape == (h * w * c,)
    # index arithmetic against the unflattened code, every cell
    for hi in range(h):
        for wi in range(w):
            for ci in range(c):
                flat_index = hi * (w * c) + wi * c + ci
                assert vectors[1].values[flat_index] == codes[1, hi, wi, ci]


def test_urban_vectors_batched_extraction_matches_single_pass():
    model = build_model(TINY, seed=6)
    imgs = tiny_corpus(7, seed=4)
    ids = [f"p{i}" for i in range(7)]
    small_batches = extract_urban_vectors(model, imgs, ids, batch_size=3)
    one_pass = extract_urban_vectors(model, imgs, ids, batch_size=64)
    for a, b in zip(small_batches, one_pass):
        assert a.place_id == b.place_id
        np.testing.assert_array_equal(a.values, b.values)


def test_extract_rejects_mismatched_ids():
    model = build_model(TINY, seed=0)
    with pytest.raises(ConfigError):
        extract_urban_vectors(model, tiny_corpus(3), ["only-one"])


# -- gradients -----------------------------------------------------------------


def grad_check(config, seed, eps=1e-3):
    """Compare production gradients with float64 central differences."""
    model = build_model(config, seed=seed)
    rng = np.random.default_rng(seed + 100)
    x = rng.random((2, config.input_size, config.input_size, config.input_channels)).astype(np.float32)
    # nonzero biases so their gradients are exercised away from symmetry
    for k in model.encoder_kernels:
        k.bias[...] = rng.normal(0, 0.1, k.bias.shape).astype(np.float32)
    for b in model.decoder_biases:
        b[...] = rng.normal(0, 0.1, b.shape).astype(np.float32)

    loss, grads = forward_backward(model, x)
    assert np.isfinite(loss)

    enc_w64 = [k.weights.astype(np.float64) for k in model.encoder_kernels]
    enc_b64 = [k.bias.astype(np.float64) for k in model.encoder_kernels]
    dec_b64 = [b.astype(np.float64) for b in model.decoder_biases]
    objective = lambda: oracles.tied_cae_mse64(x, enc_w64, enc_b64, dec_b64, config.stride)

    fd_params = []
    for j in range(len(enc_w64)):
        fd_params.append(enc_w64[j])
        fd_params.append(enc_b64[j])
    fd_params.extend(dec_b64)

    checked = 0
    for analytic, arr in zip(grads, fd_params):
        fd = oracles.central_diff(objective, arr, eps=eps)
        np.testing.assert_allclose(analytic, fd, rtol=1e-3, atol=1e-5)
        checked += arr.size
    return checked


def test_gradients_match_float64_finite_differences():
    cfg = CaeConfig(encoder_channels=(3, 2), input_size=7)
    checked = grad_check(cfg, seed=0)
    assert checked == 75 + 3 + 150 + 2 + 3 + 1 == 234


def test_tied_gradient_is_sum_of_encoder_and_decoder_contributions():
    tied_cfg = CaeConfig(encoder_channels=(3, 2), input_size=8)
    tied = build_model(tied_cfg, seed=21)
    rng = np.random.default_rng(33)
    x = rng.random((2, 8, 8, 1)).astype(np.float32)

    untied_cfg = CaeConfig(encoder_channels=(3, 2), input_size=8, tied_weights=False)
    untied = build_model(untied_cfg, seed=21)
    for src, dst in zip(tied.encoder_kernels, untied.encoder_kernels):
        dst.weights[...] = src.weights
        dst.bias[...] = src.bias
    for i in range(untied.n_layers):
        untied.decoder_kernels[i].weights[...] = tied.decoder_kernel(i).weights
    for src, dst in zip(tied.decoder_biases, untied.decoder_biases):
        dst[...] = src

    loss_t, grads_t = forward_backward(tied, x)
    loss_u, grads_u = forward_backward(untied, x)
    assert loss_t == pytest.approx(loss_u, rel=1e-6)

    n = tied.n_layers
    # untied layout: [w0, b0, w1, b1, dec_w0, dec_w1, dec_b0, dec_b1]
    for j in range(n):
        enc_part = grads_u[2 * j].astype(np.float64)
        dec_part = grads_u[2 * n + (n - 1 - j)].astype(np.float64)
        np.testing.assert_allclose(grads_t[2 * j], enc_part + dec_part, rtol=1e-5, atol=1e-7)
        np.testing.assert_array_equal(grads_t[2 * j + 1], grads_u[2 * j + 1])


def test_gradients_align_with_parameter_arrays():
    model = build_model(TINY, seed=4)
    _, grads = forward_backward(model, tiny_corpus(2))
    params = model.parameter_arrays()
    assert len(grads) == len(params)
    for g, p in zip(grads, params):
        assert g.shape == p.shape


def test_bottleneck_shifts_with_interior_translation():
    cfg = CaeConfig(encoder_channels=(4, 3), input_size=32)
    model = build_model(cfg, seed=8)
    rng = np.random.default_rng(17)
    patch = rng.random((9, 9)).astype(np.float32)
    a = np.zeros((1, 32, 32, 1), np.float32)
    b = np.zeros((1, 32, 32, 1), np.float32)
    a[0, 10:19, 10:19, 0] = patch
    b[0, 14:23, 14:23, 0] = patch  # shifted by stride**n_layers = 4
    code_a = encode(model, a)
    code_b = encode(model, b)
    np.testing.assert_array_equal(code_b[:, 1:, 1:, :], code_a[:, :-1, :-1, :])


# -- training ------------------------------------------------------------------


def test_training_reduces_reconstruction_loss():
    model = build_model(TINY, seed=0)
    imgs = tiny_corpus(20, seed=1)
    tc = TrainConfig(batch_size=10, epochs=8, learning_rate=0.02, shuffle_seed=0)
    _, curve = train(model, imgs, tc)
    assert len(curve) == 8
    assert curve[-1] < curve[0]


def test_memorizes_single_image():
    model = build_model(TINY, seed=2)
    img = tiny_corpus(1, seed=7)
    tc = TrainConfig(batch_size=1, epochs=300, learning_rate=0.01, optimizer="adam")
    _, curve = train(model, img, tc)
    predict_zero_baseline = float((img.astype(np.float64) ** 2).mean())
    assert curve[-1] < 0.5 * predict_zero_baseline
    assert curve[-1] < curve[0]


def test_training_curve_is_deterministic():
    imgs = tiny_corpus(8, seed=3)
    tc = TrainConfig(batch_size=4, epochs=4, learning_rate=0.02, shuffle_seed=5)
    _, curve_a = train(build_model(TINY, seed=1), imgs, tc)
    _, curve_b = train(build_model(TINY, seed=1), imgs, tc)
    assert curve_a == curve_b
    tc_other = TrainConfig(batch_size=4, epochs=4, learning_rate=0.02, shuffle_seed=6)
    _, curve_c = train(build_model(TINY, seed=1), imgs, tc_other)
    assert curve_a != curve_c


def test_adam_training_runs_and_descends():
    model = build_model(TINY, seed=9)
    imgs = tiny_corpus(12, seed=2)
    tc = TrainConfig(batch_size=6, epochs=6, learning_rate=0.005, optimizer="adam")
    _, curve = train(model, imgs, tc)
    assert curve[-1] < curve[0]


def test_bce_loss_option_descends():
    model = build_model(TINY, seed=10)
    imgs = tiny_corpus(12, seed=6)
    tc = TrainConfig(batch_size=6, epochs=6, learning_rate=0.005, optimizer="adam", loss="bce")
    _, curve = train(model, imgs, tc)
    assert all(np.isfinite(v) for v in curve)
    assert curve[-1] < curve[0]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises_with_position():
    model = build_model(TINY, seed=0)
    imgs = np.ones((4, 16, 16, 1), np.float32)
    tc = TrainConfig(batch_size=4, epochs=6, learning_rate=1e12)
    with pytest.raises(TrainingDiverged):
        train(model, imgs, tc)


def test_train_rejects_wrong_image_geometry():
    model = build_model(TINY, seed=0)
    with pytest.raises(ShapeError):
        train(model, np.zeros((4, 8, 8, 1), np.float32), TrainConfig(epochs=1))
    with pytest.raises(ConfigError):
        train(model, np.zeros((0, 16, 16, 1), np.float32), TrainConfig(epochs=1))


# -- checkpoints ---------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    model = build_model(TINY, seed=13)
    imgs = tiny_corpus(8, seed=8)
    tc = TrainConfig(batch_size=4, epochs=2, learning_rate=0.01)
    train(model, imgs, tc)
    path = tmp_path / "model.msck"
    save_checkpoint(path, model, tc=tc, epoch=2)
    loaded, meta = load_checkpoint(path)
    assert loaded.config == model.config
    assert meta["epoch"] == 2
    assert meta["train_config"]["batch_size"] == 4
    for a, b in zip(model.parameter_arrays(), loaded.parameter_arrays()):
        np.testing.assert_array_equal(a, b)


def test_untied_checkpoint_round_trip(tmp_path):
    cfg = CaeConfig(encoder_channels=(3, 2), input_size=16, tied_weights=False)
    model = build_model(cfg, seed=14)
    path = tmp_path / "untied.msck"
    save_checkpoint(path, model)
    loaded, _ = load_checkpoint(path)
    for a, b in zip(model.parameter_arrays(), loaded.parameter_arrays()):
        np.testing.assert_array_equal(a, b)


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.msck"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(path)


def test_resume_matches_uninterrupted_run(tmp_path):
    imgs = tiny_corpus(12, seed=11)
    tc_full = TrainConfig(batch_size=4, epochs=4, learning_rate=0.01, shuffle_seed=2)
    straight = build_model(TINY, seed=20)
    train(straight, imgs, tc_full)

    tc_half = TrainConfig(
        batch_size=4, epochs=2, learning_rate=0.01, shuffle_seed=2, checkpoint_every=2
    )
    first_half = build_model(TINY, seed=20)
    train(first_half, imgs, tc_half, checkpoint_dir=tmp_path)

    resumed = build_model(TINY, seed=20)
    _, curve = train(resumed, imgs, tc_full, resume_from=tmp_path / "checkpoint-0002.msck")
    assert len(curve) == 4
    for a, b in zip(straight.parameter_arrays(), resumed.parameter_arrays()):
        np.testing.assert_array_equal(a, b)

import numpy as np
import pytest

from whar import models
from whar.errors import ConfigError, ShapeError
from whar.models import (
    ActivityClassifier,
    AudioEncoder,
    AudioEncoderConfig,
    EventDetector,
    EventDetectorConfig,
    FrontendConfig,
    FusionConfig,
    FusionHead,
    ImuEncoder,
    ImuEncoderConfig,
    ModelBundle,
    build_archive,
    conv_flops,
    count_flops,
    dense_flops,
    quantize_archive_f16,
)
from whar.ops import ConvSpec, activation, conv, linear, maxpool
from whar.presets import PRESETS


def he_params(specs, rng, scale=1.0):
    out = {}
    for name, shape in specs.items():
        fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
        out[name] = (scale * rng.normal(0, np.sqrt(2.0 / max(fan_in, 1)), size=shape)
                     ).astype(np.float32)
    return out


def zero_params(specs):
    return {name: np.zeros(shape, dtype=np.float32) for name, shape in specs.items()}


@pytest.fixture(scope="module")
def rng():
    return np.random.default_rng(99)


@pytest.fixture(scope="module")
def detector(rng):
    cfg = EventDetectorConfig()
    # damped init keeps the sigmoid away from f32 saturation
    return EventDetector(cfg, he_params(EventDetector.param_specs(cfg), rng, scale=0.5))


@pytest.fixture(scope="module")
def imu_encoder(rng):
    cfg = ImuEncoderConfig()
    return ImuEncoder(cfg, he_params(ImuEncoder.param_specs(cfg), rng))


@pytest.fixture(scope="module")
def audio_encoder(rng):
    cfg = AudioEncoderConfig()
    return AudioEncoder(cfg, he_params(AudioEncoder.param_specs(cfg), rng))


class TestEventDetector:
    def test_zero_window_zero_weights_gives_half(self):
        cfg = EventDetectorConfig()
        det = EventDetector(cfg, zero_params(EventDetector.param_specs(cfg)))
        assert det.forward(np.zeros((6, 150), dtype=np.float32)) == 0.5

    def test_spatial_trace(self, detector):
        lengths = [l.out_shape[-1] for l in detector.plan if l.kind in ("conv", "maxpool")]
        # dw, pw, pool per block: 150 -> 141 -> 70 -> 63 -> 31 -> 26 -> 13 -> 9 -> 4
        assert lengths == [141, 141, 70, 63, 63, 31, 26, 26, 13, 9, 9, 4]
        flat = next(l for l in detector.plan if l.kind == "reshape")
        assert flat.out_shape == (512,)

    def test_output_in_unit_interval(self, detector, rng):
        for _ in range(10):
            p = detector.forward(rng.normal(size=(6, 150)).astype(np.float32))
            assert 0.0 < p < 1.0

    def test_deterministic(self, detector, rng):
        w = rng.normal(size=(6, 150)).astype(np.float32)
        assert detector.forward(w) == detector.forward(w)

    def test_wrong_shape(self, detector):
        with pytest.raises(ShapeError):
            detector.forward(np.zeros((6, 100), dtype=np.float32))

    def test_config_invariants(self):
        with pytest.raises(ConfigError):
            EventDetectorConfig(channels=(64, 64, 128))
        with pytest.raises(ConfigError):
            EventDetectorConfig(channels=(64, 128, 64, 128))
        with pytest.raises(ConfigError):
            EventDetectorConfig(kernels=(10, 8, 9, 5))

    def test_missing_param_raises_config_error(self):
        cfg = EventDetectorConfig()
        params = he_params(EventDetector.param_specs(cfg), np.random.default_rng(0))
        del params["event_detector/fc0_w"]
        with pytest.raises(ConfigError, match="fc0_w"):
            EventDetector(cfg, params)

    def test_invariant_to_pre_normalization_offset(self, detector, rng):
        from whar.stream import zscore
        w = rng.normal(size=(150, 6)).astype(np.float32)
        shifted = w.copy()
        shifted[:, 2] += 5.0  # constant added to one raw channel
        p0 = detector.forward(zscore(w).T)
        p1 = detector.forward(zscore(shifted).T)
        assert abs(p0 - p1) < 1e-5


class TestImuEncoder:
    def test_temporal_trace(self, imu_encoder):
        lengths = [l.out_shape[1] for l in imu_encoder.plan if l.kind in ("conv", "maxpool")]
        assert lengths == [46, 23, 19, 9, 5]
        flat = next(l for l in imu_encoder.plan if l.kind == "reshape")
        assert flat.out_shape == (256 * 5 * 6,)

    def test_zero_weights_zero_embedding(self):
        cfg = ImuEncoderConfig()
        enc = ImuEncoder(cfg, zero_params(ImuEncoder.param_specs(cfg)))
        out = enc.forward(np.ones((1, 50, 6), dtype=np.float32))
        np.testing.assert_array_equal(out, np.zeros(256, dtype=np.float32))

    def test_embedding_dim(self, imu_encoder, rng):
        out = imu_encoder.forward(rng.normal(size=(1, 50, 6)).astype(np.float32))
        assert out.shape == (256,)

    def test_linear_path_is_homogeneous(self, imu_encoder, rng):
        # conv + maxpool without activations scale with the input
        x = np.abs(rng.normal(size=(1, 50, 6))).astype(np.float32)
        p = imu_encoder.params

        def conv_stack(v):
            c_in = 1
            for i, c_out in enumerate(imu_encoder.cfg.channels):
                spec = ConvSpec(2, c_in, c_out, (5, 1), (1, 1), "valid")
                v = conv(v, p[f"imu_encoder/conv{i}_w"], None, spec)
                if i < 2:
                    v = maxpool(v, (2, 1), (2, 1), 2)
                c_in = c_out
            return v

        np.testing.assert_allclose(conv_stack(2 * x), 2 * conv_stack(x), rtol=1e-4)

    def test_ten_second_window_supported(self, rng):
        cfg = ImuEncoderConfig(window_samples=500, hidden=64)
        enc = ImuEncoder(cfg, he_params(ImuEncoder.param_specs(cfg), rng))
        out = enc.forward(rng.normal(size=(1, 500, 6)).astype(np.float32))
        assert out.shape == (256,)


class TestAudioEncoder:
    def test_both_presets_yield_576(self, audio_encoder, rng):
        e63 = audio_encoder.forward(rng.normal(size=(1, 63, 64)).astype(np.float32))
        e690 = audio_encoder.forward(rng.normal(size=(1, 690, 64)).astype(np.float32))
        assert e63.shape == e690.shape == (576,)

    def test_gap_permutation_invariance(self, audio_encoder, rng):
        x = rng.normal(size=(1, 63, 64)).astype(np.float32)
        feats = audio_encoder.forward(x, return_features=True)
        emb = audio_encoder.forward(x)
        np.testing.assert_allclose(emb, feats.reshape(feats.shape[0], -1).mean(axis=1),
                                   rtol=1e-5)
        perm_h = rng.permutation(feats.shape[1])
        perm_w = rng.permutation(feats.shape[2])
        permuted = feats[:, perm_h][:, :, perm_w]
        np.testing.assert_allclose(permuted.reshape(feats.shape[0], -1).mean(axis=1),
                                   emb, rtol=1e-4)

    def test_zero_input_stable_across_calls(self, audio_encoder):
        z = np.zeros((1, 63, 64), dtype=np.float32)
        a = audio_encoder.forward(z)
        b = audio_encoder.forward(z)
        np.testing.assert_array_equal(a, b)

    def test_too_few_frames(self, audio_encoder):
        with pytest.raises(ShapeError):
            audio_encoder.forward(np.zeros((1, 31, 64), dtype=np.float32))


class TestFusion:
    def _gated(self, rng, gate_imu_bias=0.0, gate_audio_bias=0.0):
        cfg = FusionConfig(variant="gated", n_classes=5)
        params = he_params(FusionHead.param_specs(cfg), rng)
        params["fusion/gate_imu_b"] = np.full(256, gate_imu_bias, dtype=np.float32)
        params["fusion/gate_audio_b"] = np.full(256, gate_audio_bias, dtype=np.float32)
        params["fusion/gate_imu_w"] = np.zeros((256, 256), dtype=np.float32)
        params["fusion/gate_audio_w"] = np.zeros((256, 256), dtype=np.float32)
        return cfg, params

    def test_closed_audio_gate_nullifies_audio(self, rng):
        cfg, params = self._gated(rng, gate_imu_bias=1e3, gate_audio_bias=-1e3)
        head = FusionHead(cfg, params)
        imu_emb = rng.normal(size=256).astype(np.float32)
        base, _ = head.forward(imu_emb, rng.normal(size=576).astype(np.float32))
        for _ in range(5):
            perturbed, _ = head.forward(imu_emb, rng.normal(size=576).astype(np.float32))
            assert np.abs(perturbed - base).max() <= 1e-6

    def test_open_gates_reduce_to_sum_projection(self, rng):
        cfg, params = self._gated(rng, gate_imu_bias=1e3, gate_audio_bias=1e3)
        head = FusionHead(cfg, params)
        imu_emb = rng.normal(size=256).astype(np.float32)
        audio_emb = rng.normal(size=576).astype(np.float32)
        logits, _ = head.forward(imu_emb, audio_emb)
        p_i = linear(imu_emb, params["fusion/proj_imu_w"], params["fusion/proj_imu_b"])
        p_a = linear(audio_emb, params["fusion/proj_audio_w"], params["fusion/proj_audio_b"])
        fused = linear(p_i + p_a, params["fusion/fuse_w"], params["fusion/fuse_b"])
        expected = linear(fused, params["fusion/head_w"], params["fusion/head_b"])
        assert np.abs(logits - expected).max() <= 1e-6

    def test_softmax_avg_identical_heads(self, rng):
        cfg = FusionConfig(variant="softmax_avg", n_classes=4)
        params = he_params(FusionHead.param_specs(cfg), rng)
        params["fusion/head_audio_w"] = params["fusion/head_imu_w"].copy()
        params["fusion/head_audio_b"] = params["fusion/head_imu_b"].copy()
        # make both projections produce the same vector
        params["fusion/proj_audio_w"] = np.zeros((256, 576), dtype=np.float32)
        params["fusion/proj_imu_w"] = np.zeros((256, 256), dtype=np.float32)
        shared = rng.normal(size=256).astype(np.float32)
        params["fusion/proj_imu_b"] = shared
        params["fusion/proj_audio_b"] = shared
        head = FusionHead(cfg, params)
        scores, _ = head.forward(rng.normal(size=256).astype(np.float32),
                                 rng.normal(size=576).astype(np.float32))
        expected = activation(linear(shared, params["fusion/head_imu_w"],
                                     params["fusion/head_imu_b"]), "softmax")
        np.testing.assert_allclose(scores, expected, atol=1e-7)
        assert scores.sum() == pytest.approx(1.0, abs=1e-6)

    def test_concat_variant(self, rng):
        cfg = FusionConfig(variant="concat", n_classes=3)
        head = FusionHead(cfg, he_params(FusionHead.param_specs(cfg), rng))
        logits, cid = head.forward(rng.normal(size=256).astype(np.float32),
                                   rng.normal(size=576).astype(np.float32))
        assert logits.shape == (3,)
        assert cid == int(np.argmax(logits))

    def test_argmax_tie_breaks_to_lowest_id(self):
        cfg = FusionConfig(variant="concat", n_classes=3)
        params = zero_params(FusionHead.param_specs(cfg))
        head = FusionHead(cfg, params)
        _, cid = head.forward(np.ones(256, dtype=np.float32), np.ones(576, dtype=np.float32))
        assert cid == 0

    def test_unknown_variant(self):
        with pytest.raises(ConfigError):
            FusionConfig(variant="self_attention", n_classes=3)

    def test_gated_requires_256(self):
        with pytest.raises(ConfigError):
            FusionConfig(variant="gated", shared_dim=128, n_classes=3)


class TestFlops:
    def test_dense_10_to_5_is_105(self):
        assert dense_flops(10, 5) == 105

    def test_conv_worked_example(self):
        # in=6, out=64, K=10, stride 1, valid over 150 -> L_out=141
        spec = ConvSpec(1, 6, 64, 10, 1, "valid")
        assert conv_flops(spec, (141,), True) == 2 * 10 * 6 * 64 * 141 + 64 * 141 == 1_091_904

    def test_depthwise_divides_by_groups(self):
        spec = ConvSpec(1, 8, 8, 3, 1, "valid", groups=8)
        assert conv_flops(spec, (10,), False) == 2 * 3 * 1 * 8 * 10

    def test_count_flops_additive_and_empty(self, detector, imu_encoder):
        assert count_flops() == 0
        assert count_flops(detector, imu_encoder) == count_flops(detector) + count_flops(imu_encoder)

    def test_detector_under_0p05_gflops(self, detector):
        assert 0 < detector.flops < 0.05e9

    def test_plan_flops_match_formula(self, detector):
        fc0 = next(l for l in detector.plan if l.name == "fc0")
        assert fc0.flops == dense_flops(512, 512)

    def test_no_stochastic_ops_in_inference_graphs(self, detector, imu_encoder,
                                                   audio_encoder):
        # dropout exists only at training time; the deployed graphs may
        # contain nothing but deterministic layer kinds
        deterministic = {"conv", "maxpool", "dense", "activation", "reshape",
                         "inverted_residual", "global_avg_pool", "elementwise"}
        for model in (detector, imu_encoder, audio_encoder):
            assert {l.kind for l in model.plan} <= deterministic


class TestArchiveIntegration:
    def _samosa_bundle_params(self, rng, n_classes=6):
        preset = PRESETS["samosa-1k"]
        det_cfg = EventDetectorConfig()
        imu_cfg = ImuEncoderConfig(window_samples=50, hidden=512)
        aud_cfg = AudioEncoderConfig(in_frames=63)
        fus_cfg = FusionConfig(variant="gated", n_classes=n_classes)
        frontend_cfg = FrontendConfig(preset.stft, preset.mel, preset.db, window_samples=1000)
        params = {}
        params.update(he_params(EventDetector.param_specs(det_cfg), rng))
        params.update(he_params(ImuEncoder.param_specs(imu_cfg), rng))
        params.update(he_params(AudioEncoder.param_specs(aud_cfg), rng))
        params.update(he_params(FusionHead.param_specs(fus_cfg), rng))
        from whar.dsp import build_mel_filterbank
        params["audio_frontend/mel_w"] = build_mel_filterbank(preset.stft, preset.mel)
        configs = {"event_detector": det_cfg, "imu_encoder": imu_cfg,
                   "audio_encoder": aud_cfg, "fusion": fus_cfg,
                   "audio_frontend": frontend_cfg}
        return configs, params

    def test_bundle_roundtrip_and_determinism(self, tmp_path, rng):
        from whar.archive import read_archive, write_archive
        configs, params = self._samosa_bundle_params(rng)
        archive = build_archive(configs, params, class_names=[f"c{i}" for i in range(6)],
                                contexts=["kitchen"])
        path = tmp_path / "model.whar"
        write_archive(archive, path)
        bundle = ModelBundle.from_archive(read_archive(path))
        assert bundle.detector is not None and bundle.classifier is not None
        assert bundle.class_names == [f"c{i}" for i in range(6)]
        imu_win = rng.normal(size=(50, 6)).astype(np.float32)
        wave = rng.normal(size=1000).astype(np.float32) * 0.1
        c1, l1 = bundle.classifier.forward(imu_win, wave)
        c2, l2 = bundle.classifier.forward(imu_win, wave)
        assert c1 == c2
        np.testing.assert_array_equal(l1, l2)

    def test_classifier_flops_under_0p1_gflops(self, rng):
        configs, params = self._samosa_bundle_params(rng)
        archive = build_archive(configs, params)
        clf = ActivityClassifier.from_archive(archive)
        assert 0 < clf.flops < 0.1e9

    def test_quantize_halves_payload_and_is_idempotent(self, rng):
        configs, params = self._samosa_bundle_params(rng)
        archive = build_archive(configs, params)
        quantized = quantize_archive_f16(archive)
        assert quantized.payload_nbytes() * 2 == archive.payload_nbytes()
        again = quantize_archive_f16(quantized)
        assert again == quantized
        # quantized archive still loads and runs
        bundle = ModelBundle.from_archive(quantized)
        assert bundle.classifier is not None

    def test_quantize_preserves_argmax_smoke(self, rng):
        configs, params = self._samosa_bundle_params(rng)
        archive = build_archive(configs, params)
        f32 = FusionHead.from_archive(archive)
        f16 = FusionHead.from_archive(quantize_archive_f16(archive))
        same = 0
        for _ in range(100):
            imu_emb = rng.normal(size=256).astype(np.float32)
            audio_emb = rng.normal(size=576).astype(np.float32)
            same += f32.forward(imu_emb, audio_emb)[1] == f16.forward(imu_emb, audio_emb)[1]
        assert same >= 99

    def test_shape_mismatch_in_archive_rejected(self, rng):
        configs, params = self._samosa_bundle_params(rng)
        params["event_detector/fc0_w"] = np.zeros((4, 4), dtype=np.float32)
        archive = build_archive(configs, params)
        with pytest.raises(ConfigError, match="fc0_w"):
            ModelBundle.from_archive(archive)

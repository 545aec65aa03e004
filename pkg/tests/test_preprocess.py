"""Face alignment, intensity normalization, and audio spectrograms."""

import numpy as np
import pytest

from affectkit.errors import (
    BadRange,
    DegenerateLandmarks,
    SignalTooShort,
    ValueOutOfRange,
)
from affectkit.preprocess import (
    CANONICAL_LANDMARKS,
    LANDMARK_NAMES,
    AffineFit,
    LandmarkSet,
    SpectrogramConfig,
    apply_alignment,
    fit_alignment,
    frame_count,
    normalize_intensity,
    read_audio,
    read_landmarks,
    spectrogram,
    write_audio,
    write_landmarks,
)


def shifted_canonical(dx, dy):
    pts = CANONICAL_LANDMARKS.as_array() + np.array([dx, dy])
    return LandmarkSet(points=tuple(map(tuple, pts)))


class TestLandmarks:
    def test_five_named_points(self):
        assert len(LANDMARK_NAMES) == 5
        assert CANONICAL_LANDMARKS.as_array().shape == (5, 2)

    def test_wrong_count(self):
        with pytest.raises(ValueOutOfRange):
            LandmarkSet(points=((0.0, 0.0),))

    def test_non_finite(self):
        pts = [(float(i), 0.0) for i in range(4)] + [(np.nan, 0.0)]
        with pytest.raises(ValueOutOfRange):
            LandmarkSet(points=tuple(pts))


class TestAlignment:
    def test_identity_fit(self):
        fit = fit_alignment(CANONICAL_LANDMARKS, CANONICAL_LANDMARKS)
        assert fit.residual < 1e-9
        assert fit.matrix == pytest.approx(
            np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]), abs=1e-9
        )

    def test_translation_recovered(self):
        source = shifted_canonical(3.0, 4.0)
        fit = fit_alignment(source, CANONICAL_LANDMARKS)
        assert fit.residual < 1e-9
        assert fit.matrix[:, :2] == pytest.approx(np.eye(2), abs=1e-9)
        assert fit.matrix[:, 2] == pytest.approx([-3.0, -4.0], abs=1e-9)

    def test_planted_affines_recovered(self):
        rng = np.random.default_rng(0)
        dst = CANONICAL_LANDMARKS.as_array()
        for _ in range(100):
            angle = rng.uniform(-np.pi / 3, np.pi / 3)
            scale = rng.uniform(0.5, 2.0)
            shear = rng.uniform(-0.2, 0.2)
            rot = scale * np.array(
                [[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]]
            )
            rot[0, 1] += shear
            shift = rng.uniform(-20, 20, size=2)
            inverse = np.linalg.inv(rot)
            src_pts = (dst - shift) @ inverse.T
            source = LandmarkSet(points=tuple(map(tuple, src_pts)))
            fit = fit_alignment(source, CANONICAL_LANDMARKS)
            assert fit.residual < 1e-9
            mapped = apply_alignment(fit, src_pts)
            assert mapped == pytest.approx(dst, abs=1e-6)

    def test_collinear_rejected(self):
        pts = tuple((float(i), 2.0 * i + 1.0) for i in range(5))
        with pytest.raises(DegenerateLandmarks):
            fit_alignment(LandmarkSet(points=pts), CANONICAL_LANDMARKS)

    def test_apply_to_raw_matrix(self):
        matrix = np.array([[2.0, 0.0, 1.0], [0.0, 2.0, -1.0]])
        out = apply_alignment(matrix, [[1.0, 1.0]])
        assert out == pytest.approx(np.array([[3.0, 1.0]]))

    def test_noisy_fit_reports_residual(self):
        rng = np.random.default_rng(1)
        pts = CANONICAL_LANDMARKS.as_array() + rng.normal(0, 2.0, size=(5, 2))
        fit = fit_alignment(
            LandmarkSet(points=tuple(map(tuple, pts))), CANONICAL_LANDMARKS
        )
        assert fit.residual > 0.01


class TestNormalizeIntensity:
    def test_byte_range(self):
        out = normalize_intensity([0, 64, 255], 0, 255)
        assert out[0] == -1.0
        assert out[2] == 1.0
        assert out[1] == pytest.approx(2 * 64 / 255 - 1)  # about -0.498

    def test_clamps_outside_range(self):
        out = normalize_intensity([-10, 300], 0, 255)
        assert out.tolist() == [-1.0, 1.0]

    def test_midpoint_is_zero(self):
        assert normalize_intensity([5.0], 0, 10)[0] == 0.0

    def test_bad_range(self):
        with pytest.raises(BadRange):
            normalize_intensity([1.0], 5, 5)


class TestSpectrogramConfig:
    def test_default_sample_counts(self):
        cfg = SpectrogramConfig()
        assert cfg.window_samples == 1455  # 33 ms at 44.1 kHz
        assert cfg.hop_samples == 970  # window - 11 ms overlap
        assert cfg.fft_size == 2048

    def test_explicit_hop(self):
        cfg = SpectrogramConfig(hop_ms=10.0)
        assert cfg.hop_samples == 441

    def test_window_must_exceed_overlap(self):
        with pytest.raises(BadRange):
            SpectrogramConfig(window_ms=10.0, overlap_ms=11.0)

    def test_frame_count_formula(self):
        cfg = SpectrogramConfig()
        assert frame_count(1455, cfg) == 1
        assert frame_count(44100, cfg) == (44100 - 1455) // 970 + 1
        rng = np.random.default_rng(2)
        for _ in range(100):
            n = int(rng.integers(cfg.window_samples, 200_000))
            assert frame_count(n, cfg) == (n - 1455) // 970 + 1


class TestSpectrogram:
    def test_shape(self):
        rng = np.random.default_rng(3)
        cfg = SpectrogramConfig()
        x = rng.normal(size=44100)
        mags = spectrogram(x, cfg)
        assert mags.shape == (frame_count(44100, cfg), cfg.fft_size // 2 + 1)

    def test_output_range(self):
        rng = np.random.default_rng(4)
        mags = spectrogram(rng.normal(size=5000), SpectrogramConfig())
        assert mags.min() == -1.0
        assert mags.max() == 1.0

    def test_silence_is_zeros(self):
        mags = spectrogram(np.zeros(3000), SpectrogramConfig())
        assert np.all(mags == 0.0)

    def test_tone_peaks_at_expected_bin(self):
        cfg = SpectrogramConfig()
        t = np.arange(44100) / 44100.0
        freq = 1000.0
        x = np.sin(2 * np.pi * freq * t)
        mags = spectrogram(x, cfg)
        peak_bin = int(np.argmax(mags[0]))
        expected = freq * cfg.fft_size / 44100.0
        assert abs(peak_bin - expected) <= 1

    def test_too_short(self):
        with pytest.raises(SignalTooShort):
            spectrogram(np.zeros(100), SpectrogramConfig())

    def test_requires_mono(self):
        with pytest.raises(BadRange):
            spectrogram(np.zeros((2, 3000)), SpectrogramConfig())


class TestFileFormats:
    def test_audio_round_trip(self, tmp_path):
        path = tmp_path / "clip.audio"
        rng = np.random.default_rng(5)
        samples = rng.normal(size=999)
        write_audio(path, 16000, samples)
        rate, loaded = read_audio(path)
        assert rate == 16000
        assert np.array_equal(loaded, samples)

    def test_landmark_round_trip(self, tmp_path):
        path = tmp_path / "faces.landmarks"
        rng = np.random.default_rng(6)
        frames = {
            i: LandmarkSet(points=tuple(map(tuple, rng.uniform(0, 96, (5, 2)))))
            for i in (0, 3, 7)
        }
        write_landmarks(path, frames)
        loaded = read_landmarks(path)
        assert set(loaded) == {0, 3, 7}
        for i, lm in frames.items():
            assert np.array_equal(loaded[i].as_array(), lm.as_array())

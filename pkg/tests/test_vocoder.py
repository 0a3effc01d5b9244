import numpy as np
import pytest

from voxanon.audio_io import AudioBuffer
from voxanon.dsp import LpcModel
from voxanon.errors import ValidationError
from voxanon.vocoder import (
    F0Track,
    VocoderParams,
    analyze,
    estimate_f0,
    shift_f0,
    synthesize,
    synthesize_with_diagnostics,
)

from conftest import ar_coeffs_from_poles, ar_signal, formant_poles, sine


def interior(mask_or_vals, margin=8):
    return mask_or_vals[margin:-margin]


class TestEstimateF0:
    def test_pure_tone_220(self):
        track = estimate_f0(sine(220.0, 1.0))
        v = interior(track.voiced)
        f = interior(track.f0_hz)
        assert v.mean() >= 0.9
        inside = np.abs(f[v] - 220.0) <= 2.0
        assert inside.mean() >= 0.9

    def test_white_noise_mostly_unvoiced(self, rng):
        buf = AudioBuffer(samples=0.3 * rng.standard_normal(16000), sample_rate_hz=16000)
        track = estimate_f0(buf)
        assert (~track.voiced).mean() >= 0.9

    def test_silence_all_unvoiced(self):
        track = estimate_f0(AudioBuffer(samples=np.zeros(8000), sample_rate_hz=16000))
        assert not track.voiced.any()
        assert np.all(track.f0_hz == 0.0)

    def test_wrong_rate_rejected(self):
        with pytest.raises(ValidationError):
            estimate_f0(AudioBuffer(samples=np.zeros(8000), sample_rate_hz=8000))

    def test_hop_is_5ms(self):
        track = estimate_f0(sine(150.0, 0.5))
        assert track.hop_ms == 5.0
        assert len(track) == int(np.ceil(8000 / 80))


class TestShiftF0:
    def track(self, f0=200.0, n=10):
        return F0Track(hop_ms=5.0, f0_hz=np.full(n, f0), voiced=np.ones(n, dtype=bool))

    def test_octave_up(self):
        out = shift_f0(self.track(200.0), 12.0)
        np.testing.assert_allclose(out.f0_hz, 400.0)

    def test_three_semitones(self):
        out = shift_f0(self.track(200.0), 3.0)
        np.testing.assert_allclose(out.f0_hz, 200.0 * 2 ** 0.25)
        assert abs(out.f0_hz[0] - 237.84) < 0.01

    def test_zero_shift_identity(self):
        t = self.track(173.2)
        out = shift_f0(t, 0.0)
        np.testing.assert_array_equal(out.f0_hz, t.f0_hz)
        assert out.clamp_events == 0

    def test_shift_round_trip_restores(self):
        t = self.track(200.0)
        back = shift_f0(shift_f0(t, 4.5), -4.5)
        np.testing.assert_allclose(back.f0_hz, t.f0_hz, rtol=1e-12)
        assert back.clamp_events == 0

    def test_clamping_counted(self):
        out = shift_f0(self.track(400.0, n=6), 12.0)  # 800 Hz -> clamp at 500
        np.testing.assert_allclose(out.f0_hz, 500.0)
        assert out.clamp_events == 6

    def test_unvoiced_untouched(self):
        t = F0Track(hop_ms=5.0, f0_hz=np.array([200.0, 0.0]), voiced=np.array([True, False]))
        out = shift_f0(t, 5.0)
        assert out.f0_hz[1] == 0.0 and not out.voiced[1]


class TestAnalyze:
    def test_envelope_tracks_resonance(self):
        poles = formant_poles([1200.0], [120.0])
        buf = ar_signal(ar_coeffs_from_poles(poles), 16000, seed=5)
        params = analyze(buf)
        # oracle: densely sampled envelope magnitude; median over interior
        # frames since a single 25 ms frame of a stochastic AR process has
        # ~50 Hz peak jitter
        freqs = np.linspace(100, 4000, 2000)
        z = np.exp(-2j * np.pi * freqs / 16000)
        peaks = []
        for env in params.envelopes[40:160]:
            assert env.order > 0
            a = env.coefficients
            denom = 1.0 - sum(a[k] * z ** (k + 1) for k in range(len(a)))
            peaks.append(freqs[np.argmax(1.0 / np.abs(denom))])
        assert abs(np.median(peaks) - 1200.0) < 50.0

    def test_silence_degenerate_envelopes(self):
        params = analyze(AudioBuffer(samples=np.zeros(4000), sample_rate_hz=16000))
        assert params.degenerate_frames == len(params.envelopes)
        assert not params.f0.voiced.any()

    def test_short_buffer_one_frame_min(self):
        params = analyze(sine(200.0, 0.1))
        assert len(params.envelopes) >= 1


class TestSynthesize:
    def test_round_trip_f0(self):
        buf = sine(220.0, 1.0)
        out = synthesize(analyze(buf))
        assert len(out) > 0
        track = estimate_f0(out)
        v = interior(track.voiced)
        f = interior(track.f0_hz)
        assert v.mean() > 0.5
        good = np.abs(f[v] - 220.0) <= 5.0
        assert good.mean() >= 0.85

    def test_unvoiced_flat_envelope_spectrum(self):
        n = 400  # 2 s at 5 ms hop
        f0 = F0Track(hop_ms=5.0, f0_hz=np.zeros(n), voiced=np.zeros(n, dtype=bool))
        envs = [LpcModel(order=0, coefficients=np.zeros(0), gain=1.0) for _ in range(n)]
        params = VocoderParams(f0=f0, envelopes=envs, frame_ms=25.0, hop_ms=5.0, sample_rate_hz=16000)
        out = synthesize(params)
        from scipy.signal import welch

        freqs, psd = welch(out.samples, fs=16000, nperseg=1024)
        band = (freqs >= 300) & (freqs <= 6000)
        level_db = 10 * np.log10(psd[band])
        mean_db = level_db.mean()
        assert np.max(np.abs(level_db - mean_db)) <= 6.0

    def test_empty_params_empty_buffer(self):
        f0 = F0Track(hop_ms=5.0, f0_hz=np.zeros(0), voiced=np.zeros(0, dtype=bool))
        params = VocoderParams(f0=f0, envelopes=[], frame_ms=25.0, hop_ms=5.0, sample_rate_hz=16000)
        assert len(synthesize(params)) == 0

    def test_unstable_envelope_bypassed_and_counted(self):
        n = 20
        f0 = F0Track(hop_ms=5.0, f0_hz=np.full(n, 150.0), voiced=np.ones(n, dtype=bool))
        envs = [LpcModel(order=1, coefficients=[0.5], gain=1.0) for _ in range(n)]
        envs[3] = LpcModel(order=1, coefficients=[1.05], gain=1.0)
        params = VocoderParams(f0=f0, envelopes=envs, frame_ms=25.0, hop_ms=5.0, sample_rate_hz=16000)
        out, diag = synthesize_with_diagnostics(params)
        assert diag["bypassed_frames"] == 1
        assert np.all(np.isfinite(out.samples))

    def test_output_sane_peak_and_finite(self):
        out = synthesize(analyze(sine(180.0, 0.8)))
        assert np.all(np.isfinite(out.samples))
        assert np.max(np.abs(out.samples)) <= 4.0


class TestPitchShiftEndToEnd:
    @pytest.mark.parametrize("freq", [120.0, 180.0, 240.0])
    @pytest.mark.parametrize("semitones", [-5.0, -3.0, 3.0, 5.0])
    def test_shifted_tone_lands_on_target(self, freq, semitones):
        params = analyze(sine(freq, 1.0))
        shifted = VocoderParams(
            f0=shift_f0(params.f0, semitones),
            envelopes=params.envelopes,
            frame_ms=params.frame_ms,
            hop_ms=params.hop_ms,
            sample_rate_hz=params.sample_rate_hz,
        )
        out = synthesize(shifted)
        target = freq * 2 ** (semitones / 12.0)
        track = estimate_f0(out)
        v = interior(track.voiced)
        f = interior(track.f0_hz)
        assert v.mean() > 0.5
        within = np.abs(f[v] - target) <= 0.01 * target
        assert within.mean() >= 0.85

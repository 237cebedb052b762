import numpy as np
import pytest

from rhrnet import audio
from rhrnet.audio import AudioClip
from rhrnet.errors import DegenerateSignalError, DimensionError, SignalTooShortError
from rhrnet.metrics import MetricReport, MetricRow, evaluate_pair, ssnr, stoi, third_octave_bands


@pytest.fixture(scope="module")
def speech():
    return AudioClip(audio.speech_like(3 * 16000, 16000, np.random.default_rng(11)), 16000)


def clip(x, rate=16000):
    return AudioClip(x, rate)


def test_ssnr_identical_signals_hit_the_ceiling(speech):
    assert ssnr(speech, speech) == 35.0


def test_ssnr_constant_per_frame_snr(rng):
    # e = (1 + k) c leaves error k c in every frame, so each frame scores -20 log10(k)
    c = rng.standard_normal(16000)
    k = 10 ** (-10 / 20)
    assert ssnr(clip(c), clip(c * (1 + k))) == pytest.approx(10.0, abs=1e-9)


def test_ssnr_floor(rng):
    c = rng.standard_normal(8000)
    assert ssnr(clip(c), clip(-100 * c)) == -10.0


def test_ssnr_is_monotone_in_noise_level(speech, rng):
    noise = rng.standard_normal(len(speech))
    scores = [ssnr(speech, clip(speech.samples + s * noise)) for s in (0.001, 0.01, 0.1, 1.0)]
    assert all(a > b for a, b in zip(scores, scores[1:]))


def test_ssnr_skips_silent_frames():
    c = np.concatenate([np.zeros(4800), np.ones(4800)])
    assert ssnr(clip(c), clip(c * 1.1)) == pytest.approx(20.0, abs=1e-9)


def test_ssnr_short_clip_is_one_frame():
    c = np.ones(100)
    assert ssnr(clip(c), clip(1.1 * c)) == pytest.approx(20.0, abs=1e-9)


def test_ssnr_errors(rng):
    with pytest.raises(DimensionError):
        ssnr(clip(np.ones(10)), clip(np.ones(11)))
    with pytest.raises(DegenerateSignalError):
        ssnr(clip(np.zeros(1000)), clip(np.ones(1000)))


def test_stoi_identity(speech):
    assert stoi(speech, speech) == pytest.approx(1.0, abs=1e-6)


def test_stoi_high_snr(speech, rng):
    noisy = audio.mix_at_snr(speech, clip(rng.standard_normal(len(speech))), 30.0)
    assert stoi(speech, noisy) >= 0.95


def test_stoi_of_pure_noise_is_low(speech, rng):
    assert stoi(speech, clip(rng.standard_normal(len(speech)))) < 0.3


def test_stoi_scale_invariance(speech, rng):
    noisy = audio.mix_at_snr(speech, clip(rng.standard_normal(len(speech))), 0.0)
    a = stoi(speech, noisy)
    b = stoi(speech, clip(3.7 * noisy.samples))
    assert a == pytest.approx(b, abs=1e-9)


def test_stoi_decreases_with_snr(speech, rng):
    noise = clip(rng.standard_normal(len(speech)))
    scores = [stoi(speech, audio.mix_at_snr(speech, noise, s)) for s in (20, 5, -5)]
    assert scores[0] > scores[1] > scores[2]


def test_stoi_matches_reference_implementation(rng):
    pystoi = pytest.importorskip("pystoi")
    c = audio.speech_like(30000, 10000, np.random.default_rng(4))
    for snr in (10.0, 0.0, -5.0):
        n = audio.mix_at_snr(clip(c, 10000), clip(rng.standard_normal(30000), 10000), snr).samples
        ref = pystoi.stoi(c, n, 10000, extended=False)
        assert stoi(clip(c, 10000), clip(n, 10000)) == pytest.approx(ref, abs=1e-6)


def test_stoi_too_short(rng):
    x = rng.standard_normal(2000)
    with pytest.raises(SignalTooShortError):
        stoi(clip(x), clip(x))


def test_stoi_silent_reference(rng):
    with pytest.raises(DegenerateSignalError):
        stoi(clip(np.zeros(16000)), clip(rng.standard_normal(16000)))


def test_third_octave_bands():
    obm = third_octave_bands()
    assert obm.shape == (15, 257)
    assert set(np.unique(obm)) <= {0.0, 1.0}
    # bands do not overlap and every band owns at least one bin
    assert obm.sum(axis=0).max() == 1
    assert obm.sum(axis=1).min() >= 1
    # 150 Hz at 10 kHz / 512 points sits near bin 7.7
    assert np.flatnonzero(obm[0])[0] in (6, 7)


def test_report_formats():
    rep = MetricReport([MetricRow("a.wav", 10.0, 0.9), MetricRow("b.wav", 20.0, 0.7)])
    assert rep.mean_ssnr == 15.0 and rep.mean_stoi == pytest.approx(0.8)
    lines = rep.to_csv().splitlines()
    assert lines[0] == "file,ssnr,stoi" and len(lines) == 3
    assert rep.to_table().splitlines()[-1].startswith("mean")


def test_evaluate_pair_clean_against_itself(speech):
    row = evaluate_pair("x", speech, speech)
    assert row.ssnr == 35.0 and row.stoi == pytest.approx(1.0, abs=1e-6)

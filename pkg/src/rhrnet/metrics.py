"""Segmental SNR and STOI on clean/enhanced pairs."""

from __future__ import annotations

import csv
import functools
import io
from dataclasses import dataclass, field

import numpy as np

from .audio import AudioClip, resample
from .errors import DegenerateSignalError, DimensionError, SignalTooShortError

SSNR_FLOOR = -10.0
SSNR_CEIL = 35.0
SSNR_FRAME_SEC = 0.030

STOI_RATE = 10000
STOI_FRAME = 256
STOI_NFFT = 512
STOI_BANDS = 15
STOI_MIN_FREQ = 150.0
STOI_N = 30
STOI_BETA = -15.0
STOI_DYN_RANGE = 40.0
_EPS = np.finfo(np.float64).eps


def _check_pair(clean: AudioClip, enhanced: AudioClip) -> None:
    if len(clean) != len(enhanced):
        raise DimensionError(f"clean has {len(clean)} samples, enhanced has {len(enhanced)}")
    if clean.rate != enhanced.rate:
        raise DimensionError(f"rates differ: {clean.rate} vs {enhanced.rate}")


def ssnr(clean: AudioClip, enhanced: AudioClip) -> float:
    """Mean per-frame SNR in dB, each frame clamped to [-10, 35].

    Rectangular 30 ms frames with 75% overlap.  Frames with no clean energy
    are skipped; a clip shorter than one frame is treated as a single frame.
    """
    _check_pair(clean, enhanced)
    c, e = clean.samples, enhanced.samples
    flen = max(1, int(round(SSNR_FRAME_SEC * clean.rate)))
    hop = max(1, flen // 4)
    if len(c) <= flen:
        starts = [0]
    else:
        starts = range(0, len(c) - flen + 1, hop)
    scores = []
    for s in starts:
        sig = float(np.sum(c[s:s + flen] ** 2))
        if sig == 0:
            continue
        err = float(np.sum((c[s:s + flen] - e[s:s + flen]) ** 2))
        snr = SSNR_CEIL if err == 0 else 10 * np.log10(sig / err)
        scores.append(min(max(snr, SSNR_FLOOR), SSNR_CEIL))
    if not scores:
        raise DegenerateSignalError("no frame of the clean signal carries energy")
    return float(np.mean(scores))


@functools.lru_cache(maxsize=None)
def third_octave_bands(rate: int = STOI_RATE, nfft: int = STOI_NFFT, bands: int = STOI_BANDS,
                       min_freq: float = STOI_MIN_FREQ) -> np.ndarray:
    """[bands, nfft/2 + 1] 0/1 matrix grouping FFT bins into 1/3-octave bands.

    Band k is centred at ``min_freq * 2^(k/3)``; its edges are snapped to the
    nearest FFT bins and the upper edge bin is excluded.
    """
    freqs = np.linspace(0, rate, nfft + 1)[: nfft // 2 + 1]
    k = np.arange(bands, dtype=float)
    lo = min_freq * 2.0 ** ((2 * k - 1) / 6)
    hi = min_freq * 2.0 ** ((2 * k + 1) / 6)
    obm = np.zeros((bands, len(freqs)))
    for j in range(bands):
        a = int(np.argmin((freqs - lo[j]) ** 2))
        b = int(np.argmin((freqs - hi[j]) ** 2))
        obm[j, a:b] = 1
    return obm


def _window(n: int) -> np.ndarray:
    # symmetric Hann without the zero end points
    return np.hanning(n + 2)[1:-1]


def _frame_starts(n: int, flen: int, hop: int) -> range:
    return range(0, n - flen, hop)


def _overlap_add(frames: np.ndarray, hop: int) -> np.ndarray:
    if len(frames) == 0:
        return np.zeros(0)
    flen = frames.shape[1]
    out = np.zeros((len(frames) - 1) * hop + flen)
    for k, f in enumerate(frames):
        out[k * hop:k * hop + flen] += f
    return out


def remove_silent_frames(x: np.ndarray, y: np.ndarray, dyn_range: float = STOI_DYN_RANGE,
                         flen: int = STOI_FRAME, hop: int = STOI_FRAME // 2):
    """Drop frames whose clean energy is more than ``dyn_range`` dB below the
    loudest clean frame, dropping the same frames from ``y``; the remaining
    windowed frames are overlap-added back into signals."""
    w = _window(flen)
    starts = _frame_starts(len(x), flen, hop)
    xf = np.array([w * x[s:s + flen] for s in starts]).reshape(-1, flen)
    yf = np.array([w * y[s:s + flen] for s in starts]).reshape(-1, flen)
    if len(xf) == 0:
        raise SignalTooShortError(f"signal of {len(x)} samples is shorter than one frame")
    energy = 20 * np.log10(np.linalg.norm(xf, axis=1) + _EPS)
    keep = energy > energy.max() - dyn_range
    return _overlap_add(xf[keep], hop), _overlap_add(yf[keep], hop)


def _band_envelopes(x: np.ndarray) -> np.ndarray:
    """[bands, frames] 1/3-octave amplitudes of Hann-windowed, 50%-overlap frames."""
    w = _window(STOI_FRAME)
    frames = np.array([w * x[s:s + STOI_FRAME]
                       for s in _frame_starts(len(x), STOI_FRAME, STOI_FRAME // 2)])
    if len(frames) == 0:
        return np.zeros((STOI_BANDS, 0))
    spec = np.abs(np.fft.rfft(frames, n=STOI_NFFT, axis=1)) ** 2
    return np.sqrt(third_octave_bands() @ spec.T)


def _normalize_rows(v: np.ndarray) -> np.ndarray:
    v = v - v.mean(axis=-1, keepdims=True)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.divide(v, norm, out=np.zeros_like(v), where=norm > 0)


def stoi(clean: AudioClip, enhanced: AudioClip) -> float:
    """Short-time objective intelligibility of ``enhanced`` against ``clean``."""
    _check_pair(clean, enhanced)
    x = resample(clean, STOI_RATE).samples
    y = resample(enhanced, STOI_RATE).samples
    if not np.any(x):
        raise DegenerateSignalError("clean signal is silent")
    x, y = remove_silent_frames(x, y)

    X = _band_envelopes(x)
    Y = _band_envelopes(y)
    frames = X.shape[1]
    if frames < STOI_N:
        raise SignalTooShortError(
            f"only {frames} frames after silence removal; STOI needs at least {STOI_N}")

    # [segments, bands, N] sliding windows of N consecutive frames
    idx = np.arange(STOI_N)[None, :] + np.arange(frames - STOI_N + 1)[:, None]
    Xs = X[:, idx].transpose(1, 0, 2)
    Ys = Y[:, idx].transpose(1, 0, 2)

    xn = np.linalg.norm(Xs, axis=-1, keepdims=True)
    yn = np.linalg.norm(Ys, axis=-1, keepdims=True)
    gain = np.divide(xn, yn, out=np.zeros_like(xn), where=yn > 0)
    clip = 10 ** (-STOI_BETA / 20)
    Yp = np.minimum(Ys * gain, Xs * (1 + clip))

    corr = np.sum(_normalize_rows(Xs) * _normalize_rows(Yp), axis=-1)
    return float(corr.mean())


@dataclass
class MetricRow:
    name: str
    ssnr: float
    stoi: float


@dataclass
class MetricReport:
    rows: list[MetricRow] = field(default_factory=list)

    @property
    def mean_ssnr(self) -> float:
        return float(np.mean([r.ssnr for r in self.rows])) if self.rows else float("nan")

    @property
    def mean_stoi(self) -> float:
        return float(np.mean([r.stoi for r in self.rows])) if self.rows else float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["file", "ssnr", "stoi"])
        for r in self.rows:
            w.writerow([r.name, f"{r.ssnr:.6f}", f"{r.stoi:.6f}"])
        return buf.getvalue()

    def to_table(self) -> str:
        width = max([len("file"), len("mean")] + [len(r.name) for r in self.rows])
        lines = [f"{'file':<{width}}  {'SSNR (dB)':>10}  {'STOI':>8}"]
        lines += [f"{r.name:<{width}}  {r.ssnr:>10.3f}  {r.stoi:>8.4f}" for r in self.rows]
        lines.append(f"{'mean':<{width}}  {self.mean_ssnr:>10.3f}  {self.mean_stoi:>8.4f}")
        return "\n".join(lines)


def evaluate_pair(name: str, clean: AudioClip, enhanced: AudioClip) -> MetricRow:
    return MetricRow(name, ssnr(clean, enhanced), stoi(clean, enhanced))

"""WAV I/O, resampling, segmentation, SNR mixing and synthetic data."""

from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import resample_poly

from .errors import (ContractError, DataError, DegenerateSignalError, MalformedWavError,
                     UnsupportedBitDepthError, UnsupportedCodecError)

SAMPLE_RATE = 16000
SEGMENT_LEN = 1024
TRAIN_SNRS = (15.0, 10.0, 5.0, 0.0)
TEST_SNRS = (17.5, 12.5, 7.5, 2.5)

_PCM = 1
_EXTENSIBLE = 0xFFFE


@dataclass
class AudioClip:
    samples: np.ndarray
    rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.rate <= 0:
            raise ContractError(f"sample rate must be positive, got {self.rate}")
        if self.samples.ndim != 1:
            raise ContractError(f"expected mono samples, got shape {self.samples.shape}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.rate


# -- WAV ---------------------------------------------------------------------

def _chunks(data: bytes, path):
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise MalformedWavError(f"{path}: chunk {cid!r} truncated")
        yield cid, body
        pos += 8 + size + (size & 1)


def read_wav(path, channel: int | None = None) -> AudioClip:
    """Read a PCM16 RIFF/WAVE file; integer v maps to v / 32768.

    Multi-channel files need an explicit ``channel`` index.
    """
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedWavError(f"{path}: not a RIFF/WAVE file")
    fmt = pcm = None
    for cid, body in _chunks(data, path):
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            pcm = body
    if fmt is None or len(fmt) < 16:
        raise MalformedWavError(f"{path}: missing or short fmt chunk")
    if pcm is None:
        raise MalformedWavError(f"{path}: missing data chunk")
    codec, nchan, rate, _, block, bits = struct.unpack_from("<HHIIHH", fmt)
    if codec == _EXTENSIBLE and len(fmt) >= 26:
        codec = struct.unpack_from("<H", fmt, 24)[0]
    if codec != _PCM:
        raise UnsupportedCodecError(f"{path}: codec tag {codec} is not integer PCM")
    if bits != 16:
        raise UnsupportedBitDepthError(f"{path}: {bits}-bit samples, only 16-bit is supported")
    if nchan < 1 or rate == 0 or block != 2 * nchan:
        raise MalformedWavError(f"{path}: inconsistent fmt (channels={nchan}, rate={rate}, "
                                f"block={block})")
    frames = np.frombuffer(pcm[: len(pcm) - len(pcm) % block], dtype="<i2").reshape(-1, nchan)
    if nchan > 1:
        if channel is None:
            raise MalformedWavError(f"{path}: {nchan} channels; pass channel= to select one")
        if not 0 <= channel < nchan:
            raise ContractError(f"channel {channel} out of range for {nchan} channels")
    return AudioClip(frames[:, channel or 0].astype(np.float64) / 32768.0, rate)


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")


def write_wav(clip: AudioClip, path) -> None:
    pcm = to_pcm16(clip.samples).tobytes()
    header = struct.pack("<4sI4s4sIHHIIHH4sI", b"RIFF", 36 + len(pcm), b"WAVE", b"fmt ", 16,
                         _PCM, 1, clip.rate, 2 * clip.rate, 2, 16, b"data", len(pcm))
    Path(path).write_bytes(header + pcm)


# -- resampling --------------------------------------------------------------

def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Polyphase Kaiser-windowed sinc resampling to ``target_rate``.

    Output length is ``round(len * target / source)``.
    """
    if target_rate <= 0:
        raise ContractError(f"target rate must be positive, got {target_rate}")
    if target_rate == clip.rate:
        return AudioClip(clip.samples.copy(), clip.rate)
    ratio = Fraction(target_rate, clip.rate)
    out = resample_poly(clip.samples, ratio.numerator, ratio.denominator)
    want = int(round(len(clip) * target_rate / clip.rate))
    out = out[:want] if len(out) >= want else np.pad(out, (0, want - len(out)))
    return AudioClip(out, target_rate)


# -- segmentation ------------------------------------------------------------

@dataclass
class SegmentSet:
    segments: np.ndarray          # [N, L]
    offsets: np.ndarray           # start sample of each segment in the source
    original_length: int
    mode: str                     # "train" (hop 3L/4) or "eval" (hop L)
    padded: np.ndarray = field(default=None)  # True where the tail was zero-padded

    @property
    def L(self) -> int:
        return self.segments.shape[1]

    def __len__(self) -> int:
        return len(self.segments)


def hop_for(L: int, mode: str) -> int:
    if mode == "train":
        if (3 * L) % 4:
            raise ContractError(f"train hop 3L/4 is not an integer for L={L}")
        return 3 * L // 4
    if mode == "eval":
        return L
    raise ContractError(f"mode must be 'train' or 'eval', got {mode!r}")


def segment(clip: AudioClip, L: int = SEGMENT_LEN, mode: str = "eval") -> SegmentSet:
    """Slice into L-sample windows (25% overlap in train mode, none in eval mode).

    Samples not covered by a full window go into one zero-padded tail segment.
    """
    x = clip.samples
    if len(x) == 0:
        raise ContractError("cannot segment an empty clip")
    hop = hop_for(L, mode)
    full = 0 if len(x) < L else (len(x) - L) // hop + 1
    offsets = [k * hop for k in range(full)]
    if full == 0 or offsets[-1] + L < len(x):
        offsets.append(full * hop)
    segs = np.zeros((len(offsets), L))
    padded = np.zeros(len(offsets), dtype=bool)
    for k, off in enumerate(offsets):
        chunk = x[off:off + L]
        segs[k, :len(chunk)] = chunk
        padded[k] = len(chunk) < L
    return SegmentSet(segs, np.asarray(offsets), len(x), mode, padded)


def reassemble(segset: SegmentSet, rate: int = SAMPLE_RATE) -> AudioClip:
    """Concatenate eval-mode segments and trim the padding."""
    if segset.mode != "eval":
        raise ContractError("only eval-mode (non-overlapping) segments can be reassembled")
    order = np.argsort(segset.offsets, kind="stable")
    flat = np.asarray(segset.segments)[order].reshape(-1)
    return AudioClip(flat[: segset.original_length], rate)


# -- mixing --------------------------------------------------------------------

def power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x)))


def measure_snr(clean: np.ndarray, noisy: np.ndarray) -> float:
    return 10 * np.log10(power(clean) / power(np.asarray(noisy) - clean))


def fit_noise(noise: np.ndarray, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Tile a short noise or crop a long one (at a seeded offset) to ``n`` samples."""
    if len(noise) < n:
        return np.tile(noise, -(-n // len(noise)))[:n]
    start = 0 if rng is None or len(noise) == n else int(rng.integers(0, len(noise) - n + 1))
    return noise[start:start + n]


def mix_at_snr(clean: AudioClip, noise: AudioClip, snr_db: float,
               rng: np.random.Generator | None = None) -> AudioClip:
    """clean + g * noise with g = sqrt(P_clean / P_noise) * 10^(-snr/20)."""
    if clean.rate != noise.rate:
        raise ContractError(f"rates differ: clean {clean.rate} Hz, noise {noise.rate} Hz")
    if not np.isfinite(snr_db):
        raise ContractError(f"SNR must be finite, got {snr_db}")
    n = fit_noise(noise.samples, len(clean), rng)
    pc, pn = power(clean.samples), power(n)
    if pc == 0:
        raise DegenerateSignalError("clean signal is silent")
    if pn == 0:
        raise DegenerateSignalError("noise signal is silent")
    g = np.sqrt(pc / pn) * 10 ** (-snr_db / 20)
    return AudioClip(clean.samples + g * n, clean.rate)


# -- synthetic corpus ----------------------------------------------------------

def speech_like(n: int, rate: int, rng: np.random.Generator, peak: float = 0.5) -> np.ndarray:
    """Broadband speech stand-in: a harmonic series on a drifting pitch plus an
    unvoiced noise component, both under a syllable-rate envelope."""
    t = np.arange(n) / rate
    f0 = rng.uniform(100, 220) * (1 + 0.1 * np.sin(2 * np.pi * rng.uniform(0.5, 2) * t
                                                 + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(f0) / rate
    top = min(5000.0, 0.45 * rate)
    voiced = np.zeros(n)
    k = 1
    while k * f0.max() < top:
        voiced += rng.uniform(0.5, 1.0) / np.sqrt(k) * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
        k += 1
    unvoiced = rng.standard_normal(n) * 0.3 * np.sqrt(k)
    syl = rng.uniform(3, 6)
    env = 0.6 + 0.4 * np.sin(2 * np.pi * syl * t + rng.uniform(0, 2 * np.pi))
    mix = 0.5 + 0.5 * np.sin(2 * np.pi * syl * 0.5 * t + rng.uniform(0, 2 * np.pi))
    x = env * (mix * voiced + (1 - mix) * unvoiced)
    return peak * x / max(np.abs(x).max(), 1e-12)


def make_noise(kind: str, n: int, rate: int, rng: np.random.Generator) -> np.ndarray:
    if kind == "white":
        return rng.standard_normal(n)
    if kind == "babble":
        t = np.arange(n) / rate
        out = np.zeros(n)
        for _ in range(24):
            am = 1 + 0.8 * np.sin(2 * np.pi * rng.uniform(2, 8) * t + rng.uniform(0, 2 * np.pi))
            out += am * np.sin(2 * np.pi * rng.uniform(100, 3500) * t + rng.uniform(0, 2 * np.pi))
        return out
    raise ContractError(f"unknown noise kind {kind!r} (expected 'white' or 'babble')")


@dataclass(frozen=True)
class MixSpec:
    snr_db: tuple[float, ...] = TRAIN_SNRS
    seed: int = 0
    # "white", "babble", or a recorded AudioClip; assigned to pairs round-robin
    noise: tuple = ("white", "babble")

    def __post_init__(self):
        if not self.snr_db or not all(np.isfinite(s) for s in self.snr_db):
            raise ContractError(f"SNR list must be non-empty and finite, got {self.snr_db}")
        if not self.noise:
            raise ContractError("at least one noise kind is required")


@dataclass
class MixedPair:
    clean: AudioClip
    noisy: AudioClip
    snr_db: float
    noise: str


def synth_pairs(spec: MixSpec, count: int, n_samples: int,
                rate: int = SAMPLE_RATE) -> list[MixedPair]:
    """``count`` clean/noisy clips; pair ``k`` uses SNR ``snr_db[k % len]``.

    Each pair draws from its own generator seeded by ``(spec.seed, k)``, so a
    pair does not depend on how many others are generated.
    """
    if count < 1:
        raise ContractError(f"count must be >= 1, got {count}")
    pairs = []
    for k in range(count):
        rng = np.random.default_rng([spec.seed, k])
        clean = AudioClip(speech_like(n_samples, rate, rng), rate)
        source = spec.noise[k % len(spec.noise)]
        if isinstance(source, AudioClip):
            noise, label = source, "recorded"
        else:
            noise, label = AudioClip(make_noise(source, n_samples, rate, rng), rate), source
        snr = float(spec.snr_db[k % len(spec.snr_db)])
        pairs.append(MixedPair(clean, mix_at_snr(clean, noise, snr, rng), snr, label))
    return pairs


def synth_dataset(spec: MixSpec, count: int, L: int = SEGMENT_LEN,
                  rate: int = SAMPLE_RATE) -> tuple[SegmentSet, SegmentSet, np.ndarray]:
    """``count`` independent L-sample pairs as index-aligned clean/noisy SegmentSets.

    Every pair is mixed at its own SNR over exactly its L samples.  Offsets
    place the segments end to end as one virtual stream.
    """
    pairs = synth_pairs(spec, count, L, rate)
    offsets = np.arange(count) * L
    padded = np.zeros(count, dtype=bool)
    clean = SegmentSet(np.stack([p.clean.samples for p in pairs]), offsets, count * L,
                       "eval", padded)
    noisy = SegmentSet(np.stack([p.noisy.samples for p in pairs]), offsets.copy(), count * L,
                       "eval", padded.copy())
    return clean, noisy, np.array([p.snr_db for p in pairs])


def noisy_sine(n_samples: int, snr_db: float = 0.0, freq: float = 250.0, rate: int = SAMPLE_RATE,
               seed: int = 0, amplitude: float = 0.5) -> tuple[AudioClip, AudioClip]:
    """A sine tone and its white-noise-corrupted copy at ``snr_db``."""
    rng = np.random.default_rng(seed)
    t = np.arange(n_samples) / rate
    clean = AudioClip(amplitude * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi)), rate)
    noise = AudioClip(rng.standard_normal(n_samples), rate)
    return clean, mix_at_snr(clean, noise, snr_db)


def paired_segments(clean: AudioClip, noisy: AudioClip, L: int,
                    mode: str) -> tuple[np.ndarray, np.ndarray]:
    """Segment a clean/noisy pair identically; returns ``(noisy [N, L], clean [N, L])``."""
    if len(clean) != len(noisy):
        raise ContractError(f"pair lengths differ: {len(clean)} vs {len(noisy)}")
    return segment(noisy, L, mode).segments, segment(clean, L, mode).segments


def concat_pairs(parts: Sequence[tuple[np.ndarray, np.ndarray]]) -> tuple[np.ndarray, np.ndarray]:
    return (np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))


# -- manifests -------------------------------------------------------------------

@dataclass
class ManifestRow:
    clean: Path
    noisy: Path
    snr_db: float | None = None


def write_manifest(rows: Sequence[ManifestRow], path) -> None:
    """Comma-separated ``clean,noisy,snr`` rows; paths relative to the manifest."""
    path = Path(path)
    base = path.parent.resolve()
    lines = ["clean,noisy,snr"]
    for r in rows:
        rel = [os.path.relpath(Path(p).resolve(), base) for p in (r.clean, r.noisy)]
        snr = "" if r.snr_db is None else f"{r.snr_db:g}"
        lines.append(f"{rel[0]},{rel[1]},{snr}")
    path.write_text("\n".join(lines) + "\n")


def read_manifest(path) -> list[ManifestRow]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest {path} does not exist")
    rows = []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), 1):
            if not rec or not "".join(rec).strip() or rec[0].startswith("#"):
                continue
            if lineno == 1 and [c.strip().lower() for c in rec[:2]] == ["clean", "noisy"]:
                continue
            if len(rec) not in (2, 3):
                raise DataError(f"{path}:{lineno}: expected clean,noisy[,snr], got {rec}")
            try:
                snr = float(rec[2]) if len(rec) == 3 and rec[2].strip() else None
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad SNR {rec[2]!r}") from exc
            clean, noisy = (path.parent / rec[0].strip(), path.parent / rec[1].strip())
            rows.append(ManifestRow(clean, noisy, snr))
    return rows

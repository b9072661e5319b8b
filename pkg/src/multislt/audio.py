"""MEL filterbank features from 16 kHz mono PCM, plus feature-file I/O.

Frames: 25 ms Hann windows, 10 ms hop, 512-point spectrum, 40 triangular
MEL filters spanning 0-8000 Hz, log energies floored at 1e-10. Each
utterance is normalized to zero mean / unit std over the whole T×F matrix.
"""

from __future__ import annotations

import os
import struct
import wave
from dataclasses import dataclass

import numpy as np

SAMPLE_RATE = 16000
WIN_LENGTH = 400    # 25 ms
HOP_LENGTH = 160    # 10 ms
N_FFT = 512
N_MELS = 40
LOG_FLOOR = 1e-10


class AudioFormatError(ValueError):
    """Input file is not 16-bit mono PCM at 16 kHz."""


@dataclass
class FeatureSequence:
    """T×F matrix of MEL frames for one utterance."""

    utt_id: str
    frames: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValueError(f"frames must be a T×F matrix with T >= 1, got {self.frames.shape}")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT,
                   sr: int = SAMPLE_RATE, fmin: float = 0.0, fmax: float = 8000.0):
    """Triangular filters on the MEL scale.

    Returns (filters of shape n_mels×(n_fft//2+1), center frequencies in Hz).
    """
    n_bins = n_fft // 2 + 1
    fft_freqs = np.arange(n_bins) * sr / n_fft
    mel_pts = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    filters = np.zeros((n_mels, n_bins))
    for i in range(n_mels):
        lo, mid, hi = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        up = (fft_freqs - lo) / (mid - lo)
        down = (hi - fft_freqs) / (hi - mid)
        filters[i] = np.maximum(0.0, np.minimum(up, down))
    return filters, hz_pts[1:-1]


_FILTERS, FILTER_CENTERS_HZ = mel_filterbank()


def frame_count(n_samples: int) -> int:
    return (n_samples - WIN_LENGTH) // HOP_LENGTH + 1


def mel_spectrogram(samples: np.ndarray, utt_id: str = "") -> FeatureSequence:
    """Log-MEL energies, T = floor((N-400)/160)+1 frames of 40 coefficients."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1 or len(samples) < WIN_LENGTH:
        raise ValueError(f"need >= {WIN_LENGTH} mono samples, got shape {samples.shape}")
    n_frames = frame_count(len(samples))
    window = np.hanning(WIN_LENGTH)
    idx = np.arange(WIN_LENGTH)[None, :] + HOP_LENGTH * np.arange(n_frames)[:, None]
    frames = samples[idx] * window
    spectrum = np.abs(np.fft.rfft(frames, n=N_FFT, axis=1)) ** 2
    energies = spectrum @ _FILTERS.T
    return FeatureSequence(utt_id, np.log(np.maximum(energies, LOG_FLOOR)))


def normalize(fs: FeatureSequence) -> FeatureSequence:
    """Zero mean, unit std over the whole matrix; std floored to guard silence."""
    if fs.frames.size < 2:
        raise ValueError("normalize needs at least 2 cells")
    mu = fs.frames.mean()
    sd = max(fs.frames.std(), 1e-8)
    return FeatureSequence(fs.utt_id, (fs.frames - mu) / sd)


def read_wav(path: str) -> np.ndarray:
    """16-bit PCM mono WAV at 16 kHz -> float samples in [-1, 1)."""
    with wave.open(path, "rb") as w:
        if w.getframerate() != SAMPLE_RATE:
            raise AudioFormatError(f"{path}: sample rate {w.getframerate()}, need {SAMPLE_RATE}")
        if w.getnchannels() != 1:
            raise AudioFormatError(f"{path}: {w.getnchannels()} channels, need mono")
        if w.getsampwidth() != 2:
            raise AudioFormatError(f"{path}: {8 * w.getsampwidth()}-bit, need 16-bit PCM")
        raw = w.readframes(w.getnframes())
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def write_wav(path: str, samples: np.ndarray):
    pcm = np.clip(np.asarray(samples) * 32768.0, -32768, 32767).astype("<i2")
    with wave.open(path, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(pcm.tobytes())


# feature archive -------------------------------------------------------
# Flat binary records: u32 T, u32 F (little-endian), then T*F float32.
# The sidecar index (<archive>.idx) maps utterance id -> byte offset.

def write_feature_archive(path: str, sequences: list[FeatureSequence]):
    offsets = []
    with open(path, "wb") as f:
        for fs in sequences:
            offsets.append((fs.utt_id, f.tell()))
            t, fdim = fs.frames.shape
            f.write(struct.pack("<II", t, fdim))
            f.write(fs.frames.astype("<f4").tobytes())
    with open(path + ".idx", "w", encoding="utf-8") as f:
        for utt_id, off in offsets:
            f.write(f"{utt_id}\t{off}\n")


class FeatureArchive:
    """Random access into a flat feature file via its sidecar index."""

    def __init__(self, path: str):
        if not os.path.exists(path) or not os.path.exists(path + ".idx"):
            raise FileNotFoundError(f"feature archive {path} (or its .idx sidecar) not found")
        self.path = path
        self.index: dict[str, int] = {}
        with open(path + ".idx", encoding="utf-8") as f:
            for line in f:
                utt_id, off = line.rstrip("\n").split("\t")
                self.index[utt_id] = int(off)

    def __contains__(self, utt_id):
        return utt_id in self.index

    def load(self, utt_id: str) -> FeatureSequence:
        off = self.index[utt_id]
        with open(self.path, "rb") as f:
            f.seek(off)
            t, fdim = struct.unpack("<II", f.read(8))
            frames = np.frombuffer(f.read(4 * t * fdim), dtype="<f4")
        return FeatureSequence(utt_id, frames.reshape(t, fdim).astype(np.float64))

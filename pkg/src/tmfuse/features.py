"""Log-Mel front end and sliding-window mean/variance normalisation."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import kernels

LOG_FLOOR = 1e-10
CMVN_EPS = 1e-8


class WavFormatError(ValueError):
    """The file is not a 16-bit PCM mono RIFF/WAVE file."""


class InputError(ValueError):
    pass


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise InputError("waveform must be a non-empty 1-D array")
        if not np.all(np.isfinite(self.samples)):
            raise InputError("waveform contains non-finite samples")


def read_wav(path) -> Waveform:
    """Read a 16-bit PCM mono WAV file, scaling samples by ``1/32768``."""
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            frames = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        raise WavFormatError(f"{path}: {exc}") from None
    except EOFError:
        raise WavFormatError(f"{path}: truncated header") from None
    if channels != 1:
        raise WavFormatError(f"{path}: only mono is supported, got channels={channels}")
    if width != 2:
        raise WavFormatError(f"{path}: only 16-bit PCM is supported, got sampwidth={width}")
    if len(frames) % 2:
        raise WavFormatError(f"{path}: data chunk has odd length {len(frames)}")
    samples = np.frombuffer(frames, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def write_wav(path, samples, sample_rate: int = 16000) -> None:
    """Write samples in ``[-1, 1]`` as 16-bit PCM mono."""
    pcm = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(pcm.tobytes())


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


@dataclass(frozen=True)
class MelBank:
    n_mels: int
    fft_size: int
    sample_rate: int
    fmin: float
    fmax: float
    weights: np.ndarray  # (n_mels, fft_size // 2 + 1)

    @property
    def centers_hz(self) -> np.ndarray:
        edges = mel_to_hz(np.linspace(hz_to_mel(self.fmin), hz_to_mel(self.fmax), self.n_mels + 2))
        return edges[1:-1]


@lru_cache(maxsize=16)
def _mel_weights(n_mels, fft_size, sample_rate, fmin, fmax):
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (centre - lower)
    falling = (upper - freqs) / (upper - centre)
    w = np.maximum(0.0, np.minimum(rising, falling))
    w.setflags(write=False)
    return w


def mel_bank(n_mels: int = 80, fft_size: int = 512, sample_rate: int = 16000,
             fmin: float = 20.0, fmax: float | None = None) -> MelBank:
    """Triangular HTK-scale filters; ``fmax`` defaults to Nyquist minus 400 Hz."""
    fmax = sample_rate / 2 - 400.0 if fmax is None else fmax
    if not 0 <= fmin < fmax <= sample_rate / 2:
        raise InputError(f"need 0 <= fmin < fmax <= Nyquist, got fmin={fmin} fmax={fmax}")
    w = _mel_weights(n_mels, fft_size, sample_rate, float(fmin), float(fmax))
    if np.any(w.sum(axis=1) <= 0):
        raise InputError(f"{n_mels} filters are too narrow for a {fft_size}-point FFT")
    return MelBank(n_mels, fft_size, sample_rate, float(fmin), float(fmax), w)


def frame_count(n_samples: int, frame_len: int, shift: int) -> int:
    return 1 + (n_samples - frame_len) // shift


def extract_logmel(w: Waveform, frame_ms: float = 25.0, shift_ms: float = 10.0, n_mels: int = 80) -> np.ndarray:
    """``n_mels x T`` log-Mel energies: Hamming frame, power spectrum, Mel filters, log."""
    frame_len = int(round(w.sample_rate * frame_ms / 1000.0))
    shift = int(round(w.sample_rate * shift_ms / 1000.0))
    if w.samples.size < frame_len:
        raise InputError(f"waveform has {w.samples.size} samples, need at least one frame of {frame_len}")
    t = frame_count(w.samples.size, frame_len, shift)
    idx = np.arange(frame_len)[None, :] + shift * np.arange(t)[:, None]
    frames = w.samples[idx] * np.hamming(frame_len)
    nfft = next_pow2(frame_len)
    power = np.abs(np.fft.rfft(frames, n=nfft, axis=1)) ** 2
    bank = mel_bank(n_mels, nfft, w.sample_rate)
    energies = power @ bank.weights.T
    return np.log(np.maximum(energies, LOG_FLOOR)).T.copy()


def sliding_cmvn(f, window_s: float = 3.0, shift_ms: float = 10.0) -> np.ndarray:
    """Normalise each frame by the mean/std of a centred window, truncated at the edges."""
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 2 or f.size == 0:
        raise InputError(f"sliding_cmvn expects a non-empty channels x frames matrix, got {f.shape}")
    window = max(1, int(round(window_s * 1000.0 / shift_ms)))
    mean, std = kernels.sliding_mean_std(f, window)
    return (f - mean) / (std + CMVN_EPS)


def load_audio_features(path, cmvn: bool = False) -> np.ndarray:
    feats = extract_logmel(read_wav(Path(path)))
    return sliding_cmvn(feats) if cmvn else feats

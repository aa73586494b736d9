"""
Waveform front-end: framing, MFCC extraction, SNR-controlled noise mixing and
time-shift augmentation. All functions are pure given their inputs and an
explicit numpy Generator.
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dct
from scipy.signal import get_window

from utils.errors import DataError, DegenerateInputError

logger = logging.getLogger("audio_frontend")

SAMPLE_RATE = 16000
CLIP_SECONDS = 1.0
WINDOW_MS = 30.0
HOP_MS = 10.0
N_FFT = 512
N_MELS = 64
N_MFCC = 40
F_MIN = 20.0
F_MAX = 8000.0
LOG_FLOOR = 1e-6


@dataclass
class Clip:
    """Mono waveform in [-1, 1] with its sample rate and an optional label."""
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    label: Optional[Union[int, str]] = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DataError(f"clip must be mono, got samples of shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("clip contains non-finite samples")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass
class FeatureMap:
    """MFCC matrix of shape [F x T]."""
    values: np.ndarray
    frame_ms: float = WINDOW_MS
    hop_ms: float = HOP_MS
    n_mels: int = N_MELS

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape


def ms_to_samples(ms: float, sample_rate: int = SAMPLE_RATE) -> int:
    return int(round(sample_rate * ms / 1000.0))


def frame_count(n_samples: int, window: int, hop: int) -> int:
    return 1 + (n_samples - window) // hop


def fit_to_length(samples: np.ndarray, length: int) -> np.ndarray:
    """Zero-pad at the tail or center-crop to exactly `length` samples."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape[0] < length:
        return np.pad(samples, (0, length - samples.shape[0]))
    start = (samples.shape[0] - length) // 2
    return samples[start:start + length]


@lru_cache(maxsize=8)
def hann_window(length: int) -> np.ndarray:
    window = get_window("hann", length, fftbins=True)
    window.setflags(write=False)
    return window


def frame_signal(clip: Clip, window_ms: float = WINDOW_MS, hop_ms: float = HOP_MS) -> np.ndarray:
    """
    Slice a clip into Hann-windowed frames.

    Args:
        clip: Input waveform
        window_ms: Frame length in milliseconds
        hop_ms: Frame advance in milliseconds

    Returns:
        [T x window] array with T = 1 + floor((N - window) / hop)
    """
    window = ms_to_samples(window_ms, clip.sample_rate)
    hop = ms_to_samples(hop_ms, clip.sample_rate)
    if len(clip) < window:
        raise DataError(f"clip of {len(clip)} samples is shorter than the {window}-sample window")
    frames = sliding_window_view(clip.samples, window)[::hop]
    return frames * hann_window(window)


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT, sample_rate: int = SAMPLE_RATE,
                   f_min: float = F_MIN, f_max: float = F_MAX) -> np.ndarray:
    """
    Triangular filters with unit peaks, evaluated at the FFT bin frequencies.

    Neighbouring triangles share edges, so the weights of any bin sum to at
    most one.

    Returns:
        [n_mels x (n_fft // 2 + 1)] read-only array
    """
    bin_freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_freqs[None, :] - lower) / (center - lower)
    falling = (upper - bin_freqs[None, :]) / (upper - center)
    bank = np.maximum(0.0, np.minimum(rising, falling))
    bank.setflags(write=False)
    return bank


def mel_center_frequencies(n_mels: int = N_MELS, f_min: float = F_MIN, f_max: float = F_MAX) -> np.ndarray:
    return mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))[1:-1]


def power_spectrum(frames: np.ndarray, n_fft: int = N_FFT) -> np.ndarray:
    return np.abs(np.fft.rfft(frames, n=n_fft, axis=-1)) ** 2 / n_fft


def mel_energies(clip: Clip) -> np.ndarray:
    """Mel filterbank energies, [n_mels x T]."""
    spectrum = power_spectrum(frame_signal(clip))
    return mel_filterbank(sample_rate=clip.sample_rate) @ spectrum.T


def mfcc(clip: Clip) -> FeatureMap:
    """
    40 MFCCs per 30 ms frame (10 ms hop): power spectrum, 64 mel filters,
    log with a 1e-6 floor, orthonormal DCT-II.
    """
    if clip.sample_rate != SAMPLE_RATE:
        raise DataError(f"mfcc expects {SAMPLE_RATE} Hz audio, got {clip.sample_rate} Hz")
    log_mel = np.log(mel_energies(clip) + LOG_FLOOR)
    cepstra = dct(log_mel, type=2, axis=0, norm="ortho")[:N_MFCC]
    return FeatureMap(values=cepstra)


def rms_power(x: np.ndarray) -> float:
    """Mean of squares over the full array."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise DataError("rms_power of an empty array")
    return float(np.mean(x * x))


def crop_or_tile(noise: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    """Take `length` samples of `noise` from a random offset, tiling short recordings."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.size == 0:
        raise DataError("cannot crop an empty noise recording")
    if noise.shape[0] >= length:
        offset = int(rng.integers(0, noise.shape[0] - length + 1))
        return noise[offset:offset + length]
    offset = int(rng.integers(0, noise.shape[0]))
    repeats = -(-(length + offset) // noise.shape[0])
    return np.tile(noise, repeats)[offset:offset + length]


def snr_gain(signal: np.ndarray, noise: np.ndarray, snr_db: float) -> float:
    """Noise gain g with 10*log10(P_signal / P_{g*noise}) == snr_db."""
    p_signal = rms_power(signal)
    p_noise = rms_power(noise)
    if p_signal <= 0.0 or p_noise <= 0.0:
        raise DegenerateInputError(f"zero-power input (signal {p_signal:.3g}, noise {p_noise:.3g})")
    return float(np.sqrt(p_signal / (p_noise * np.power(10.0, snr_db / 10.0))))


def mix_components(signal: Clip, noise: Clip, snr_db: float,
                   rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Return the (signal, scaled noise) pair before summation and clipping."""
    segment = crop_or_tile(noise.samples, len(signal), rng)
    gain = snr_gain(signal.samples, segment, snr_db)
    return signal.samples, gain * segment


def mix_at_snr(signal: Clip, noise: Clip, snr_db: float, rng: np.random.Generator) -> Clip:
    """
    Add noise at the requested SNR and hard-clip the sum to [-1, 1].

    Raises:
        DegenerateInputError: if the signal or the noise crop has zero power
    """
    clean, scaled_noise = mix_components(signal, noise, snr_db, rng)
    mixed = np.clip(clean + scaled_noise, -1.0, 1.0)
    return Clip(mixed, signal.sample_rate, signal.label)


def shift_samples(samples: np.ndarray, shift: int) -> np.ndarray:
    """Shift right (positive) or left (negative), zero-filling the vacated samples."""
    out = np.zeros_like(samples)
    n = samples.shape[0]
    if shift >= n or -shift >= n:
        return out
    if shift > 0:
        out[shift:] = samples[:n - shift]
    elif shift < 0:
        out[:n + shift] = samples[-shift:]
    else:
        out[:] = samples
    return out


def time_shift(clip: Clip, max_shift_ms: float, rng: np.random.Generator) -> Clip:
    """Shift by a uniform random offset in [-max_shift_ms, +max_shift_ms]."""
    if max_shift_ms < 0:
        raise DataError(f"max_shift_ms must be non-negative, got {max_shift_ms}")
    max_shift = ms_to_samples(max_shift_ms, clip.sample_rate)
    shift = int(rng.integers(-max_shift, max_shift + 1)) if max_shift > 0 else 0
    return Clip(shift_samples(clip.samples, shift), clip.sample_rate, clip.label)

"""
RIFF/WAVE reading and writing.
"""
import logging
from math import gcd
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from utils.audio_frontend import SAMPLE_RATE, Clip
from utils.errors import DataError

logger = logging.getLogger("wav_io")


def _to_float(data: np.ndarray) -> np.ndarray:
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype == np.int32:
        return data.astype(np.float64) / 2147483648.0
    if data.dtype == np.uint8:
        return (data.astype(np.float64) - 128.0) / 128.0
    if np.issubdtype(data.dtype, np.floating):
        return data.astype(np.float64)
    raise DataError(f"unsupported sample format {data.dtype}")


def read_wav(path: Union[str, Path], label=None, downmix: bool = False,
             resample: bool = False) -> Clip:
    """
    Load a wave file as a Clip.

    Keyword clips must be 16 kHz PCM16 mono. Noise recordings may ask for
    stereo downmixing and polyphase resampling to 16 kHz.

    Args:
        path: Wave file
        label: Label stored on the clip
        downmix: Average the channels of multi-channel files
        resample: Resample other rates to 16 kHz

    Returns:
        Clip with samples in [-1, 1]
    """
    try:
        rate, data = wavfile.read(str(path))
    except (OSError, ValueError) as e:
        raise DataError(f"Error reading wave file {path}: {e}")

    samples = _to_float(data)
    if samples.ndim == 2:
        if not downmix:
            raise DataError(f"{path} has {samples.shape[1]} channels; mono audio expected")
        samples = samples.mean(axis=1)

    if rate != SAMPLE_RATE:
        if not resample:
            raise DataError(f"{path} is sampled at {rate} Hz; {SAMPLE_RATE} Hz expected")
        factor = gcd(rate, SAMPLE_RATE)
        samples = resample_poly(samples, SAMPLE_RATE // factor, rate // factor)
        logger.debug(f"Resampled {path} from {rate} Hz")

    return Clip(np.clip(samples, -1.0, 1.0), SAMPLE_RATE, label)


def write_wav(path: Union[str, Path], clip: Clip):
    """Write a Clip as 16-bit PCM."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    pcm = np.round(np.clip(clip.samples, -1.0, 1.0) * 32767.0).astype("<i2")
    wavfile.write(str(path), clip.sample_rate, pcm)

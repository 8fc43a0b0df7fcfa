"""Mono WAV input/output with strict format checks.

Only the two encodings the toolkit writes are accepted back: 16-bit PCM
(scaled to [-1, 1) floats on read) and 32-bit IEEE float (passed through).
Everything else — 8-bit, 24/32-bit integer, 64-bit float, multichannel,
malformed headers — is rejected with a :class:`WavFormatError` naming the
problem rather than silently coerced.
"""

from __future__ import annotations

import numpy as np
from scipy.io import wavfile

_PCM16_SCALE = 32768.0

__all__ = ["WavFormatError", "read_wav", "write_wav"]


class WavFormatError(ValueError):
    """Raised for WAV files the toolkit does not understand."""


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a mono WAV file as (float64 signal, sample_rate)."""
    try:
        rate, data = wavfile.read(path)
    except WavFormatError:
        raise
    except Exception as exc:
        raise WavFormatError(f"{path}: could not parse WAV header ({exc})") from exc
    if data.ndim != 1:
        raise WavFormatError(
            f"{path}: expected mono audio, got {data.shape[1]} channels"
        )
    if data.size == 0:
        raise WavFormatError(f"{path}: no samples")
    if data.dtype == np.int16:
        signal = data / _PCM16_SCALE
    elif data.dtype == np.float32:
        signal = data.astype(np.float64)
    elif data.dtype == np.uint8:
        raise WavFormatError(f"{path}: 8-bit PCM is not supported")
    elif data.dtype == np.int32:
        raise WavFormatError(f"{path}: 24/32-bit integer PCM is not supported")
    elif data.dtype == np.float64:
        raise WavFormatError(f"{path}: 64-bit float WAV is not supported")
    else:
        raise WavFormatError(f"{path}: unsupported sample format {data.dtype}")
    if not np.all(np.isfinite(signal)):
        raise WavFormatError(f"{path}: non-finite samples")
    return signal, int(rate)


def write_wav(path, signal, sample_rate: int, encoding: str = "pcm16") -> None:
    """Write a mono signal as 16-bit PCM (default) or 32-bit float.

    PCM quantization rounds at a scale of 32768 and clips to the int16
    range, so any sample in [-1, 1] comes back within 2**-15 of its value.
    Float32 writes are bit-exact for float32-representable signals.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1 or signal.size == 0:
        raise ValueError("signal must be a nonempty 1-D array")
    if not np.all(np.isfinite(signal)):
        raise ValueError("signal must be finite")
    if sample_rate < 1:
        raise ValueError("sample_rate must be >= 1")
    if encoding == "pcm16":
        q = np.clip(np.round(signal * _PCM16_SCALE), -32768, 32767)
        wavfile.write(path, int(sample_rate), q.astype(np.int16))
    elif encoding == "float32":
        wavfile.write(path, int(sample_rate), signal.astype(np.float32))
    else:
        raise ValueError(f"unknown encoding {encoding!r} (use 'pcm16' or 'float32')")

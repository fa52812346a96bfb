"""Log-mel front-end: framing, Hann window, power spectrum, mel filterbank.

Defaults follow common speech practice: 16 kHz input, 25 ms windows, 10 ms
hop, 512-point FFT, 128 mel bands between 20 Hz and 7.6 kHz.
"""

from __future__ import annotations

import hashlib
import json
import wave
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError, FormatError

LOG_FLOOR = 1e-10
LOGMEL_LAYER = -1


@dataclass(frozen=True)
class FrontendConfig:
    sample_rate_hz: int = 16000
    window_ms: float = 25.0
    hop_ms: float = 10.0
    nfft: int = 512
    num_mels: int = 128
    fmin: float = 20.0
    fmax: float = 7600.0
    log_floor: float = LOG_FLOOR

    @property
    def window(self):
        return int(round(self.sample_rate_hz * self.window_ms / 1000))

    @property
    def hop(self):
        return int(round(self.sample_rate_hz * self.hop_ms / 1000))

    def digest(self):
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DataError("waveform must be single-channel")
        if self.sample_rate_hz <= 0:
            raise DataError("sample rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("waveform contains non-finite samples")
        if self.samples.size and np.abs(self.samples).max() > 1.0:
            raise DataError("waveform samples must lie in [-1, 1]")

    @property
    def duration_s(self):
        return self.samples.size / self.sample_rate_hz


@dataclass
class MelSpec:
    frames: np.ndarray  # [T, num_mels], natural-log mel power
    frame_rate_hz: float
    config_hash: str


def num_frames(num_samples, window, hop):
    return (num_samples - window) // hop + 1


def frame_signal(samples, window=400, hop=160):
    """Overlapping frames; frame i starts at sample i*hop, the partial tail is dropped."""
    x = np.asarray(samples.samples if isinstance(samples, Waveform) else samples, dtype=np.float64)
    if x.size < window:
        raise DataError(f"signal shorter than one window ({x.size} < {window} samples)")
    view = np.lib.stride_tricks.sliding_window_view(x, window)
    return view[::hop]


def hann_window(n):
    """Periodic Hann: w[k] = 0.5 - 0.5 cos(2 pi k / n)."""
    if n < 2:
        raise ConfigurationError("Hann window needs n >= 2")
    k = np.arange(n)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * k / n)


def power_spectrum(frame, nfft=512, window=None):
    """|rFFT|^2 of the (optionally windowed) frame, zero-padded to ``nfft``.

    Accepts a single frame or a stack [..., n].
    """
    x = np.asarray(frame, dtype=np.float64)
    if x.shape[-1] > nfft:
        raise ConfigurationError(f"frame length {x.shape[-1]} exceeds nfft {nfft}")
    if window is not None:
        x = x * window
    spec = np.fft.rfft(x, n=nfft, axis=-1)
    return spec.real**2 + spec.imag**2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(num_mels=128, fmin=20.0, fmax=7600.0):
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), num_mels + 2))[1:-1]


def mel_filterbank(num_mels=128, nfft=512, sr=16000, fmin=20.0, fmax=7600.0):
    """Triangular mel filters, each integrated over the width of every FFT bin.

    Integrating (rather than point-sampling at bin centres) keeps narrow
    low-frequency filters from vanishing between bins.  Returns
    [num_mels, nfft // 2 + 1].
    """
    if not 0 <= fmin < fmax <= sr / 2:
        raise ConfigurationError(f"need 0 <= fmin < fmax <= sr/2, got fmin={fmin} fmax={fmax} sr={sr}")
    nbins = nfft // 2 + 1
    df = sr / nfft
    bins_in_band = int(np.floor(fmax / df) - np.ceil(fmin / df)) + 1
    if num_mels > bins_in_band:
        raise ConfigurationError(
            f"num_mels={num_mels} exceeds the {bins_in_band} FFT bins between {fmin} and {fmax} Hz (nfft={nfft})"
        )
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), num_mels + 2))
    left, centre, right = edges[:-2, None], edges[1:-1, None], edges[2:, None]

    # exact integral of a unit-peak triangle over [lo, hi] via its antiderivative
    def tri_cdf(f):
        rise = np.clip(f, left, centre) - left
        fall = np.clip(f, centre, right) - centre
        up = rise**2 / (2 * (centre - left))
        down = fall - fall**2 / (2 * (right - centre))
        return up + down

    freqs = np.arange(nbins) * df
    lo = np.maximum(freqs - df / 2, 0.0)[None, :]
    hi = np.minimum(freqs + df / 2, sr / 2)[None, :]
    fb = (tri_cdf(hi) - tri_cdf(lo)) / df
    if np.any(fb.sum(axis=1) <= 0):
        raise ConfigurationError("mel filterbank has an all-zero filter; reduce num_mels or raise nfft")
    return fb


_FB_CACHE = {}


def _filterbank_for(cfg):
    key = (cfg.num_mels, cfg.nfft, cfg.sample_rate_hz, cfg.fmin, cfg.fmax)
    if key not in _FB_CACHE:
        _FB_CACHE[key] = mel_filterbank(*key)
    return _FB_CACHE[key]


def log_mel(w, config=None):
    """Log-mel features of a 16 kHz waveform at a 10 ms frame rate."""
    cfg = config or FrontendConfig()
    if not isinstance(w, Waveform):
        w = Waveform(np.asarray(w), cfg.sample_rate_hz)
    if w.sample_rate_hz != cfg.sample_rate_hz:
        raise ConfigurationError(
            f"expected {cfg.sample_rate_hz} Hz audio, got {w.sample_rate_hz} Hz (resampling is not supported)"
        )
    frames = frame_signal(w.samples, cfg.window, cfg.hop)
    power = power_spectrum(frames, cfg.nfft, hann_window(cfg.window))
    mel = power @ _filterbank_for(cfg).T
    feats = np.log(np.maximum(mel, cfg.log_floor))
    return MelSpec(feats, cfg.sample_rate_hz / cfg.hop, cfg.digest())


# WAV I/O (16-bit PCM, mono)


def write_wav(path, w):
    samples = w.samples if isinstance(w, Waveform) else np.asarray(w)
    rate = w.sample_rate_hz if isinstance(w, Waveform) else 16000
    pcm = np.clip(np.round(samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(pcm.tobytes())


def read_wav(path):
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as fh:
            if fh.getnchannels() != 1:
                raise FormatError(f"{path}: expected mono audio, got {fh.getnchannels()} channels")
            if fh.getsampwidth() != 2:
                raise FormatError(f"{path}: expected 16-bit PCM, got {8 * fh.getsampwidth()}-bit")
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"{path}: not a readable PCM WAV file ({exc})") from exc
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    return Waveform(pcm / 32768.0, rate)

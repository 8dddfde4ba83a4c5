"""Reconstruction and adversarial loss formulas.

The mel machinery is self-contained: Hann-windowed magnitude STFT with
reflect-padded centering, an HTK-scale triangular filterbank, and a
log10 floor. Filter weights are the mean of the triangular response
over each FFT bin's frequency interval rather than a point sample, so
filters narrower than the bin spacing never vanish and every bin below
Nyquist stays covered.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.signal import get_window

from .errors import ConfigError, DataFormatError

LOG_FLOOR = 1e-5


@dataclass(frozen=True)
class MelScaleConfig:
    """Multi-scale mel parameters: window 2^i, hop 2^i/4, 5*i mel bins."""

    sample_rate_hz: float
    scale_exponents: tuple[int, ...] = (5, 6, 7, 8, 9, 10, 11)

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ConfigError("sample rate must be positive")
        if any(i < 2 for i in self.scale_exponents):
            raise ConfigError("scale exponent must be >= 2 so the hop divides the window")

    def window(self, i: int) -> int:
        return 2**i

    def hop(self, i: int) -> int:
        return 2**i // 4

    def mel_bins(self, i: int) -> int:
        return 5 * i


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def _triangle_integral(x, left, center, right):
    """Antiderivative of the unit triangle (left, center, right) at x."""
    tiny = np.finfo(np.float64).tiny
    x = np.clip(x, left, right)
    rise = np.clip(x, left, center)
    fall = np.clip(x, center, right)
    area = (rise - left) ** 2 / (2.0 * max(center - left, tiny))
    area += ((right - center) ** 2 - (right - fall) ** 2) / (2.0 * max(right - center, tiny))
    return area


def mel_filterbank(n_mels: int, n_fft_bins: int, sample_rate_hz: float) -> np.ndarray:
    """Triangular filters linearly spaced in HTK mel between 0 and Nyquist."""
    if n_mels < 1 or n_fft_bins < 2:
        raise ConfigError("need at least one mel bin and two FFT bins")
    nyquist = sample_rate_hz / 2.0
    edges_hz = mel_to_hz(np.linspace(0.0, float(hz_to_mel(nyquist)), n_mels + 2))
    delta_f = nyquist / (n_fft_bins - 1)
    centers = np.arange(n_fft_bins) * delta_f
    lo = np.maximum(centers - delta_f / 2.0, 0.0)
    hi = np.minimum(centers + delta_f / 2.0, nyquist)
    fb = np.empty((n_mels, n_fft_bins))
    for m in range(n_mels):
        left, center, right = edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]
        fb[m] = (
            _triangle_integral(hi, left, center, right)
            - _triangle_integral(lo, left, center, right)
        ) / delta_f
    return fb


def _stft_magnitude(x: np.ndarray, window: int, hop: int) -> np.ndarray:
    pad = window // 2
    padded = np.pad(x, pad, mode="reflect")
    n_frames = 1 + (len(padded) - window) // hop
    idx = np.arange(window)[None, :] + hop * np.arange(n_frames)[:, None]
    win = get_window("hann", window, fftbins=True)
    return np.abs(np.fft.rfft(padded[idx] * win, axis=1)).T  # (bins, frames)


def mel_spectrogram(x: np.ndarray, i: int, cfg: MelScaleConfig) -> np.ndarray:
    """log10 mel spectrogram at scale exponent ``i`` (mel bins x frames)."""
    x = np.asarray(x, dtype=np.float64)
    window = cfg.window(i)
    if x.ndim != 1 or len(x) < window:
        raise ValueError(f"signal shorter than one window ({window} samples)")
    mag = _stft_magnitude(x, window, cfg.hop(i))
    fb = mel_filterbank(cfg.mel_bins(i), mag.shape[0], cfg.sample_rate_hz)
    return np.log10(np.maximum(fb @ mag, LOG_FLOOR))


def multiscale_mel_loss(x: np.ndarray, x_hat: np.ndarray, cfg: MelScaleConfig) -> float:
    """Sum over scales of the mean absolute log-mel difference."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError("signals must have equal length")
    total = 0.0
    for i in cfg.scale_exponents:
        total += float(np.mean(np.abs(mel_spectrogram(x, i, cfg) - mel_spectrogram(x_hat, i, cfg))))
    return total


def _flat(scores) -> np.ndarray:
    parts = [np.asarray(s, dtype=np.float64).ravel() for s in scores]
    if not parts or sum(p.size for p in parts) == 0:
        raise ValueError("empty score list")
    return np.concatenate(parts)


def lsgan_losses(real_scores, fake_scores) -> tuple[float, float]:
    """Least-squares adversarial losses over all sub-discriminator scores."""
    real = _flat(real_scores)
    fake = _flat(fake_scores)
    d_loss = float(np.mean((real - 1.0) ** 2) + np.mean(fake**2))
    g_loss = float(np.mean((fake - 1.0) ** 2))
    return d_loss, g_loss


def feature_matching_loss(real_feats, fake_feats) -> float:
    """Mean absolute difference, averaged over (discriminator, layer) pairs."""
    if len(real_feats) != len(fake_feats):
        raise ValueError("discriminator count mismatch")
    per_pair = []
    for d, (r_layers, f_layers) in enumerate(zip(real_feats, fake_feats)):
        if len(r_layers) != len(f_layers):
            raise ValueError(f"layer count mismatch in discriminator {d}")
        for r, f in zip(r_layers, f_layers):
            r = np.asarray(r, dtype=np.float64)
            f = np.asarray(f, dtype=np.float64)
            if r.shape != f.shape:
                raise ValueError(f"feature shape mismatch in discriminator {d}")
            per_pair.append(float(np.mean(np.abs(r - f))))
    if not per_pair:
        raise ValueError("no feature pairs")
    return float(np.mean(per_pair))


@dataclass(frozen=True)
class LossWeights:
    """Balancing weights of the total training objective."""

    lambda_f: float = 15.0
    lambda_gan: float = 1.0
    lambda_fm: float = 2.0
    lambda_c: float = 1.0
    lambda_w: float = 0.25
    lambda_ams: float = 25.0
    lambda_sem: float = 45.0


TOTAL_LOSS_TERMS = ("f", "gan", "fm", "c", "w", "ams", "sem")


def total_loss(components: Mapping[str, float], weights: LossWeights = LossWeights()) -> float:
    """Weighted sum of the seven balanced loss terms."""
    missing = set(TOTAL_LOSS_TERMS) - set(components)
    if missing:
        raise ValueError(f"missing loss components: {sorted(missing)}")
    total = 0.0
    for name in TOTAL_LOSS_TERMS:
        value = float(components[name])
        if not np.isfinite(value):
            raise ValueError(f"non-finite loss component {name!r}")
        total += getattr(weights, f"lambda_{name}") * value
    return total


def read_wav_mono16(path) -> tuple[int, np.ndarray]:
    """Read a mono 16-bit PCM RIFF WAV into float64 samples in [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as fh:
            if fh.getnchannels() != 1:
                raise DataFormatError(f"{path}: expected mono audio")
            if fh.getsampwidth() != 2:
                raise DataFormatError(f"{path}: expected 16-bit PCM samples")
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise DataFormatError(f"{path}: not a PCM WAV file ({exc})")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return rate, samples

"""Turn raw modality signals into fixed-size (1000, 128) feature matrices."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InputError, ParameterError

TARGET_STEPS = 1000
TARGET_FEATURES = 128
FLOOR_DB = -80.0
AMIN = 1e-10

GRID_ROWS = 16
GRID_COLS = 8

RADAR_NFFT = 256
RADAR_BINS = 128


@dataclass(frozen=True)
class SpectrogramConfig:
    n_fft: int = 2048
    hop: int = 512
    n_mels: int = 128
    sample_rate: float = 44100.0
    floor_db: float = FLOOR_DB
    window: str = "hann"

    def __post_init__(self):
        if not 0 < self.hop <= self.n_fft:
            raise ParameterError(f"hop must satisfy 0 < hop <= n_fft, got hop={self.hop} n_fft={self.n_fft}")
        if self.n_mels > self.n_fft // 2 + 1:
            raise ParameterError(f"n_mels={self.n_mels} exceeds n_fft/2+1={self.n_fft // 2 + 1}")
        if self.floor_db >= 0:
            raise ParameterError("floor_db must be negative")
        if self.window not in ("hann", "rect"):
            raise ParameterError(f"unknown window {self.window!r}")


def audio_config(n_samples: int, sample_rate: float, n_fft: int = 2048, n_mels: int = 128) -> SpectrogramConfig:
    """STFT settings for a mono clip: hop chosen so the clip spans about 1000 frames."""
    hop = min(n_fft, max(1, n_samples // TARGET_STEPS))
    return SpectrogramConfig(n_fft=n_fft, hop=hop, n_mels=n_mels, sample_rate=sample_rate)


def radar_config(n_samples: int) -> SpectrogramConfig:
    hop = min(RADAR_NFFT, max(1, n_samples // TARGET_STEPS))
    return SpectrogramConfig(n_fft=RADAR_NFFT, hop=hop, n_mels=RADAR_BINS, sample_rate=1.0)


@lru_cache(maxsize=16)
def _window(kind: str, n: int) -> np.ndarray:
    if kind == "rect":
        return np.ones(n)
    # periodic Hann, the usual choice for spectral analysis
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_signal(signal: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1:
        raise InputError(f"expected a 1-D signal, got shape {signal.shape}")
    if signal.size < n_fft:
        raise InputError(f"signal of length {signal.size} is shorter than n_fft={n_fft}")
    n_frames = 1 + (signal.size - n_fft) // hop
    return np.lib.stride_tricks.sliding_window_view(signal, n_fft)[::hop][:n_frames]


def stft_magnitude(signal, cfg: SpectrogramConfig) -> np.ndarray:
    """|DFT| of windowed frames, shape (frames, n_fft // 2 + 1)."""
    frames = frame_signal(signal, cfg.n_fft, cfg.hop)
    return np.abs(np.fft.rfft(frames * _window(cfg.window, cfg.n_fft), axis=-1))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=16)
def mel_filterbank(n_mels: int, n_fft: int, sample_rate: float) -> np.ndarray:
    """Triangular HTK-scale filters, shape (n_mels, n_fft // 2 + 1).

    Band edges are equally spaced in Mel between 0 Hz and Nyquist; each
    filter peaks at 1 on its center frequency and is evaluated at the exact
    FFT bin frequencies.
    """
    bin_hz = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_hz - lo) / (mid - lo)
    falling = (hi - bin_hz) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


def mel_spectrogram(signal, cfg: SpectrogramConfig) -> np.ndarray:
    """Mel-band power, shape (frames, n_mels)."""
    power = stft_magnitude(signal, cfg) ** 2
    return power @ mel_filterbank(cfg.n_mels, cfg.n_fft, float(cfg.sample_rate)).T


def to_decibel(spec, floor_db: float = FLOOR_DB) -> np.ndarray:
    """10*log10 relative to the matrix peak, clamped below at ``floor_db``."""
    spec = np.asarray(spec, dtype=np.float64)
    if spec.size and spec.min() < 0:
        raise InputError("decibel conversion needs a non-negative spectrum")
    peak = spec.max() if spec.size else 0.0
    if peak <= AMIN:
        return np.full(spec.shape, floor_db)
    db = 10.0 * np.log10(np.maximum(spec, AMIN) / peak)
    return np.clip(db, floor_db, 0.0)


def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) matrix averaging exact fractional pixel overlaps."""
    step = n_in / n_out
    lo = np.arange(n_out)[:, None] * step
    hi = lo + step
    px = np.arange(n_in)[None, :]
    overlap = np.clip(np.minimum(hi, px + 1) - np.maximum(lo, px), 0.0, None)
    return overlap / step


def video_frame_features(frame) -> np.ndarray:
    """Grayscale 16x8 area-averaged thumbnail flattened to 128 values in [0, 1]."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.size == 0:
        raise InputError("empty video frame")
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise InputError(f"expected an HxWx3 frame, got shape {frame.shape}")
    h, w = frame.shape[:2]
    if h < 8 or w < 8:
        raise InputError(f"frame {h}x{w} is smaller than 8x8")
    gray = frame @ np.array([0.299, 0.587, 0.114])
    thumb = _area_weights(h, GRID_ROWS) @ gray @ _area_weights(w, GRID_COLS).T
    return np.clip(thumb, 0.0, 1.0).reshape(-1)


def video_features(frames) -> np.ndarray:
    """Per-frame descriptors for a (frames, H, W, 3) stack -> (frames, 128)."""
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[0] == 0:
        raise InputError(f"expected a non-empty (frames, H, W, 3) stack, got shape {frames.shape}")
    h, w = frames.shape[1:3]
    if h < 8 or w < 8:
        raise InputError(f"frame {h}x{w} is smaller than 8x8")
    gray = frames.astype(np.float64) @ np.array([0.299, 0.587, 0.114])
    thumbs = _area_weights(h, GRID_ROWS) @ gray @ _area_weights(w, GRID_COLS).T
    return np.clip(thumbs, 0.0, 1.0).reshape(frames.shape[0], -1)


def radar_magnitude_series(block) -> np.ndarray:
    block = np.asarray(block)
    if block.size == 0:
        raise InputError("empty radar block")
    return np.abs(block).reshape(-1).astype(np.float64)


def radar_features(block, cfg: SpectrogramConfig | None = None) -> np.ndarray:
    """Magnitude series -> STFT (first 128 bins) -> peak-referenced dB."""
    series = radar_magnitude_series(block)
    if cfg is None:
        cfg = radar_config(series.size)
    if series.size < cfg.n_fft:
        series = np.pad(series, (0, cfg.n_fft - series.size))
    spec = stft_magnitude(series, cfg)[:, :RADAR_BINS]
    return to_decibel(spec, cfg.floor_db)


def audio_features(samples, sample_rate: float, cfg: SpectrogramConfig | None = None) -> np.ndarray:
    """Downmix to mono, Mel power spectrogram, then dB. Returns (frames, n_mels)."""
    samples = np.asarray(samples, dtype=np.float64)
    mono = samples.mean(axis=1) if samples.ndim == 2 else samples
    if cfg is None:
        cfg = audio_config(mono.size, sample_rate)
    return to_decibel(mel_spectrogram(mono, cfg), cfg.floor_db)


def standardize_sequence(seq, steps: int = TARGET_STEPS, features: int = TARGET_FEATURES) -> np.ndarray:
    """Truncate or zero-pad both axes to exactly (steps, features), float32."""
    seq = np.asarray(seq)
    if seq.ndim != 2:
        raise InputError(f"expected a 2-D (time, feature) matrix, got shape {seq.shape}")
    out = np.zeros((steps, features), dtype=np.float32)
    t = min(steps, seq.shape[0])
    f = min(features, seq.shape[1])
    out[:t, :f] = seq[:t, :f]
    return out

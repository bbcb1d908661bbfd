"""Deterministic class-conditioned stand-ins for the audio, video and radar datasets.

Every class is separable by construction in every modality:

* audio: a class-specific tone/chirp mixture over low-level noise
* video: a blob whose trajectory depends on the class (IR: bright blob on a
  dark scene, RGB: dark silhouette on a brighter sky)
* radar: complex returns whose magnitude carries a class-specific
  micro-modulation frequency
"""
from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

from .. import CLASS_NAMES, MODALITIES
from ..errors import ArtifactIOError, ParameterError
from ..rng import numpy_rng, stage_seed
from ..tensorkit import container
from .io import CONTAINER_SUFFIX, MANIFEST_NAME, RawRecord, write_manifest, write_wav

AUDIO_RATE = 16000
AUDIO_SECONDS = 2.0
VIDEO_FRAMES = 322  # 30 FPS source; halved to 161 by frame_rate_reduce
VIDEO_SIZE = 16
RADAR_SHAPE = (100, 16, 32)

# (tone frequencies in Hz, chirp span in Hz or None, noise amplitude)
_AUDIO_PROFILE = {
    "airplane": ((180.0, 360.0, 540.0), None, 0.01),
    "background": ((), None, 0.05),
    "bird": ((), (3000.0, 5200.0), 0.01),
    "drone": ((1400.0, 2800.0), None, 0.01),
    "helicopter": ((650.0, 1300.0), None, 0.01),
}

# micro-modulation frequency in cycles per sample; background has none
_RADAR_MOD = {"airplane": 0.04, "background": 0.0, "bird": 0.12, "drone": 0.22, "helicopter": 0.32}


def _rng(seed: int, modality: str, label: str, i: int) -> np.random.Generator:
    return numpy_rng(stage_seed(seed, f"synth/{modality}/{label}/{i}"))


def synth_audio(label: str, rng: np.random.Generator) -> np.ndarray:
    n = int(AUDIO_RATE * AUDIO_SECONDS)
    t = np.arange(n) / AUDIO_RATE
    tones, chirp, noise = _AUDIO_PROFILE[label]
    jitter = 1.0 + rng.uniform(-0.03, 0.03)
    sig = np.zeros(n)
    for k, f in enumerate(tones):
        sig += 0.3 / (k + 1) * np.sin(2 * np.pi * f * jitter * t + rng.uniform(0, 2 * np.pi))
    if chirp is not None:
        f0, f1 = chirp
        period = rng.uniform(0.15, 0.25)
        phase_t = np.mod(t, period) / period
        inst = f0 + (f1 - f0) * phase_t
        sig += 0.3 * np.sin(2 * np.pi * np.cumsum(inst * jitter) / AUDIO_RATE)
    if label == "background":
        # brown-ish rumble: integrated white noise, recentred
        walk = np.cumsum(rng.normal(size=n))
        walk -= np.convolve(walk, np.ones(401) / 401, mode="same")
        sig += noise * walk / (np.abs(walk).max() + 1e-12) * 8
    sig += noise * rng.normal(size=n)
    left = sig
    right = 0.9 * sig + 0.005 * rng.normal(size=n)
    stereo = np.stack([left, right], axis=1)
    return np.clip(stereo, -1.0, 1.0)


def _trajectory(label: str, n: int, rng: np.random.Generator):
    s = np.linspace(0.0, 1.0, n)
    off = rng.uniform(-0.05, 0.05, size=2)
    if label == "airplane":
        y, x = 0.2 + 0 * s, 0.1 + 0.8 * s
    elif label == "bird":
        y, x = 0.75 + 0.1 * np.sign(np.sin(12 * np.pi * s)), 0.2 + 0.6 * s
    elif label == "drone":
        y, x = 0.5 + 0.08 * np.sin(4 * np.pi * s), 0.5 + 0.08 * np.cos(4 * np.pi * s)
    elif label == "helicopter":
        y, x = 0.2 + 0.6 * s, 0.8 - 0.3 * s
    else:
        return None
    return np.clip(y + off[0], 0, 1), np.clip(x + off[1], 0, 1)


def synth_video(label: str, infrared: bool, rng: np.random.Generator) -> np.ndarray:
    n, h = VIDEO_FRAMES, VIDEO_SIZE
    yy, xx = np.mgrid[0:h, 0:h] / (h - 1)
    base = 0.1 if infrared else 0.6
    frames = np.full((n, h, h, 3), base, dtype=np.float64)
    frames += 0.02 * rng.normal(size=frames.shape)
    traj = _trajectory(label, n, rng)
    if traj is not None:
        radius = {"airplane": 0.12, "bird": 0.08, "drone": 0.1, "helicopter": 0.16}[label]
        if not infrared:
            # visible-band objects are seen as larger dark silhouettes
            radius *= 1.5
        for k in range(n):
            blob = np.exp(-((yy - traj[0][k]) ** 2 + (xx - traj[1][k]) ** 2) / (2 * radius ** 2))
            if infrared:
                frames[k] += 0.85 * blob[..., None]
            else:
                frames[k] -= 0.6 * blob[..., None] * np.array([1.0, 0.95, 0.9])
    return np.clip(frames, 0.0, 1.0).astype(np.float32)


def synth_radar(label: str, rng: np.random.Generator) -> np.ndarray:
    n = int(np.prod(RADAR_SHAPE))
    idx = np.arange(n)
    f = _RADAR_MOD[label] * (1.0 + rng.uniform(-0.02, 0.02))
    depth = 0.6 if f > 0 else 0.0
    amp = 1.0 + depth * np.cos(2 * np.pi * f * idx + rng.uniform(0, 2 * np.pi))
    amp *= np.exp(rng.normal(scale=0.05, size=n))
    phase = 2 * np.pi * 0.01 * idx + rng.normal(scale=0.1, size=n)
    return (amp * np.exp(1j * phase)).astype(np.complex64).reshape(RADAR_SHAPE)


def audio_name(label: str, i: int) -> str:
    return f"{label.upper()}_{i + 1:03d}.wav"


def video_name(modality: str, label: str, i: int) -> str:
    prefix = "IR" if modality == "video_ir" else "V"
    return f"{prefix}_{label.upper()}_{i + 1:03d}{CONTAINER_SUFFIX}"


def radar_name(label: str, i: int) -> str:
    # radar names carry no class keyword; labels come from the manifest
    return f"target{CLASS_NAMES.index(label)}_run{i:03d}{CONTAINER_SUFFIX}"


def synth_dataset(classes: Sequence[str] = CLASS_NAMES, per_class: int = 8, seed: int = 0) -> Dict[str, List[RawRecord]]:
    """Raw records for all four modalities, ``per_class`` per class, in class-major order."""
    if per_class < 1:
        raise ParameterError(f"per_class must be at least 1, got {per_class}")
    out: Dict[str, List[RawRecord]] = {m: [] for m in MODALITIES}
    for label in classes:
        for i in range(per_class):
            out["audio"].append(RawRecord("audio", label, synth_audio(label, _rng(seed, "audio", label, i)).astype(np.float32),
                                          audio_name(label, i), sample_rate=float(AUDIO_RATE)))
            for mod in ("video_ir", "video_rgb"):
                frames = synth_video(label, mod == "video_ir", _rng(seed, mod, label, i))
                out[mod].append(RawRecord(mod, label, frames, video_name(mod, label, i)))
            out["radar"].append(RawRecord("radar", label, synth_radar(label, _rng(seed, "radar", label, i)),
                                          radar_name(label, i)))
    return out


def write_dataset(records: Dict[str, List[RawRecord]], out_dir) -> Path:
    """Lay records out as ``<out>/{audio,video_ir,video_rgb,radar}/`` plus ``manifest.tsv``."""
    root = Path(out_dir)
    try:
        manifest = {}
        for mod in MODALITIES:
            d = root / mod
            d.mkdir(parents=True, exist_ok=True)
            for rec in records.get(mod, []):
                path = d / rec.source_name
                if mod == "audio":
                    write_wav(path, rec.payload, int(rec.sample_rate or AUDIO_RATE))
                else:
                    container.write(path, rec.payload)
                if mod == "radar":
                    manifest[rec.source_name] = rec.label
        write_manifest(root / MANIFEST_NAME, manifest)
    except OSError as e:
        raise ArtifactIOError(f"cannot write dataset to {root}: {e}") from e
    return root

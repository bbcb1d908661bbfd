"""Loading raw modality files and resolving their class labels."""
from __future__ import annotations

import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .. import CLASS_NAMES, MODALITIES
from ..errors import ArtifactIOError, FormatError, InputError, LabelingError, PipelineError
from ..tensorkit import container

MANIFEST_NAME = "manifest.tsv"
CONTAINER_SUFFIX = ".skyf"


@dataclass
class RawRecord:
    modality: str
    label: str
    payload: np.ndarray
    source_name: str
    sample_rate: Optional[float] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.label not in CLASS_NAMES:
            raise LabelingError(f"{self.source_name}: unknown label {self.label!r}")
        if self.modality not in MODALITIES:
            raise InputError(f"{self.source_name}: unknown modality {self.modality!r}")
        kind_ok = {
            "audio": self.payload.ndim in (1, 2) and not np.iscomplexobj(self.payload),
            "video_ir": self.payload.ndim == 4 and not np.iscomplexobj(self.payload),
            "video_rgb": self.payload.ndim == 4 and not np.iscomplexobj(self.payload),
            "radar": np.iscomplexobj(self.payload),
        }[self.modality]
        if not kind_ok:
            raise InputError(f"{self.source_name}: payload of shape {self.payload.shape} "
                             f"({self.payload.dtype}) does not fit modality {self.modality}")

    @property
    def label_index(self) -> int:
        return CLASS_NAMES.index(self.label)


def read_manifest(path) -> Dict[str, str]:
    """Parse ``name<TAB>label`` lines; blank lines and ``#`` comments are skipped."""
    mapping: Dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(f"cannot read manifest {path}: {e}") from e
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise FormatError(f"{path}:{lineno}: expected 'name<TAB>label'")
        name, label = parts[0].strip(), parts[1].strip().lower()
        if label not in CLASS_NAMES:
            raise LabelingError(f"{path}:{lineno}: unknown label {label!r}")
        mapping[name] = label
    return mapping


def write_manifest(path, mapping: Dict[str, str]) -> None:
    lines = [f"{name}\t{label}" for name, label in mapping.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def label_from_filename(name: str, manifest: Optional[Dict[str, str]] = None) -> str:
    """Class keyword scan of a file name, falling back to the manifest.

    Manifest keys match either the whole file name, its stem, or (case
    insensitively) any substring of the name, e.g. ``mavik -> drone``.
    """
    if not name:
        raise LabelingError("empty file name")
    base = Path(name).name
    upper = base.upper()
    hits = {c for c in CLASS_NAMES if c.upper() in upper}
    if len(hits) == 1:
        return hits.pop()
    if len(hits) > 1:
        raise LabelingError(f"{base}: ambiguous class keywords {sorted(hits)}")
    if manifest:
        stem = Path(base).stem
        for key in (base, stem):
            if key in manifest:
                return manifest[key]
        lower = base.lower()
        found = {label for key, label in manifest.items() if key and key.lower() in lower}
        if len(found) == 1:
            return found.pop()
        if len(found) > 1:
            raise LabelingError(f"{base}: manifest keywords disagree {sorted(found)}")
    raise LabelingError(f"{base}: no class keyword in the name and no manifest entry")


def load_wav(path, label: Optional[str] = None, manifest=None) -> RawRecord:
    """Read 16- or 32-bit PCM into floats in [-1, 1], shape (frames, channels)."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            width = wf.getsampwidth()
            channels = wf.getnchannels()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except wave.Error as e:
        raise FormatError(f"{path.name}: not a PCM WAV file ({e})") from e
    except EOFError as e:
        raise FormatError(f"{path.name}: truncated WAV header") from e
    except OSError as e:
        raise ArtifactIOError(f"cannot read {path}: {e}") from e
    if width not in (2, 4):
        raise FormatError(f"{path.name}: unsupported sample width {8 * width} bits")
    ints = np.frombuffer(raw, dtype="<i2" if width == 2 else "<i4")
    if ints.size % channels:
        raise FormatError(f"{path.name}: sample data not a whole number of frames")
    samples = ints.astype(np.float64) / float(2 ** (8 * width - 1))
    samples = samples.reshape(-1, channels).astype(np.float32)
    label = label or label_from_filename(path.name, manifest)
    return RawRecord("audio", label, samples, path.name, sample_rate=float(rate), meta={"bits": 8 * width})


def write_wav(path, samples, sample_rate: int, bits: int = 16) -> None:
    """Write float samples in [-1, 1] (shape (frames,) or (frames, channels)) as PCM."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, None]
    scale = 2 ** (bits - 1)
    ints = np.clip(np.round(samples * scale), -scale, scale - 1)
    ints = ints.astype("<i2" if bits == 16 else "<i4")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(samples.shape[1])
        wf.setsampwidth(bits // 8)
        wf.setframerate(int(sample_rate))
        wf.writeframes(ints.tobytes())


def load_container(path, modality: str, label: Optional[str] = None, manifest=None) -> RawRecord:
    """Video stacks are (frames, H, W, 3) float32 in [0, 1]; radar is complex64."""
    path = Path(path)
    arr = container.read(path)
    if modality == "radar":
        if not np.iscomplexobj(arr):
            raise FormatError(f"{path.name}: radar container must hold complex data")
    elif modality in ("video_ir", "video_rgb"):
        if np.iscomplexobj(arr) or arr.ndim != 4 or arr.shape[-1] != 3:
            raise FormatError(f"{path.name}: video container must be real (frames, H, W, 3), got {arr.shape}")
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise FormatError(f"{path.name}: video pixel values must lie in [0, 1]")
    else:
        raise FormatError(f"{path.name}: containers are not used for modality {modality}")
    label = label or label_from_filename(path.name, manifest)
    return RawRecord(modality, label, arr, path.name)


def _manifest_for(root: Path, modality_dir: Path) -> Dict[str, str]:
    mapping: Dict[str, str] = {}
    for candidate in (root / MANIFEST_NAME, modality_dir / MANIFEST_NAME):
        if candidate.is_file():
            mapping.update(read_manifest(candidate))
    return mapping


def load_modality(root, modality: str) -> List[RawRecord]:
    """Load every file of one modality directory in sorted filename order."""
    root = Path(root)
    mdir = root / modality
    if not mdir.is_dir():
        raise PipelineError(f"modality directory missing: {modality}")
    manifest = _manifest_for(root, mdir)
    suffix = ".wav" if modality == "audio" else CONTAINER_SUFFIX
    files = sorted(p for p in mdir.iterdir() if p.suffix.lower() == suffix)
    if not files:
        raise PipelineError(f"no {suffix} files for modality {modality} in {mdir}")
    if modality == "audio":
        return [load_wav(p, manifest=manifest) for p in files]
    return [load_container(p, modality, manifest=manifest) for p in files]

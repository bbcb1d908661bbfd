"""The full loading -> replication -> features -> z-score -> fusion -> split pipeline."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

from .. import CLASS_NAMES, MODALITIES
from ..errors import ArtifactIOError, FormatError, PipelineError
from ..features import audio_features, radar_features, standardize_sequence, video_features
from ..stats import ReplicationReport, replication_report
from ..tensorkit import container
from .io import RawRecord, load_modality
from .transforms import (
    Dataset,
    NormalizationStats,
    SplitSpec,
    cyclic_replicate,
    frame_rate_reduce,
    fuse,
    per_label_cap,
    stratified_split,
    zscore_fit_apply,
)

SPLIT_NAMES = ("train", "val", "test")


def extract_features(rec: RawRecord) -> np.ndarray:
    """Raw record -> (1000, 128) float32 matrix, before normalization."""
    if rec.modality == "audio":
        seq = audio_features(rec.payload, rec.sample_rate or 44100.0)
    elif rec.modality == "radar":
        seq = radar_features(rec.payload)
    else:
        seq = video_features(rec.payload)
    return standardize_sequence(seq)


def prepare_records(records: Dict[str, List[RawRecord]], video_cap: int = 10) -> Dict[str, List[RawRecord]]:
    """Apply the per-label video cap and the 2:1 frame-rate reduction."""
    out = {}
    for mod in MODALITIES:
        recs = records.get(mod, [])
        if not recs:
            raise PipelineError(f"no records for modality {mod}")
        if mod.startswith("video"):
            recs = per_label_cap(recs, video_cap)
            recs = [RawRecord(r.modality, r.label, frame_rate_reduce(r.payload), r.source_name, r.sample_rate, r.meta)
                    for r in recs]
        out[mod] = list(recs)
    return out


@dataclass
class PreprocessResult:
    dataset: Dataset
    splits: tuple
    stats: Dict[str, NormalizationStats]
    report: ReplicationReport
    counts: Dict[str, tuple] = field(default_factory=dict)


def run_pipeline(records: Dict[str, List[RawRecord]], target: int = 200, split: SplitSpec = SplitSpec(),
                 video_cap: int = 10, bins: int = 100) -> PreprocessResult:
    """Run every stage on in-memory records (already loaded)."""
    prepared = prepare_records(records, video_cap)
    modality_sets = []
    stats: Dict[str, NormalizationStats] = {}
    originals, replicated_streams, processed_streams, counts = {}, {}, {}, {}
    for mod in MODALITIES:
        recs = prepared[mod]
        reps = cyclic_replicate(recs, target)
        # features are a pure function of the record; compute once per original
        feats = [extract_features(r) for r in recs]
        rep_feats = np.stack([feats[i % len(recs)] for i in range(target)])
        normed, st = zscore_fit_apply(rep_feats, mod)
        stats[mod] = st
        labels = np.array([r.label_index for r in reps], dtype=np.int64)
        modality_sets.append((normed, labels))
        originals[mod] = (lambda rs=recs: (r.payload for r in rs))
        replicated_streams[mod] = (lambda rs=reps: (r.payload for r in rs))
        processed_streams[mod] = (lambda f=rep_feats: iter([f]))
        counts[mod] = (len(recs), target)
    report = replication_report(originals, replicated_streams, processed_streams, counts, bins)
    dataset = fuse(modality_sets, CLASS_NAMES)
    splits = stratified_split(dataset, split)
    return PreprocessResult(dataset, splits, stats, report, counts)


def load_records(in_dir) -> Dict[str, List[RawRecord]]:
    return {mod: load_modality(in_dir, mod) for mod in MODALITIES}


def write_outputs(result: PreprocessResult, out_dir) -> Path:
    """Per split: ``<split>.skyf`` (N,1000,128) and ``<split>_labels.txt``; plus
    ``classes.txt``, ``normalization.json`` and the replication report."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, ds in zip(SPLIT_NAMES, result.splits):
            container.write(out / f"{name}.skyf", ds.x)
            (out / f"{name}_labels.txt").write_text("".join(f"{int(v)}\n" for v in ds.y), encoding="utf-8")
        (out / "classes.txt").write_text("\n".join(result.dataset.class_names) + "\n", encoding="utf-8")
        (out / "normalization.json").write_text(
            json.dumps({m: asdict(s) for m, s in result.stats.items()}, indent=2, sort_keys=True) + "\n",
            encoding="utf-8")
        result.report.save(out / "replication_report.ini")
        (out / "replication_report.tsv").write_text(result.report.to_table(), encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(f"cannot write preprocessing outputs to {out}: {e}") from e
    return out


def read_classes(path) -> tuple:
    try:
        names = Path(path).read_text(encoding="utf-8").split()
    except OSError as e:
        raise ArtifactIOError(f"cannot read {path}: {e}; run `skyfuse preprocess` first") from e
    return tuple(names)


def load_split(data_dir, name: str) -> Dataset:
    """Read one split written by :func:`write_outputs`."""
    d = Path(data_dir)
    xp, yp = d / f"{name}.skyf", d / f"{name}_labels.txt"
    if not xp.is_file() or not yp.is_file():
        raise ArtifactIOError(f"missing split '{name}' in {d}; run `skyfuse preprocess` first")
    x = container.read(xp)
    try:
        y = np.array([int(v) for v in yp.read_text(encoding="utf-8").split()], dtype=np.int64)
    except ValueError as e:
        raise FormatError(f"{yp}: labels must be integers") from e
    classes = read_classes(d / "classes.txt")
    return Dataset(x, y, classes)

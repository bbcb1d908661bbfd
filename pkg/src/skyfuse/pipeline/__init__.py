"""Raw data loading, replication, normalization, fusion and splitting."""
from .io import RawRecord, label_from_filename, load_container, load_modality, load_wav, read_manifest, write_wav
from .transforms import (
    Dataset,
    NormalizationStats,
    SplitSpec,
    allocate,
    cyclic_replicate,
    frame_rate_reduce,
    fuse,
    largest_remainder,
    per_label_cap,
    stratified_split,
    stratified_split_indices,
    zscore_apply,
    zscore_fit_apply,
)
from .synth import synth_dataset, write_dataset
from .preprocess import SPLIT_NAMES, PreprocessResult, extract_features, load_records, load_split, run_pipeline, write_outputs

from .dataset import PreparedDataset
from .folds import stratified_kfold, stratified_split, stratified_subsample
from .kdd import (
    KddFormatError,
    KddSchema,
    PreprocessSpec,
    RawRecord,
    apply_preprocess,
    count_report,
    filter_labels,
    fit_preprocess,
    parse_kdd_csv,
)
from .store import load_dataset, save_dataset
from .synth import LINEAR_SANITY, PLANT_SYNTH, SynthSpec, SynthTruth, synth_generate

__all__ = [
    "PreparedDataset",
    "stratified_kfold",
    "stratified_split",
    "stratified_subsample",
    "KddFormatError",
    "KddSchema",
    "PreprocessSpec",
    "RawRecord",
    "apply_preprocess",
    "count_report",
    "filter_labels",
    "fit_preprocess",
    "parse_kdd_csv",
    "load_dataset",
    "save_dataset",
    "LINEAR_SANITY",
    "PLANT_SYNTH",
    "SynthSpec",
    "SynthTruth",
    "synth_generate",
]

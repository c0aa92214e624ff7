from bmdfusion.data.augment import augment, expand_training_set
from bmdfusion.data.folds import FoldPlan, bin_index, stratified_folds
from bmdfusion.data.manifest import (
    DatasetLoader,
    DatasetManifest,
    DirectoryLoader,
    SampleRecord,
    load_manifest,
    save_manifest,
    summarize_manifest,
)
from bmdfusion.data.preprocess import ScalerParams, fit_scaler, preprocess_metadata, transform_metadata
from bmdfusion.data.synthetic import generate_synthetic

__all__ = [
    "DatasetLoader", "DatasetManifest", "DirectoryLoader", "FoldPlan", "SampleRecord",
    "ScalerParams", "augment", "bin_index", "expand_training_set", "fit_scaler",
    "generate_synthetic", "load_manifest", "preprocess_metadata", "save_manifest",
    "stratified_folds", "summarize_manifest", "transform_metadata",
]

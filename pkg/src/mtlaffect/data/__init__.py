"""Dataset formats, loading, fold splitting, batching and synthetic data."""
from .batching import Batch, make_batches
from .dataset import Dataset, VideoData, load_dataset
from .folds import Fold, FoldAssignment, split_folds
from .formats import (AU_NAMES, DatasetManifest, LabelTable, ManifestEntry, read_features, read_labels,
                      read_manifest, write_features, write_labels, write_manifest)
from .synth import SynthSpec, synth_generate, synth_videos

__all__ = [
    "AU_NAMES", "Batch", "Dataset", "DatasetManifest", "Fold", "FoldAssignment", "LabelTable",
    "ManifestEntry", "SynthSpec", "VideoData", "load_dataset", "make_batches", "read_features",
    "read_labels", "read_manifest", "split_folds", "synth_generate", "synth_videos",
    "write_features", "write_labels", "write_manifest",
]

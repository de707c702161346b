from dcaps.data.experiments import ExperimentSplit, build_experiment
from dcaps.data.manifest import (
    Device,
    Focus,
    Label,
    Light,
    Manifest,
    SampleRecord,
    load_manifest,
    write_manifest,
)
from dcaps.data.preprocess import load_images, preprocess
from dcaps.data.toy import generate_toy_dataset, write_toy_dataset

__all__ = [
    "Device",
    "ExperimentSplit",
    "Focus",
    "Label",
    "Light",
    "Manifest",
    "SampleRecord",
    "build_experiment",
    "generate_toy_dataset",
    "load_images",
    "load_manifest",
    "preprocess",
    "write_manifest",
    "write_toy_dataset",
]

"""
Synthetic multi-annotator data: shapes and MNIST-style ground truth, the five
annotator archetypes and the morphology that drives them.
"""

from simulation.annotators import apply_profile
from simulation.dataset import Dataset, LabelRegime, build_reference_cms, load_dataset, save_dataset, simulate_dataset
from simulation.idx_reader import load_idx
from simulation.morphology import MorphKind, morph_op
from simulation.profiles import AnnotatorKind, AnnotatorProfile, default_profiles, scale_profiles
from simulation.shapes import synth_shapes

__all__ = [
    "AnnotatorKind",
    "AnnotatorProfile",
    "Dataset",
    "LabelRegime",
    "MorphKind",
    "apply_profile",
    "build_reference_cms",
    "default_profiles",
    "load_dataset",
    "load_idx",
    "morph_op",
    "save_dataset",
    "scale_profiles",
    "simulate_dataset",
    "synth_shapes",
]

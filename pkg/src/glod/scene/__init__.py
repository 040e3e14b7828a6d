"""Scene files, the template test set and the alignment/infection metrics."""

from glod.scene.format import (
    GlobalSpec,
    LocalSpec,
    Scene,
    dumps,
    load_scene,
    loads,
    save_scene,
)
from glod.scene.metrics import (
    PaletteOracle,
    Scores,
    SimilarityOracle,
    alignment_scores,
    crop,
    infection_score,
    metrics_csv,
    score_case,
)
from glod.scene.run import METHODS, config_for
from glod.scene.testset import (
    OBJECT_BOX,
    SUBJECT_BOX,
    Template,
    TestCase,
    ToyWorld,
    generate_testset,
    make_case,
)

__all__ = [
    "METHODS",
    "OBJECT_BOX",
    "SUBJECT_BOX",
    "GlobalSpec",
    "LocalSpec",
    "PaletteOracle",
    "Scene",
    "Scores",
    "SimilarityOracle",
    "Template",
    "TestCase",
    "ToyWorld",
    "alignment_scores",
    "config_for",
    "crop",
    "dumps",
    "generate_testset",
    "infection_score",
    "load_scene",
    "loads",
    "make_case",
    "metrics_csv",
    "save_scene",
    "score_case",
]
